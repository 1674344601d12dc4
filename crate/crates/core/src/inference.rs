//! Confidence intervals for the identified set.
//!
//! Both one-sided bounds are built at level `(1 + alpha) / 2` so that their
//! intersection covers the identified set with probability at least `alpha`.
//! The upper bound uses a plain bootstrap of `sqrt(var_y)`. The lower bound is
//! a max over three estimated bounding functions, so it gets the
//! intersection-bounds treatment: a bootstrap covariance of the components,
//! simulated critical values for the max of correlated normals and an
//! adaptive pre-selection of the components that can plausibly bind.
//!
//! All randomness is drawn from counter-derived streams (see [`crate::rng`]),
//! so results are bit-identical for any rayon pool size.

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{moment_summary, residualize, DivisorPolicy, MomentSummary, Sample};
use crate::rng::{derive_seed, stream, tag, StreamRng};
use crate::Regime;

/// Largest tolerated share of bootstrap replicates that fail to estimate.
pub const MAX_FAILED_SHARE: f64 = 0.10;

/// Normal draws generated per RNG stream.
const DRAWS_PER_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub alpha: f64,
    /// Bootstrap replications `B`.
    pub bootstrap: usize,
    /// Standard-normal draws `R` for the lower-bound critical values.
    pub draws: usize,
    pub seed: u64,
    pub cluster_bootstrap: bool,
    pub truncate_at_zero: bool,
    pub regime: Regime,
    pub divisor: DivisorPolicy,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            alpha: 0.90,
            bootstrap: 1000,
            draws: 10_000,
            seed: 0,
            cluster_bootstrap: false,
            truncate_at_zero: false,
            regime: Regime::Baseline,
            divisor: DivisorPolicy::NMinus1,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.5 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0.5, 1), got {}",
                self.alpha
            )));
        }
        if self.bootstrap < 100 {
            return Err(Error::InvalidConfig(format!(
                "need at least 100 bootstrap replications, got {}",
                self.bootstrap
            )));
        }
        if self.draws < 1000 {
            return Err(Error::InvalidConfig(format!(
                "need at least 1000 normal draws, got {}",
                self.draws
            )));
        }
        Ok(())
    }

    /// Level of each one-sided bound.
    pub fn one_sided_level(&self) -> f64 {
        (1.0 + self.alpha) / 2.0
    }
}

/// Order-statistic quantile: the `ceil(p * len)`-th smallest value.
///
/// A `1e-9` slack absorbs products such as `0.95 * 500` landing just above an
/// integer.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p * v.len() as f64 - 1e-9).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// Estimated bounding functions and upper bound from one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub moments: MomentSummary,
    /// `(l1, l2, l3)`; `l1` is NaN when `cov_z1z2 <= -1`.
    pub l: [f64; 3],
    pub ub: f64,
}

impl PointEstimate {
    pub fn lb(&self, regime: Regime) -> f64 {
        active_components(regime)
            .iter()
            .map(|&k| self.l[k])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Residualizes, summarizes and evaluates the bounding functions.
pub fn estimate(s: &Sample, policy: DivisorPolicy) -> Result<PointEstimate> {
    let m = moment_summary(&residualize(s)?, policy)?;
    let l1 = if m.cov_z1z2 > -1.0 {
        (m.cov_z1y + m.cov_z2y) / (1.0 + m.cov_z1z2)
    } else {
        f64::NAN
    };
    Ok(PointEstimate {
        moments: m,
        l: [
            l1,
            2.0 * m.cov_z1y / (1.0 + m.var_z1),
            2.0 * m.cov_z2y / (1.0 + m.var_z2),
        ],
        ub: m.var_y.sqrt(),
    })
}

/// Zero-based indices of the components entering the lower bound.
fn active_components(regime: Regime) -> &'static [usize] {
    match regime {
        Regime::FreeCov => &[1, 2],
        Regime::Baseline | Regime::NoSign => &[0, 1, 2],
    }
}

/// Draws a bootstrap sample: rows with replacement, or whole clusters with
/// replacement until the original number of clusters is reached.
pub fn bootstrap_resample(s: &Sample, replicate_seed: u64, cluster_level: bool) -> Result<Sample> {
    let mut rng = StreamRng::seed_from_u64(replicate_seed);
    let n = s.n();
    if n == 0 {
        return Err(Error::DegenerateBootstrap("empty sample".into()));
    }
    if !cluster_level {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        return Ok(s.select_rows(&idx));
    }
    let labels = s.cluster().ok_or_else(|| {
        Error::InvalidConfig("cluster bootstrap requested without cluster labels".into())
    })?;
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &c) in labels.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::DegenerateBootstrap(format!(
            "cluster bootstrap needs at least 2 clusters, found {}",
            groups.len()
        )));
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let g = groups.len();
    let idx: Vec<usize> = (0..g)
        .flat_map(|_| groups[rng.random_range(0..g)].iter().copied())
        .collect();
    Ok(s.select_rows(&idx))
}

/// Symmetric PSD square root via eigendecomposition, with negative
/// eigenvalues clamped to zero.
pub fn psd_sqrt(a: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let scale = a.amax().max(1.0);
    if (a - a.transpose()).amax() > 1e-8 * scale {
        return Err(Error::Shape("matrix is not symmetric".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix3::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Sample covariance (divisor `len - 1`) of the 3-vectors in `rows`.
pub fn covariance3(rows: &[[f64; 3]]) -> Matrix3<f64> {
    let b = rows.len() as f64;
    // shifted by the first row for stability
    let origin = rows[0];
    let mut mean = [0.0; 3];
    for r in rows {
        for k in 0..3 {
            mean[k] += r[k] - origin[k];
        }
    }
    let mean = mean.map(|v| v / b);
    let mut out = Matrix3::zeros();
    for r in rows {
        let d: [f64; 3] = std::array::from_fn(|k| r[k] - origin[k] - mean[k]);
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] += d[i] * d[j];
            }
        }
    }
    out / (b - 1.0)
}

/// `R` independent standard-normal 3-vectors.
pub fn standard_normal_draws(seed: u64, count: usize) -> Vec<[f64; 3]> {
    let chunks = count.div_ceil(DRAWS_PER_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let len = DRAWS_PER_CHUNK.min(count - c * DRAWS_PER_CHUNK);
            let mut rng = stream(seed, tag::CLR_NORMALS, c as u64);
            (0..len)
                .map(|_| {
                    [
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    ]
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Every intermediate of the lower confidence bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerCBDetail {
    pub l_hat: [f64; 3],
    pub omega_hat: [[f64; 3]; 3],
    pub s_hat: [f64; 3],
    pub c_n: f64,
    pub kappa: f64,
    /// One-based indices of the retained components.
    pub selected_set: Vec<usize>,
    pub kappa_hat: f64,
    pub c_lb: f64,
    /// One-based indices of the components entering the max.
    pub active_set: Vec<usize>,
}

/// Lower confidence bound at `level` from point estimates, bootstrap
/// replicates of the components and standard-normal draws.
pub fn clr_lower_bound(
    l_hat: [f64; 3],
    replicates: &[[f64; 3]],
    n: usize,
    level: f64,
    regime: Regime,
    normals: &[[f64; 3]],
) -> Result<LowerCBDetail> {
    if n < 3 {
        return Err(Error::InsufficientData { n, required: 3 });
    }
    if replicates.len() < 2 || normals.is_empty() {
        return Err(Error::Inference(
            "too few replicates or normal draws".into(),
        ));
    }
    let active = active_components(regime);
    let nf = n as f64;

    // Covariance of sqrt(N) * l*_b over the active components.
    let cov = covariance3(replicates);
    let mut omega = Matrix3::zeros();
    for &i in active {
        for &j in active {
            omega[(i, j)] = nf * cov[(i, j)];
        }
    }
    if omega.iter().any(|v| !v.is_finite()) {
        return Err(Error::Inference(
            "bootstrap covariance is not finite".into(),
        ));
    }
    let root = psd_sqrt(&omega)?;
    let norms: [f64; 3] = std::array::from_fn(|k| root.row(k).norm());
    let s_hat: [f64; 3] = std::array::from_fn(|k| norms[k] / nf.sqrt());

    // Z*_r(k) = g_k' Z_r / ||g_k||, zero for noiseless components.
    let standardized: Vec<[f64; 3]> = normals
        .iter()
        .map(|z| {
            std::array::from_fn(|k| {
                if norms[k] > 0.0 {
                    (0..3).map(|j| root[(k, j)] * z[j]).sum::<f64>() / norms[k]
                } else {
                    0.0
                }
            })
        })
        .collect();
    let max_over = |set: &[usize]| -> Vec<f64> {
        standardized
            .iter()
            .map(|z| set.iter().map(|&k| z[k]).fold(f64::NEG_INFINITY, f64::max))
            .collect()
    };

    let c_n = 1.0 - 0.1 / nf.ln();
    let kappa = quantile(&max_over(active), c_n);

    let anchor = active
        .iter()
        .map(|&k| l_hat[k] - kappa * s_hat[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut selected: Vec<usize> = active
        .iter()
        .copied()
        .filter(|&k| l_hat[k] >= anchor - 2.0 * kappa * s_hat[k])
        .collect();
    if selected.is_empty() {
        // Only reachable with a negative kappa.
        let best = active
            .iter()
            .copied()
            .max_by(|&a, &b| {
                (l_hat[a] - kappa * s_hat[a]).total_cmp(&(l_hat[b] - kappa * s_hat[b]))
            })
            .expect("active set is nonempty");
        selected.push(best);
    }
    let kappa_hat = quantile(&max_over(&selected), level);
    let c_lb = active
        .iter()
        .map(|&k| l_hat[k] - kappa_hat * s_hat[k])
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(LowerCBDetail {
        l_hat,
        omega_hat: std::array::from_fn(|i| std::array::from_fn(|j| omega[(i, j)])),
        s_hat,
        c_n,
        kappa,
        selected_set: selected.iter().map(|k| k + 1).collect(),
        kappa_hat,
        c_lb,
        active_set: active.iter().map(|k| k + 1).collect(),
    })
}

/// Upper confidence bound at `level` from the point estimate and bootstrap
/// replicates of `sqrt(var_y)`.
pub fn upper_from_replicates(ub_hat: f64, replicates: &[f64], level: f64) -> f64 {
    let dev: Vec<f64> = replicates.iter().map(|u| (u - ub_hat).abs()).collect();
    ub_hat + quantile(&dev, level)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub alpha: f64,
    pub c_lb: f64,
    pub c_ub: f64,
    /// Lower bound before truncation at zero.
    pub raw_c_lb: f64,
    pub detail: LowerCBDetail,
    pub ub_hat: f64,
    pub lb_hat: f64,
    pub crossed: bool,
    /// Set when the negative-sign branch ran on the flipped outcome; `detail`
    /// is then expressed for the flipped problem.
    pub outcome_negated: bool,
    pub dropped_replicates: usize,
}

impl ConfidenceInterval {
    pub fn covers(&self, lower: f64, upper: f64) -> bool {
        self.c_lb <= lower && upper <= self.c_ub
    }
}

/// Point estimate plus bootstrap replicates, shared by every confidence level.
#[derive(Debug, Clone)]
pub struct BootstrapRun {
    pub point: PointEstimate,
    /// Regime used inside the procedure (the no-sign regime runs as baseline
    /// on a possibly flipped outcome).
    working_regime: Regime,
    negated: bool,
    l_reps: Vec<[f64; 3]>,
    ub_reps: Vec<f64>,
    normals: Vec<[f64; 3]>,
    pub dropped: usize,
    n: usize,
}

impl BootstrapRun {
    pub fn new(s: &Sample, cfg: &InferenceConfig) -> Result<Self> {
        let original = estimate(s, cfg.divisor)?;
        let (sample, negated, working_regime) = match cfg.regime {
            Regime::NoSign => {
                if original.l.iter().all(|&l| l > 0.0) {
                    (None, false, Regime::Baseline)
                } else if original.l.iter().all(|&l| l < 0.0) {
                    (Some(s.negate_outcome()), true, Regime::Baseline)
                } else {
                    return Err(Error::SignViolation {
                        components: original.l,
                    });
                }
            }
            r => (None, false, r),
        };
        let work = sample.as_ref().unwrap_or(s);
        let point = if negated {
            estimate(work, cfg.divisor)?
        } else {
            original
        };
        let active = active_components(working_regime);

        let outcomes: Vec<Result<([f64; 3], f64)>> = (0..cfg.bootstrap as u64)
            .into_par_iter()
            .map(|b| {
                let rs = bootstrap_resample(
                    work,
                    derive_seed(cfg.seed, tag::BOOTSTRAP, b),
                    cfg.cluster_bootstrap,
                )?;
                let e = estimate(&rs, cfg.divisor)?;
                if active.iter().any(|&k| !e.l[k].is_finite()) || !e.ub.is_finite() {
                    return Err(Error::Inference("non-finite replicate".into()));
                }
                Ok((e.l, e.ub))
            })
            .collect();

        let mut l_reps = Vec::with_capacity(outcomes.len());
        let mut ub_reps = Vec::with_capacity(outcomes.len());
        let mut dropped = 0;
        let mut first_err = None;
        for o in outcomes {
            match o {
                Ok((l, u)) => {
                    l_reps.push(l);
                    ub_reps.push(u);
                }
                Err(e @ (Error::DegenerateBootstrap(_) | Error::InvalidConfig(_))) => {
                    return Err(e)
                }
                Err(e) => {
                    dropped += 1;
                    first_err.get_or_insert(e);
                }
            }
        }
        if dropped > 0 {
            log::warn!(
                "dropped {dropped} of {} bootstrap replicates",
                cfg.bootstrap
            );
        }
        if dropped as f64 > MAX_FAILED_SHARE * cfg.bootstrap as f64 {
            return Err(Error::Inference(format!(
                "{dropped} of {} bootstrap replicates failed (first: {})",
                cfg.bootstrap,
                first_err.map(|e| e.to_string()).unwrap_or_default()
            )));
        }
        Ok(BootstrapRun {
            point,
            working_regime,
            negated,
            l_reps,
            ub_reps,
            normals: standard_normal_draws(cfg.seed, cfg.draws),
            dropped,
            n: s.n(),
        })
    }

    pub fn upper(&self, level: f64) -> f64 {
        upper_from_replicates(self.point.ub, &self.ub_reps, level)
    }

    pub fn lower(&self, level: f64) -> Result<LowerCBDetail> {
        clr_lower_bound(
            self.point.l,
            &self.l_reps,
            self.n,
            level,
            self.working_regime,
            &self.normals,
        )
    }

    /// Two-sided interval at `alpha`, with the other settings from `cfg`.
    pub fn interval(&self, alpha: f64, cfg: &InferenceConfig) -> Result<ConfidenceInterval> {
        InferenceConfig { alpha, ..*cfg }.validate()?;
        let level = (1.0 + alpha) / 2.0;
        let detail = self.lower(level)?;
        let c_ub = self.upper(level);
        let lb_hat = self.point.lb(self.working_regime);
        let ub_hat = self.point.ub;
        let (raw_c_lb, c_ub, lb_hat, ub_hat) = if self.negated {
            (-c_ub, -detail.c_lb, -ub_hat, -lb_hat)
        } else {
            (detail.c_lb, c_ub, lb_hat, ub_hat)
        };
        let c_lb = if cfg.truncate_at_zero && cfg.regime != Regime::NoSign {
            raw_c_lb.max(0.0)
        } else {
            raw_c_lb
        };
        Ok(ConfidenceInterval {
            alpha,
            c_lb,
            c_ub,
            raw_c_lb,
            detail,
            ub_hat,
            lb_hat,
            crossed: c_lb > c_ub,
            outcome_negated: self.negated,
            dropped_replicates: self.dropped,
        })
    }
}

/// Upper `(1 + alpha) / 2` confidence bound on `sqrt(var_y)`.
pub fn upper_confidence_bound(s: &Sample, cfg: &InferenceConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(BootstrapRun::new(s, cfg)?.upper(cfg.one_sided_level()))
}

/// Lower `(1 + alpha) / 2` confidence bound with all intermediates.
pub fn lower_confidence_bound(s: &Sample, cfg: &InferenceConfig) -> Result<LowerCBDetail> {
    cfg.validate()?;
    BootstrapRun::new(s, cfg)?.lower(cfg.one_sided_level())
}

/// Bonferroni combination of the two one-sided bounds.
pub fn confidence_interval(s: &Sample, cfg: &InferenceConfig) -> Result<ConfidenceInterval> {
    cfg.validate()?;
    BootstrapRun::new(s, cfg)?.interval(cfg.alpha, cfg)
}

/// Intervals at several levels sharing one bootstrap run.
pub fn confidence_intervals(
    s: &Sample,
    cfg: &InferenceConfig,
    alphas: &[f64],
) -> Result<Vec<ConfidenceInterval>> {
    cfg.validate()?;
    let run = BootstrapRun::new(s, cfg)?;
    alphas.iter().map(|&a| run.interval(a, cfg)).collect()
}
