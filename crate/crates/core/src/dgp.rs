//! Latent-variable data-generating processes.
//!
//! A [`LatentSpec`] fixes the slope and every second moment of
//! `(X*, eps, U1, U2)` under the normalizations `Var(X*) = 1` and
//! `Cov(X*, eps) = Cov(U1, eps) = Cov(U2, eps) = 0`. From it we get the
//! population observables ([`latent_to_observable_moments`]), seeded jointly
//! normal samples ([`sample_dgp`]) and, in the other direction, the spec that
//! realizes a given slope inside the identified set ([`sharpness_spec`]).

use nalgebra::{DMatrix, Matrix3, Matrix4, SymmetricEigen, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{identify_baseline, invert_at, invert_at_zero};
use crate::error::{Error, Result};
use crate::moments::{check_data_assumptions, MomentSummary, Sample};
use crate::rng::{stream, tag};
use crate::Regime;

/// Loading applied to every covariate in the outcome, the latent regressor
/// and both proxies when [`sample_dgp`] adds a covariate layer.
pub const COVARIATE_LOADING: f64 = 1.0;

/// Rows generated per RNG stream. Fixed so output is independent of the
/// number of worker threads.
const ROWS_PER_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSpec {
    pub beta: f64,
    #[serde(default)]
    pub mean_u1: f64,
    #[serde(default)]
    pub mean_u2: f64,
    pub var_eps: f64,
    pub var_u1: f64,
    pub var_u2: f64,
    pub cov_x_u1: f64,
    pub cov_x_u2: f64,
    pub cov_u1_u2: f64,
}

impl LatentSpec {
    /// Covariance of `(X*, eps, U1, U2)`.
    pub fn covariance(&self) -> Matrix4<f64> {
        Matrix4::new(
            1.0,
            0.0,
            self.cov_x_u1,
            self.cov_x_u2, //
            0.0,
            self.var_eps,
            0.0,
            0.0, //
            self.cov_x_u1,
            0.0,
            self.var_u1,
            self.cov_u1_u2, //
            self.cov_x_u2,
            0.0,
            self.cov_u1_u2,
            self.var_u2,
        )
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.covariance())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    fn psd_tolerance(&self) -> f64 {
        1e-10 * self.covariance().amax().max(1.0)
    }

    pub fn is_psd(&self) -> bool {
        self.min_eigenvalue() >= -self.psd_tolerance()
    }

    /// `Cov(U1, U2) >= 0`.
    pub fn errors_nonneg_correlated(&self) -> bool {
        self.cov_u1_u2 >= 0.0
    }

    fn check_variances(&self) -> Result<()> {
        for (name, v) in [
            ("var_eps", self.var_eps),
            ("var_u1", self.var_u1),
            ("var_u2", self.var_u2),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidSpec(format!("{name} = {v} is negative")));
            }
        }
        let all = [
            self.beta,
            self.mean_u1,
            self.mean_u2,
            self.cov_x_u1,
            self.cov_x_u2,
            self.cov_u1_u2,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Reads the flat `key = value` config format.
    pub fn from_config_str(s: &str) -> Result<Self> {
        let spec: LatentSpec = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        spec.check_variances()?;
        Ok(spec)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("flat struct of floats always serializes")
    }
}

/// Population observables implied by a latent specification.
pub fn latent_to_observable_moments(spec: &LatentSpec) -> MomentSummary {
    let b = spec.beta;
    MomentSummary {
        mean_z1: spec.mean_u1,
        mean_z2: spec.mean_u2,
        var_y: b * b + spec.var_eps,
        var_z1: 1.0 + spec.var_u1 + 2.0 * spec.cov_x_u1,
        var_z2: 1.0 + spec.var_u2 + 2.0 * spec.cov_x_u2,
        cov_z1y: b * (1.0 + spec.cov_x_u1),
        cov_z2y: b * (1.0 + spec.cov_x_u2),
        cov_z1z2: 1.0 + spec.cov_x_u1 + spec.cov_x_u2 + spec.cov_u1_u2,
        n: 0,
        divisor_policy: Default::default(),
    }
}

/// Factor `F` with `F F' = cov`, valid for singular PSD covariances.
fn latent_factor(spec: &LatentSpec) -> Result<Matrix4<f64>> {
    let eig = SymmetricEigen::new(spec.covariance());
    let tol = spec.psd_tolerance();
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < -tol) {
        return Err(Error::NonPsdSpec { eigenvalue: bad });
    }
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix4::from_diagonal(&root))
}

/// `(y, z1, z2, covariate row)` of one generated observation.
type Row = (f64, f64, f64, Vec<f64>);

/// Draws `n` rows of `Y = beta X* + eps`, `Zk = X* + Uk` with
/// `(X*, eps, U1, U2)` jointly normal. With `covariates > 0`, independent
/// standard-normal covariates are added with loading [`COVARIATE_LOADING`]
/// to the latent regressor, the outcome and both proxies.
pub fn sample_dgp(spec: &LatentSpec, n: usize, seed: u64, covariates: usize) -> Result<Sample> {
    spec.check_variances()?;
    if n < covariates + 3 {
        return Err(Error::InsufficientData {
            n,
            required: covariates + 3,
        });
    }
    let factor = latent_factor(spec)?;
    let mean = Vector4::new(0.0, 0.0, spec.mean_u1, spec.mean_u2);
    let chunks = n.div_ceil(ROWS_PER_CHUNK);

    let rows: Vec<Vec<Row>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = ROWS_PER_CHUNK.min(n - c * ROWS_PER_CHUNK);
            let mut latent_rng = stream(seed, tag::DGP_ROWS, c as u64);
            let mut cov_rng = stream(seed, tag::DGP_COVARIATES, c as u64);
            (0..len)
                .map(|_| {
                    let z = Vector4::from_fn(|_, _| latent_rng.sample::<f64, _>(StandardNormal));
                    let v = mean + factor * z;
                    let w: Vec<f64> = (0..covariates)
                        .map(|_| cov_rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let shift = COVARIATE_LOADING * w.iter().sum::<f64>();
                    let x = v[0] + shift;
                    let y = spec.beta * x + v[1] + shift;
                    (y, x + v[2] + shift, x + v[3] + shift, w)
                })
                .collect()
        })
        .collect();

    let flat: Vec<_> = rows.into_iter().flatten().collect();
    let y = flat.iter().map(|r| r.0).collect();
    let z1 = flat.iter().map(|r| r.1).collect();
    let z2 = flat.iter().map(|r| r.2).collect();
    let w = DMatrix::from_fn(n, covariates + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            flat[i].3[j - 1]
        }
    });
    Sample::new(y, w, z1, z2, None)
}

/// `U1 = a1 + c1 X*` duplicated into both proxies, no outcome noise.
pub fn example1_spec(beta: f64, c1: f64, a1: f64) -> Result<LatentSpec> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!(
            "example 1 needs beta > 0, got {beta}"
        )));
    }
    if !(c1 > 0.0) {
        return Err(Error::Domain(format!("example 1 needs c1 > 0, got {c1}")));
    }
    Ok(LatentSpec {
        beta,
        mean_u1: a1,
        mean_u2: a1,
        var_eps: 0.0,
        var_u1: c1 * c1,
        var_u2: c1 * c1,
        cov_x_u1: c1,
        cov_x_u2: c1,
        cov_u1_u2: c1 * c1,
    })
}

/// Unit slope at the upper bound, with an error moderately negatively
/// correlated with the latent regressor so that the reduced form overshoots.
pub fn example2_spec(var_u1: f64, cov_x_u1: f64) -> Result<LatentSpec> {
    if !(var_u1 > 0.0 && var_u1 < 1.0) {
        return Err(Error::Domain(format!(
            "example 2 needs var_u1 in (0, 1), got {var_u1}"
        )));
    }
    let lo = -(1.0 + var_u1) / 2.0;
    if !(cov_x_u1 > lo && cov_x_u1 < -var_u1) {
        return Err(Error::Domain(format!(
            "example 2 needs cov_x_u1 in ({lo}, {}), got {cov_x_u1}",
            -var_u1
        )));
    }
    Ok(LatentSpec {
        beta: 1.0,
        mean_u1: 0.0,
        mean_u2: 0.0,
        var_eps: 0.0,
        var_u1,
        var_u2: var_u1,
        cov_x_u1,
        cov_x_u2: cov_x_u1,
        cov_u1_u2: var_u1,
    })
}

/// Individually classical errors with `Var(U1) = 1`.
pub fn example3_spec(var_u2: f64, cov_u1_u2: f64) -> Result<LatentSpec> {
    if !(var_u2 > 1.0) {
        return Err(Error::Domain(format!(
            "example 3 needs var_u2 > 1, got {var_u2}"
        )));
    }
    if !(var_u2 >= (3.0 * cov_u1_u2 - 1.0) / 2.0) {
        return Err(Error::Domain(format!(
            "example 3 needs var_u2 >= (3 cov_u1_u2 - 1) / 2 = {}",
            (3.0 * cov_u1_u2 - 1.0) / 2.0
        )));
    }
    Ok(LatentSpec {
        beta: 1.0,
        mean_u1: 0.0,
        mean_u2: 0.0,
        var_eps: 0.0,
        var_u1: 1.0,
        var_u2,
        cov_x_u1: 0.0,
        cov_x_u2: 0.0,
        cov_u1_u2,
    })
}

/// Relative slack in matching `beta_tilde` against the set endpoints.
const SET_TOL: f64 = 1e-12;

/// The latent spec that reproduces `m` exactly with slope `beta_tilde`.
///
/// Fails with [`Error::OutOfSet`] when `beta_tilde` lies outside the baseline
/// identified set, in which case some implied variance or the implied error
/// covariance is negative.
pub fn sharpness_spec(m: &MomentSummary, beta_tilde: f64) -> Result<LatentSpec> {
    let set = identify_baseline(m)?;
    let tol = SET_TOL * set.upper.abs().max(1.0);
    let inside = !set.is_empty() && beta_tilde >= set.lower - tol && beta_tilde <= set.upper + tol;
    let mut spec = if beta_tilde == 0.0 {
        invert_at_zero(m)
    } else {
        invert_at(m, beta_tilde)
    };
    if !inside {
        let mut negatives = Vec::new();
        for (name, v) in [
            ("var_eps", spec.var_eps),
            ("var_u1", spec.var_u1),
            ("var_u2", spec.var_u2),
            ("cov_u1_u2", spec.cov_u1_u2),
        ] {
            if v < 0.0 {
                negatives.push(format!("{name} = {v}"));
            }
        }
        if beta_tilde == 0.0 && (m.cov_z1y != 0.0 || m.cov_z2y != 0.0) {
            negatives.push("nonzero reduced forms at zero slope".into());
        }
        return Err(Error::OutOfSet {
            beta: beta_tilde,
            reason: if negatives.is_empty() {
                format!("outside [{}, {}]", set.lower, set.upper)
            } else {
                negatives.join(", ")
            },
        });
    }
    // endpoint rounding
    for v in [
        &mut spec.var_eps,
        &mut spec.var_u1,
        &mut spec.var_u2,
        &mut spec.cov_u1_u2,
    ] {
        if *v < 0.0 && *v > -tol * 8.0 {
            *v = 0.0;
        }
    }
    Ok(spec)
}

/// Rejection-samples a spec satisfying the baseline assumptions with a PSD
/// latent covariance.
pub fn random_valid_spec<R: Rng>(rng: &mut R) -> LatentSpec {
    loop {
        let spec = LatentSpec {
            beta: rng.random_range(0.0..2.0),
            mean_u1: 0.0,
            mean_u2: 0.0,
            var_eps: rng.random_range(0.05..2.0),
            var_u1: rng.random_range(0.0..2.0),
            var_u2: rng.random_range(0.0..2.0),
            cov_x_u1: rng.random_range(-1.0..1.0),
            cov_x_u2: rng.random_range(-1.0..1.0),
            cov_u1_u2: rng.random_range(0.0..1.5),
        };
        let m = latent_to_observable_moments(&spec);
        if spec.is_psd() && check_data_assumptions(&m, Regime::Baseline).overall {
            return spec;
        }
    }
}

/// Sample of `(y, z1, z2)` whose `n - 1` divisor covariance equals `target`
/// (ordered `y, z1, z2`) up to rounding, with zero means and no covariates.
pub fn exact_moment_sample(target: &MomentSummary, n: usize, seed: u64) -> Result<Sample> {
    if n < 4 {
        return Err(Error::InsufficientData { n, required: 4 });
    }
    let t = Matrix3::new(
        target.var_y,
        target.cov_z1y,
        target.cov_z2y, //
        target.cov_z1y,
        target.var_z1,
        target.cov_z1z2, //
        target.cov_z2y,
        target.cov_z1z2,
        target.var_z2,
    );
    let lt = t
        .cholesky()
        .ok_or_else(|| Error::InvalidSpec("target covariance is not positive definite".into()))?
        .l();
    let mut rng = stream(seed, tag::DGP_ROWS, 0);
    let mut x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut col in x.column_iter_mut() {
        let mu = col.mean();
        col.add_scalar_mut(-mu);
    }
    let s: Matrix3<f64> =
        Matrix3::from_iterator((x.transpose() * &x / (n - 1) as f64).iter().copied());
    let ls = s
        .cholesky()
        .ok_or_else(|| Error::InvalidSpec("degenerate draws".into()))?
        .l();
    let ls_inv_t = ls
        .try_inverse()
        .ok_or_else(|| Error::InvalidSpec("degenerate draws".into()))?
        .transpose();
    let map = ls_inv_t * lt.transpose();
    let out = x * DMatrix::from_iterator(3, 3, map.iter().copied());
    let col = |j: usize| out.column(j).iter().copied().collect::<Vec<_>>();
    Sample::from_columns(col(0), &[], col(1), col(2), None)
}
