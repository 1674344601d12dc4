//! Population identification of the slope from the nine-moment summary.
//!
//! With `Var(X*) = 1`, the observable moments pin down every latent second
//! moment once the slope is fixed. The identified set is the set of slopes
//! for which the implied measurement-error variances, the implied error
//! covariance and the outcome noise variance are all admissible. Three
//! bounding functions come out of those constraints:
//!
//! ```text
//! l1 = (cov_z1y + cov_z2y) / (1 + cov_z1z2)
//! l2 = 2 cov_z1y / (1 + var_z1)
//! l3 = 2 cov_z2y / (1 + var_z2)
//! ```
//!
//! and the upper bound is `sqrt(var_y)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::LatentSpec;
use crate::error::{Error, Result};
use crate::moments::{check_data_assumptions, MomentSummary};
use crate::Regime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetShape {
    Interval,
    Empty,
    Point,
}

/// Lower-bound components; `l1` is absent in the free-covariance regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub l1: Option<f64>,
    pub l2: f64,
    pub l3: f64,
}

impl Components {
    fn active(&self) -> impl Iterator<Item = f64> + '_ {
        self.l1.into_iter().chain([self.l2, self.l3])
    }

    pub fn max(&self) -> f64 {
        self.active().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.active().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsResult {
    pub regime: Regime,
    pub shape: SetShape,
    /// For an empty set these still hold the crossed endpoint values.
    pub lower: f64,
    pub upper: f64,
    pub components: Components,
    pub refinement_applied: bool,
    pub diagnostics: Vec<String>,
}

impl BoundsResult {
    pub fn is_empty(&self) -> bool {
        self.shape == SetShape::Empty
    }

    pub fn contains(&self, beta: f64) -> bool {
        !self.is_empty() && self.lower <= beta && beta <= self.upper
    }

    fn interval_or_empty(regime: Regime, lower: f64, upper: f64, components: Components) -> Self {
        BoundsResult {
            regime,
            shape: if upper < lower {
                SetShape::Empty
            } else {
                SetShape::Interval
            },
            lower,
            upper,
            components,
            refinement_applied: false,
            diagnostics: Vec::new(),
        }
    }
}

fn first_component(m: &MomentSummary) -> Result<f64> {
    if m.cov_z1z2 <= -1.0 {
        return Err(Error::AssumptionViolation {
            failures: vec![format!("cov_z1z2 > -1 (value {})", m.cov_z1z2)],
        });
    }
    Ok((m.cov_z1y + m.cov_z2y) / (1.0 + m.cov_z1z2))
}

fn proxy_components(m: &MomentSummary) -> Result<(f64, f64)> {
    if m.var_z1 < 0.0 || m.var_z2 < 0.0 {
        return Err(Error::Domain(format!(
            "negative proxy variance ({}, {})",
            m.var_z1, m.var_z2
        )));
    }
    Ok((
        2.0 * m.cov_z1y / (1.0 + m.var_z1),
        2.0 * m.cov_z2y / (1.0 + m.var_z2),
    ))
}

/// The three bounding-function values `(l1, l2, l3)`.
pub fn lb_components(m: &MomentSummary) -> Result<(f64, f64, f64)> {
    let l1 = first_component(m)?;
    let (l2, l3) = proxy_components(m)?;
    Ok((l1, l2, l3))
}

pub fn identify_baseline(m: &MomentSummary) -> Result<BoundsResult> {
    check_data_assumptions(m, Regime::Baseline).into_result()?;
    let (l1, l2, l3) = lb_components(m)?;
    let components = Components {
        l1: Some(l1),
        l2,
        l3,
    };
    Ok(BoundsResult::interval_or_empty(
        Regime::Baseline,
        components.max(),
        m.var_y.sqrt(),
        components,
    ))
}

/// Identified set when `Cov(U1, U2)` is left unrestricted: only the two
/// proxy-variance constraints bind.
pub fn identify_free_cov(m: &MomentSummary) -> Result<BoundsResult> {
    check_data_assumptions(m, Regime::FreeCov).into_result()?;
    let (l2, l3) = proxy_components(m)?;
    let components = Components { l1: None, l2, l3 };
    Ok(BoundsResult::interval_or_empty(
        Regime::FreeCov,
        components.max(),
        m.var_y.sqrt(),
        components,
    ))
}

/// Identified set when the sign of the slope is taken from the reduced forms.
///
/// A negative sign is handled by flipping the outcome, applying the baseline
/// result and flipping back, so the upper endpoint is the smallest component.
pub fn identify_no_sign(m: &MomentSummary) -> Result<BoundsResult> {
    check_data_assumptions(m, Regime::NoSign).into_result()?;
    let (l1, l2, l3) = lb_components(m)?;
    let components = Components {
        l1: Some(l1),
        l2,
        l3,
    };
    let all = [l1, l2, l3];
    let ub = m.var_y.sqrt();
    if all.iter().all(|&l| l > 0.0) {
        Ok(BoundsResult::interval_or_empty(
            Regime::NoSign,
            components.max(),
            ub,
            components,
        ))
    } else if all.iter().all(|&l| l == 0.0) {
        Ok(BoundsResult {
            regime: Regime::NoSign,
            shape: SetShape::Point,
            lower: 0.0,
            upper: 0.0,
            components,
            refinement_applied: false,
            diagnostics: Vec::new(),
        })
    } else if all.iter().all(|&l| l < 0.0) {
        let flipped = identify_baseline(&m.scale_outcome(-1.0))?;
        let mut out = BoundsResult::interval_or_empty(
            Regime::NoSign,
            -flipped.upper,
            -flipped.lower,
            components,
        );
        out.diagnostics.push(format!(
            "negative branch: upper endpoint min(l1,l2,l3) = {}; taking max(l1,l2,l3) = {} instead would not follow from flipping the outcome",
            components.min(),
            components.max()
        ));
        Ok(out)
    } else {
        Err(Error::SignViolation { components: all })
    }
}

pub fn identify(m: &MomentSummary, regime: Regime) -> Result<BoundsResult> {
    match regime {
        Regime::Baseline => identify_baseline(m),
        Regime::FreeCov => identify_free_cov(m),
        Regime::NoSign => identify_no_sign(m),
    }
}

/// Which proxy has the smaller measurement-error variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetterProxy {
    /// `Var(U1) >= Var(U2)`.
    Proxy2Better,
    /// `Var(U2) >= Var(U1)`.
    Proxy1Better,
}

/// Tightens a baseline set using a ranking of the two proxies' error
/// variances. The ratio `r = 2 (cov_z1y - cov_z2y) / (var_z1 - var_z2)`
/// becomes a new lower or upper bound depending on which proxy is noisier
/// in the observed data.
pub fn refine_better_proxy(
    m: &MomentSummary,
    b: &BoundsResult,
    better: BetterProxy,
) -> Result<BoundsResult> {
    if b.regime != Regime::Baseline {
        return Err(Error::RefinementRegime);
    }
    let dv = m.var_z1 - m.var_z2;
    if dv == 0.0 {
        return Err(Error::DegenerateRefinement);
    }
    let r = 2.0 * (m.cov_z1y - m.cov_z2y) / dv;
    // Var(U1) - Var(U2) = (var_z1 - var_z2) - 2 (cov_z1y - cov_z2y) / beta.
    let raises_lower = match better {
        BetterProxy::Proxy2Better => dv > 0.0,
        BetterProxy::Proxy1Better => dv < 0.0,
    };
    let mut out = b.clone();
    if raises_lower {
        out.lower = out.lower.max(r);
    } else {
        out.upper = out.upper.min(r);
    }
    out.shape = if out.upper < out.lower {
        SetShape::Empty
    } else {
        SetShape::Interval
    };
    out.refinement_applied = true;
    out.diagnostics.push(format!("better-proxy ratio r = {r}"));
    Ok(out)
}

/// Outcome of the grid-scan oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    /// `[min, max]` of feasible grid points, absent if none is feasible.
    pub interval: Option<(f64, f64)>,
    pub feasible_points: usize,
    /// Feasible points whose implied 4x4 latent covariance is not PSD.
    pub non_psd_points: usize,
}

/// Latent specification implied by the observables at a fixed nonzero slope.
pub(crate) fn invert_at(m: &MomentSummary, beta: f64) -> LatentSpec {
    LatentSpec {
        beta,
        mean_u1: m.mean_z1,
        mean_u2: m.mean_z2,
        var_eps: m.var_y - beta * beta,
        var_u1: 1.0 + m.var_z1 - 2.0 * m.cov_z1y / beta,
        var_u2: 1.0 + m.var_z2 - 2.0 * m.cov_z2y / beta,
        cov_x_u1: m.cov_z1y / beta - 1.0,
        cov_x_u2: m.cov_z2y / beta - 1.0,
        cov_u1_u2: m.cov_z1z2 + 1.0 - (m.cov_z1y + m.cov_z2y) / beta,
    }
}

/// Latent specification implied at a zero slope (requires zero reduced forms).
pub(crate) fn invert_at_zero(m: &MomentSummary) -> LatentSpec {
    LatentSpec {
        beta: 0.0,
        mean_u1: m.mean_z1,
        mean_u2: m.mean_z2,
        var_eps: m.var_y,
        var_u1: 1.0 + m.var_z1,
        var_u2: 1.0 + m.var_z2,
        cov_x_u1: -1.0,
        cov_x_u2: -1.0,
        cov_u1_u2: m.cov_z1z2 + 1.0,
    }
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

fn candidate(m: &MomentSummary, beta: f64, regime: Regime) -> Option<LatentSpec> {
    let spec = if beta == 0.0 {
        if m.cov_z1y != 0.0 || m.cov_z2y != 0.0 {
            return None;
        }
        invert_at_zero(m)
    } else {
        invert_at(m, beta)
    };
    if regime == Regime::NoSign && (sign(m.cov_z1y) != sign(beta) || sign(m.cov_z2y) != sign(beta))
    {
        return None;
    }
    let ok = spec.var_u1 >= 0.0
        && spec.var_u2 >= 0.0
        && spec.var_eps >= 0.0
        && (regime == Regime::FreeCov || spec.cov_u1_u2 >= 0.0);
    ok.then_some(spec)
}

/// Scans `beta` over `{0, step, ..., beta_max}` (mirrored onto negative
/// values for [`Regime::NoSign`]) and keeps the slopes for which the
/// inverted latent moments are admissible.
pub fn brute_force_bounds(
    m: &MomentSummary,
    grid_step: f64,
    beta_max: f64,
    regime: Regime,
) -> Result<BruteForceResult> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grid_step must be positive, got {grid_step}"
        )));
    }
    if !(beta_max >= m.var_y.max(0.0).sqrt()) {
        return Err(Error::InvalidConfig(format!(
            "beta_max {beta_max} is below sqrt(var_y) = {}",
            m.var_y.max(0.0).sqrt()
        )));
    }
    let steps = (beta_max / grid_step + 1e-9).floor() as i64;
    let lo = if regime == Regime::NoSign { -steps } else { 0 };

    #[derive(Clone, Copy)]
    struct Acc {
        min: f64,
        max: f64,
        count: usize,
        non_psd: usize,
    }
    let empty = Acc {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        count: 0,
        non_psd: 0,
    };
    let acc = (lo..=steps)
        .into_par_iter()
        .fold(
            || empty,
            |mut acc, k| {
                let beta = k as f64 * grid_step;
                if let Some(spec) = candidate(m, beta, regime) {
                    acc.min = acc.min.min(beta);
                    acc.max = acc.max.max(beta);
                    acc.count += 1;
                    if !spec.is_psd() {
                        acc.non_psd += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || empty,
            |a, b| Acc {
                min: a.min.min(b.min),
                max: a.max.max(b.max),
                count: a.count + b.count,
                non_psd: a.non_psd + b.non_psd,
            },
        );
    Ok(BruteForceResult {
        interval: (acc.count > 0).then_some((acc.min, acc.max)),
        feasible_points: acc.count,
        non_psd_points: acc.non_psd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m0() -> MomentSummary {
        MomentSummary::population(1.25, 1.0, 1.5, 0.375, 0.5, 0.85)
    }

    fn zero_error() -> MomentSummary {
        MomentSummary::population(2.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    }

    fn infeasible() -> MomentSummary {
        MomentSummary::population(1.0, 1.0, 1.0, 0.7, 0.7, 0.0)
    }

    #[test]
    fn components_of_m0() {
        let (l1, l2, l3) = lb_components(&m0()).unwrap();
        assert_abs_diff_eq!(l1, 0.875 / 1.85, epsilon = 1e-15);
        assert_abs_diff_eq!(l1, 0.472973, epsilon = 1e-6);
        assert_abs_diff_eq!(l2, 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(l3, 0.4, epsilon = 1e-15);
    }

    #[test]
    fn components_collapse_without_measurement_error() {
        assert_eq!(lb_components(&zero_error()).unwrap(), (1.0, 1.0, 1.0));
        let m = MomentSummary::population(1.0, 1.0, 2.0, 0.0, 0.0, 0.3);
        assert_eq!(lb_components(&m).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn components_reject_proxy_covariance_at_minus_one() {
        let m = MomentSummary {
            cov_z1z2: -1.0,
            ..m0()
        };
        assert!(matches!(
            lb_components(&m),
            Err(Error::AssumptionViolation { .. })
        ));
    }

    #[test]
    fn baseline_sets() {
        let b = identify_baseline(&m0()).unwrap();
        assert_eq!(b.shape, SetShape::Interval);
        assert_abs_diff_eq!(b.lower, 0.472973, epsilon = 1e-6);
        assert_abs_diff_eq!(b.upper, 1.118034, epsilon = 1e-6);
        assert!(b.contains(0.5));

        let b = identify_baseline(&zero_error()).unwrap();
        assert_eq!(b.lower, 1.0);
        assert_abs_diff_eq!(b.upper, 2f64.sqrt(), epsilon = 1e-15);

        let b = identify_baseline(&infeasible()).unwrap();
        assert_eq!(b.shape, SetShape::Empty);
        assert_abs_diff_eq!(b.lower, 1.4, epsilon = 1e-15);
        assert_eq!(b.upper, 1.0);
    }

    #[test]
    fn baseline_rejects_failed_assumptions() {
        let m = MomentSummary {
            cov_z1y: -0.1,
            ..m0()
        };
        match identify_baseline(&m) {
            Err(Error::AssumptionViolation { failures }) => {
                assert_eq!(failures.len(), 1);
                assert!(failures[0].starts_with("cov_z1y >= 0"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn free_cov_sets() {
        let b = identify_free_cov(&m0()).unwrap();
        assert_eq!(b.components.l1, None);
        assert_abs_diff_eq!(b.lower, 0.4, epsilon = 1e-15);
        let ex3 = MomentSummary::population(1.0, 2.0, 3.0, 1.0, 1.0, 1.0);
        assert_abs_diff_eq!(
            identify_free_cov(&ex3).unwrap().lower,
            2.0 / 3.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn no_sign_branches() {
        let pos = identify_no_sign(&m0()).unwrap();
        let base = identify_baseline(&m0()).unwrap();
        assert_eq!((pos.lower, pos.upper), (base.lower, base.upper));

        let neg_m = MomentSummary {
            cov_z1y: -0.375,
            cov_z2y: -0.5,
            ..m0()
        };
        let neg = identify_no_sign(&neg_m).unwrap();
        assert_eq!(neg.shape, SetShape::Interval);
        assert_abs_diff_eq!(neg.lower, -1.118034, epsilon = 1e-6);
        assert_abs_diff_eq!(neg.upper, -0.472973, epsilon = 1e-6);
        assert_abs_diff_eq!(neg.upper, neg.components.min(), epsilon = 1e-15);
        assert!(!neg.diagnostics.is_empty());

        let zero_m = MomentSummary {
            cov_z1y: 0.0,
            cov_z2y: 0.0,
            ..m0()
        };
        let zero = identify_no_sign(&zero_m).unwrap();
        assert_eq!(zero.shape, SetShape::Point);
        assert_eq!((zero.lower, zero.upper), (0.0, 0.0));
    }

    #[test]
    fn no_sign_negative_branch_can_be_empty() {
        let m = MomentSummary {
            cov_z1y: -0.7,
            cov_z2y: -0.7,
            ..infeasible()
        };
        assert_eq!(identify_no_sign(&m).unwrap().shape, SetShape::Empty);
    }

    #[test]
    fn refinement_with_m0() {
        let b = identify_baseline(&m0()).unwrap();
        let r = refine_better_proxy(&m0(), &b, BetterProxy::Proxy2Better).unwrap();
        assert!(r.refinement_applied);
        assert_abs_diff_eq!(r.lower, 0.472973, epsilon = 1e-6);
        assert_abs_diff_eq!(r.upper, 0.5, epsilon = 1e-15);
        assert!(r.contains(0.5));
        // Mirror: proxy 1 better with var_z1 < var_z2 raises the lower bound.
        let r1 = refine_better_proxy(&m0(), &b, BetterProxy::Proxy1Better).unwrap();
        assert_abs_diff_eq!(r1.lower, 0.5, epsilon = 1e-15);
        assert_eq!(r1.upper, b.upper);
    }

    #[test]
    fn refinement_zero_numerator_keeps_lower() {
        let m = MomentSummary::population(1.0, 1.5, 1.0, 0.4, 0.4, 0.5);
        let b = identify_baseline(&m).unwrap();
        let r = refine_better_proxy(&m, &b, BetterProxy::Proxy2Better).unwrap();
        assert_eq!(r.lower, b.lower);
        assert_eq!(r.upper, b.upper);
    }

    #[test]
    fn refinement_can_empty_the_set() {
        // r = 2 (0.375 - 0.45) / (1.0 - 1.5) = 0.3 < l1 = 0.825 / 1.85.
        let m = MomentSummary {
            cov_z2y: 0.45,
            ..m0()
        };
        let b = identify_baseline(&m).unwrap();
        let r = refine_better_proxy(&m, &b, BetterProxy::Proxy2Better).unwrap();
        assert_abs_diff_eq!(r.upper, 0.3, epsilon = 1e-12);
        assert_eq!(r.shape, SetShape::Empty);
    }

    #[test]
    fn refinement_errors() {
        let m = MomentSummary::population(1.0, 1.0, 1.0, 0.4, 0.3, 0.5);
        let b = identify_baseline(&m).unwrap();
        assert_eq!(
            refine_better_proxy(&m, &b, BetterProxy::Proxy2Better).unwrap_err(),
            Error::DegenerateRefinement
        );
        let fc = identify_free_cov(&m0()).unwrap();
        assert_eq!(
            refine_better_proxy(&m0(), &fc, BetterProxy::Proxy2Better).unwrap_err(),
            Error::RefinementRegime
        );
    }

    #[test]
    fn oracle_matches_closed_form() {
        let step = 1e-4;
        let b = identify_baseline(&m0()).unwrap();
        let (lo, hi) = brute_force_bounds(&m0(), step, 2.0 * 1.25f64.sqrt(), Regime::Baseline)
            .unwrap()
            .interval
            .unwrap();
        assert!((lo - b.lower).abs() <= step);
        assert!((hi - b.upper).abs() <= step);
        assert_abs_diff_eq!(lo, 0.4730, epsilon = 1e-9);
        assert_abs_diff_eq!(hi, 1.1180, epsilon = 1e-9);

        let (lo, hi) = brute_force_bounds(&zero_error(), step, 2.0 * 2f64.sqrt(), Regime::Baseline)
            .unwrap()
            .interval
            .unwrap();
        assert_abs_diff_eq!(lo, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(hi, 14142.0 * step, epsilon = 1e-9);

        let r = brute_force_bounds(&infeasible(), step, 2.0, Regime::Baseline).unwrap();
        assert_eq!(r.interval, None);
    }

    #[test]
    fn oracle_no_sign_mirrors() {
        let m = MomentSummary {
            cov_z1y: -0.375,
            cov_z2y: -0.5,
            ..m0()
        };
        let (lo, hi) = brute_force_bounds(&m, 1e-4, 2.5, Regime::NoSign)
            .unwrap()
            .interval
            .unwrap();
        let b = identify_no_sign(&m).unwrap();
        assert!((lo - b.lower).abs() <= 1e-4);
        assert!((hi - b.upper).abs() <= 1e-4);
    }

    #[test]
    fn oracle_rejects_bad_grid() {
        assert!(brute_force_bounds(&m0(), 0.0, 2.0, Regime::Baseline).is_err());
        assert!(brute_force_bounds(&m0(), 1e-3, 1.0, Regime::Baseline).is_err());
    }
}
