//! Comparison estimands that ignore or only partially correct the
//! measurement error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::MomentSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProxyIndex {
    First,
    Second,
}

/// Single-proxy slope `cov_zky / var_zk`.
pub fn reduced_form(m: &MomentSummary, k: ProxyIndex) -> Result<f64> {
    let (cov, var, proxy) = match k {
        ProxyIndex::First => (m.cov_z1y, m.var_z1, 1),
        ProxyIndex::Second => (m.cov_z2y, m.var_z2, 2),
    };
    if var <= 0.0 {
        return Err(Error::DegenerateProxy { proxy });
    }
    Ok(cov / var)
}

/// Slope of the outcome on `delta * Z1 + (1 - delta) * Z2`.
pub fn combo_coefficient(m: &MomentSummary, delta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Domain(format!(
            "delta must lie in [0, 1], got {delta}"
        )));
    }
    let e = 1.0 - delta;
    let var = delta * delta * m.var_z1 + e * e * m.var_z2 + 2.0 * delta * e * m.cov_z1z2;
    if var <= 0.0 {
        return Err(Error::DegenerateCombination { delta });
    }
    Ok((delta * m.cov_z1y + e * m.cov_z2y) / var)
}

/// Two-regressor slopes and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LwEstimate {
    pub b1_multi: f64,
    pub b2_multi: f64,
    pub b_star: f64,
}

/// Gram determinants below this fraction of `var_z1 * var_z2` count as
/// singular.
const GRAM_REL_TOL: f64 = 1e-12;

/// Lubotsky-Wittenberg estimand: `b* = b1 + b2` from regressing the outcome
/// on both proxies jointly, solved from the moment normal equations.
pub fn lubotsky_wittenberg(m: &MomentSummary) -> Result<LwEstimate> {
    let det = m.var_z1 * m.var_z2 - m.cov_z1z2 * m.cov_z1z2;
    let scale = (m.var_z1 * m.var_z2).abs();
    if !(det.abs() > GRAM_REL_TOL * scale) {
        return Err(Error::CollinearProxies { det });
    }
    let b1_multi = (m.var_z2 * m.cov_z1y - m.cov_z1z2 * m.cov_z2y) / det;
    let b2_multi = (m.var_z1 * m.cov_z2y - m.cov_z1z2 * m.cov_z1y) / det;
    Ok(LwEstimate {
        b1_multi,
        b2_multi,
        b_star: b1_multi + b2_multi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimates {
    pub b1: f64,
    pub b2: f64,
    /// `(delta, b(delta))` when a combination weight was requested.
    pub b_delta: Option<(f64, f64)>,
    pub b_star: f64,
}

impl BaselineEstimates {
    pub fn compute(m: &MomentSummary, delta: Option<f64>) -> Result<Self> {
        Ok(BaselineEstimates {
            b1: reduced_form(m, ProxyIndex::First)?,
            b2: reduced_form(m, ProxyIndex::Second)?,
            b_delta: delta
                .map(|d| combo_coefficient(m, d).map(|v| (d, v)))
                .transpose()?,
            b_star: lubotsky_wittenberg(m)?.b_star,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m0() -> MomentSummary {
        MomentSummary::population(1.25, 1.0, 1.5, 0.375, 0.5, 0.85)
    }

    #[test]
    fn reduced_forms_of_m0() {
        assert_abs_diff_eq!(reduced_form(&m0(), ProxyIndex::First).unwrap(), 0.375);
        assert_abs_diff_eq!(
            reduced_form(&m0(), ProxyIndex::Second).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        let zero = MomentSummary::population(2.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(reduced_form(&zero, ProxyIndex::First).unwrap(), 1.0);
    }

    #[test]
    fn constant_proxy_is_degenerate() {
        let m = MomentSummary {
            var_z2: 0.0,
            ..m0()
        };
        assert_eq!(
            reduced_form(&m, ProxyIndex::Second).unwrap_err(),
            Error::DegenerateProxy { proxy: 2 }
        );
    }

    #[test]
    fn combination_endpoints_and_midpoint() {
        let m = m0();
        assert_eq!(combo_coefficient(&m, 1.0).unwrap(), 0.375);
        assert_abs_diff_eq!(
            combo_coefficient(&m, 0.0).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-15
        );
        // cov 0.4375 / var (0.25 + 0.375 + 0.425)
        assert_abs_diff_eq!(
            combo_coefficient(&m, 0.5).unwrap(),
            0.4375 / 1.05,
            epsilon = 1e-15
        );
        assert!(combo_coefficient(&m, 1.5).is_err());
    }

    #[test]
    fn lw_of_m0() {
        let lw = lubotsky_wittenberg(&m0()).unwrap();
        assert_abs_diff_eq!(lw.b1_multi, 0.1375 / 0.7775, epsilon = 1e-15);
        assert_abs_diff_eq!(lw.b2_multi, 0.18125 / 0.7775, epsilon = 1e-15);
        assert_abs_diff_eq!(lw.b_star, 0.409968, epsilon = 1e-6);
    }

    #[test]
    fn lw_of_example_three() {
        let m = MomentSummary::population(1.0, 2.0, 3.0, 1.0, 1.0, 1.0);
        assert_abs_diff_eq!(
            lubotsky_wittenberg(&m).unwrap().b_star,
            0.6,
            epsilon = 1e-15
        );
    }

    #[test]
    fn identical_proxies_are_collinear() {
        let m = MomentSummary::population(2.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            lubotsky_wittenberg(&m),
            Err(Error::CollinearProxies { .. })
        ));
    }

    #[test]
    fn bundle_respects_endpoint_identities() {
        let b = BaselineEstimates::compute(&m0(), Some(1.0)).unwrap();
        assert_eq!(b.b_delta.unwrap().1, b.b1);
        let b = BaselineEstimates::compute(&m0(), Some(0.0)).unwrap();
        assert_abs_diff_eq!(b.b_delta.unwrap().1, b.b2, epsilon = 1e-12);
    }
}
