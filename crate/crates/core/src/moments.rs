//! Covariate residualization and the nine-moment summary.
//!
//! Every identification result operates on the first and second moments of
//! `(Y_res, Z1_res, Z2_res)`, the OLS residuals of the outcome and the two
//! proxies on the covariate matrix `W` (whose first column is the constant).

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Regime;

/// Relative tolerance on `|R_jj| / ||x_j||` below which a column is treated
/// as linearly dependent on the preceding ones.
pub const RANK_TOL: f64 = 1e-10;

/// Raw observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    y: Vec<f64>,
    w: DMatrix<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
    cluster: Option<Vec<usize>>,
}

impl Sample {
    /// Builds a sample from a covariate matrix that already carries the
    /// constant column first.
    pub fn new(
        y: Vec<f64>,
        w: DMatrix<f64>,
        z1: Vec<f64>,
        z2: Vec<f64>,
        cluster: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = y.len();
        if z1.len() != n || z2.len() != n || w.nrows() != n {
            return Err(Error::InvalidSample(format!(
                "length mismatch: y {}, z1 {}, z2 {}, w rows {}",
                n,
                z1.len(),
                z2.len(),
                w.nrows()
            )));
        }
        if let Some(c) = &cluster {
            if c.len() != n {
                return Err(Error::InvalidSample(format!(
                    "cluster labels have length {}, expected {n}",
                    c.len()
                )));
            }
        }
        if w.ncols() == 0 || w.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidSample(
                "first covariate column must be identically 1".into(),
            ));
        }
        let finite = y
            .iter()
            .chain(&z1)
            .chain(&z2)
            .chain(w.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidSample("non-finite value".into()));
        }
        Ok(Sample {
            y,
            w,
            z1,
            z2,
            cluster,
        })
    }

    /// Builds a sample from covariate columns, prepending the constant.
    pub fn from_columns(
        y: Vec<f64>,
        covariates: &[Vec<f64>],
        z1: Vec<f64>,
        z2: Vec<f64>,
        cluster: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = y.len();
        if let Some(bad) = covariates.iter().find(|c| c.len() != n) {
            return Err(Error::InvalidSample(format!(
                "covariate column has length {}, expected {n}",
                bad.len()
            )));
        }
        let w = DMatrix::from_fn(n, covariates.len() + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                covariates[j - 1][i]
            }
        });
        Sample::new(y, w, z1, z2, cluster)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of non-constant covariates.
    pub fn covariate_count(&self) -> usize {
        self.w.ncols() - 1
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn z1(&self) -> &[f64] {
        &self.z1
    }

    pub fn z2(&self) -> &[f64] {
        &self.z2
    }

    pub fn cluster(&self) -> Option<&[usize]> {
        self.cluster.as_deref()
    }

    /// Same sample with the outcome sign flipped.
    pub fn negate_outcome(&self) -> Sample {
        Sample {
            y: self.y.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }

    /// Rows selected by `idx` (with repetition), in order.
    pub fn select_rows(&self, idx: &[usize]) -> Sample {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let w = DMatrix::from_fn(idx.len(), self.w.ncols(), |i, j| self.w[(idx[i], j)]);
        Sample {
            y: pick(&self.y),
            w,
            z1: pick(&self.z1),
            z2: pick(&self.z2),
            cluster: self
                .cluster
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// A factored design matrix reused across several right-hand sides.
struct LeastSquares {
    qr: nalgebra::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
    x: DMatrix<f64>,
}

impl LeastSquares {
    fn new(x: &DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < p || p == 0 {
            return Err(Error::SingularDesign {
                columns: p,
                rank: n.min(p),
            });
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let rank = (0..p)
            .filter(|&j| {
                let norm = x.column(j).norm();
                norm > 0.0 && r[(j, j)].abs() > RANK_TOL * norm
            })
            .count();
        if rank < p {
            return Err(Error::SingularDesign { columns: p, rank });
        }
        Ok(LeastSquares {
            qr,
            r,
            x: x.clone(),
        })
    }

    fn fit(&self, y: &[f64]) -> Result<OlsFit> {
        let n = self.x.nrows();
        let p = self.x.ncols();
        if y.len() != n {
            return Err(Error::InvalidSample(format!(
                "response has length {}, design has {n} rows",
                y.len()
            )));
        }
        let mut qty = DVector::from_column_slice(y);
        self.qr.q_tr_mul(&mut qty);
        let head = qty.rows(0, p).into_owned();
        let coef = self
            .r
            .solve_upper_triangular(&head)
            .ok_or(Error::SingularDesign {
                columns: p,
                rank: p - 1,
            })?;
        let fitted = &self.x * &coef;
        let residuals = y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();
        Ok(OlsFit {
            coefficients: coef.iter().copied().collect(),
            residuals,
        })
    }
}

/// Least-squares fit of `y` on the columns of `x` via Householder QR.
pub fn ols_fit(y: &[f64], x: &DMatrix<f64>) -> Result<OlsFit> {
    LeastSquares::new(x)?.fit(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualizedSample {
    pub y_res: Vec<f64>,
    pub z1_res: Vec<f64>,
    pub z2_res: Vec<f64>,
    pub cluster: Option<Vec<usize>>,
}

impl ResidualizedSample {
    pub fn n(&self) -> usize {
        self.y_res.len()
    }
}

/// Partials the covariates out of the outcome and both proxies.
pub fn residualize(s: &Sample) -> Result<ResidualizedSample> {
    let required = s.covariate_count() + 3;
    if s.n() < required {
        return Err(Error::InsufficientData { n: s.n(), required });
    }
    let ls = LeastSquares::new(&s.w)?;
    Ok(ResidualizedSample {
        y_res: ls.fit(&s.y)?.residuals,
        z1_res: ls.fit(&s.z1)?.residuals,
        z2_res: ls.fit(&s.z2)?.residuals,
        cluster: s.cluster.clone(),
    })
}

/// Divisor used for sample variances and covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivisorPolicy {
    #[default]
    NMinus1,
    N,
}

impl DivisorPolicy {
    fn divisor(self, n: usize) -> f64 {
        match self {
            DivisorPolicy::NMinus1 => (n - 1) as f64,
            DivisorPolicy::N => n as f64,
        }
    }
}

/// First and second moments of the residualized observables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean_z1: f64,
    pub mean_z2: f64,
    pub var_y: f64,
    pub var_z1: f64,
    pub var_z2: f64,
    pub cov_z1y: f64,
    pub cov_z2y: f64,
    pub cov_z1z2: f64,
    /// Zero for population summaries.
    pub n: usize,
    pub divisor_policy: DivisorPolicy,
}

impl MomentSummary {
    /// Population summary with zero proxy means.
    pub fn population(
        var_y: f64,
        var_z1: f64,
        var_z2: f64,
        cov_z1y: f64,
        cov_z2y: f64,
        cov_z1z2: f64,
    ) -> Self {
        MomentSummary {
            mean_z1: 0.0,
            mean_z2: 0.0,
            var_y,
            var_z1,
            var_z2,
            cov_z1y,
            cov_z2y,
            cov_z1z2,
            n: 0,
            divisor_policy: DivisorPolicy::NMinus1,
        }
    }

    /// Summary of `(lambda * Y, Z1, Z2)`.
    pub fn scale_outcome(&self, lambda: f64) -> Self {
        MomentSummary {
            var_y: self.var_y * lambda * lambda,
            cov_z1y: self.cov_z1y * lambda,
            cov_z2y: self.cov_z2y * lambda,
            ..*self
        }
    }

    /// Summary with the roles of the two proxies exchanged.
    pub fn swap_proxies(&self) -> Self {
        MomentSummary {
            mean_z1: self.mean_z2,
            mean_z2: self.mean_z1,
            var_z1: self.var_z2,
            var_z2: self.var_z1,
            cov_z1y: self.cov_z2y,
            cov_z2y: self.cov_z1y,
            ..*self
        }
    }

    /// The six second moments in the order
    /// `(var_y, var_z1, var_z2, cov_z1y, cov_z2y, cov_z1z2)`.
    pub fn second_moments(&self) -> [f64; 6] {
        [
            self.var_y,
            self.var_z1,
            self.var_z2,
            self.cov_z1y,
            self.cov_z2y,
            self.cov_z1z2,
        ]
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn covariance(a: &[f64], b: &[f64], divisor: f64) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / divisor
}

pub fn moment_summary(r: &ResidualizedSample, policy: DivisorPolicy) -> Result<MomentSummary> {
    let n = r.n();
    if n < 3 {
        return Err(Error::InsufficientData { n, required: 3 });
    }
    if r.z1_res.len() != n || r.z2_res.len() != n {
        return Err(Error::InvalidSample(
            "residual series differ in length".into(),
        ));
    }
    let d = policy.divisor(n);
    Ok(MomentSummary {
        mean_z1: mean(&r.z1_res),
        mean_z2: mean(&r.z2_res),
        var_y: covariance(&r.y_res, &r.y_res, d),
        var_z1: covariance(&r.z1_res, &r.z1_res, d),
        var_z2: covariance(&r.z2_res, &r.z2_res, d),
        cov_z1y: covariance(&r.z1_res, &r.y_res, d),
        cov_z2y: covariance(&r.z2_res, &r.y_res, d),
        cov_z1z2: covariance(&r.z1_res, &r.z2_res, d),
        n,
        divisor_policy: policy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub pass: bool,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub regime: Regime,
    pub checks: Vec<AssumptionCheck>,
    pub overall: bool,
}

impl AssumptionReport {
    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("{} (value {})", c.name, c.value))
            .collect()
    }

    pub(crate) fn into_result(self) -> Result<()> {
        if self.overall {
            Ok(())
        } else {
            Err(Error::AssumptionViolation {
                failures: self.failures(),
            })
        }
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<32} {:>4}  ({})",
                c.name,
                if c.pass { "ok" } else { "FAIL" },
                c.value
            )?;
        }
        Ok(())
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

/// Evaluates the testable restrictions on the observables for `regime`.
/// Failures are reported, never raised.
pub fn check_data_assumptions(m: &MomentSummary, regime: Regime) -> AssumptionReport {
    let check = |name: &str, pass: bool, value: f64| AssumptionCheck {
        name: name.to_string(),
        pass,
        value,
    };
    let mut checks = vec![check("var_y > 0", m.var_y > 0.0, m.var_y)];
    match regime {
        Regime::Baseline | Regime::FreeCov => {
            checks.push(check("cov_z1y >= 0", m.cov_z1y >= 0.0, m.cov_z1y));
            checks.push(check("cov_z2y >= 0", m.cov_z2y >= 0.0, m.cov_z2y));
            if regime == Regime::Baseline {
                checks.push(check("cov_z1z2 > -1", m.cov_z1z2 > -1.0, m.cov_z1z2));
            }
        }
        Regime::NoSign => {
            checks.push(check("cov_z1z2 > -1", m.cov_z1z2 > -1.0, m.cov_z1z2));
            checks.push(check(
                "sign(cov_z1y) = sign(cov_z2y)",
                sign(m.cov_z1y) == sign(m.cov_z2y),
                m.cov_z1y * m.cov_z2y,
            ));
        }
    }
    let overall = checks.iter().all(|c| c.pass);
    AssumptionReport {
        regime,
        checks,
        overall,
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
    fn exact_fit_has_zero_residuals() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 5.0]);
        let y: Vec<f64> = (0..4).map(|i| 2.0 + 3.0 * x[(i, 1)]).collect();
        let fit = ols_fit(&y, &x).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], 3.0, epsilon = 1e-12);
        for r in fit.residuals {
            assert_abs_diff_eq!(r, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_only_design_demeans() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let fit = ols_fit(&[1.0, 2.0, 3.0], &x).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 2.0, epsilon = 1e-14);
        let expected = [-1.0, 0.0, 1.0];
        for (r, e) in fit.residuals.iter().zip(expected) {
            assert_abs_diff_eq!(*r, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let x = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 1.0, 2.0, //
                1.0, 2.0, 4.0, //
                1.0, 3.0, 6.0, //
                1.0, 4.0, 8.0,
            ],
        );
        let err = ols_fit(&[1.0, 2.0, 3.0, 4.0], &x).unwrap_err();
        assert_eq!(
            err,
            Error::SingularDesign {
                columns: 3,
                rank: 2
            }
        );
    }

    #[test]
    fn hand_computed_summary() {
        let r = ResidualizedSample {
            y_res: vec![-1.0, 0.0, 1.0],
            z1_res: vec![-1.0, 0.0, 1.0],
            z2_res: vec![1.0, 0.0, -1.0],
            cluster: None,
        };
        let m = moment_summary(&r, DivisorPolicy::NMinus1).unwrap();
        assert_eq!(m.var_y, 1.0);
        assert_eq!(m.var_z1, 1.0);
        assert_eq!(m.cov_z1y, 1.0);
        assert_eq!(m.cov_z2y, -1.0);
        let mn = moment_summary(&r, DivisorPolicy::N).unwrap();
        assert_abs_diff_eq!(mn.var_y, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn too_few_rows() {
        let r = ResidualizedSample {
            y_res: vec![0.0, 1.0],
            z1_res: vec![0.0, 1.0],
            z2_res: vec![0.0, 1.0],
            cluster: None,
        };
        assert_eq!(
            moment_summary(&r, DivisorPolicy::NMinus1).unwrap_err(),
            Error::InsufficientData { n: 2, required: 3 }
        );
    }

    #[test]
    fn residualize_requires_j_plus_three_rows() {
        let s = Sample::from_columns(
            vec![1.0, 2.0, 3.0],
            &[vec![0.0, 1.0, 3.0]],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 1.0],
            None,
        )
        .unwrap();
        assert_eq!(
            residualize(&s).unwrap_err(),
            Error::InsufficientData { n: 3, required: 4 }
        );
    }

    #[test]
    fn sample_rejects_missing_constant() {
        let w = DMatrix::from_element(3, 1, 2.0);
        assert!(matches!(
            Sample::new(vec![0.0; 3], w, vec![0.0; 3], vec![0.0; 3], None),
            Err(Error::InvalidSample(_))
        ));
    }

    #[test]
    fn baseline_checks_pass_on_m0() {
        let rep = check_data_assumptions(&m0(), Regime::Baseline);
        assert!(rep.overall);
        assert_eq!(rep.checks.len(), 4);
    }

    #[test]
    fn negative_reduced_form_fails_baseline() {
        let m = MomentSummary {
            cov_z1y: -0.1,
            ..m0()
        };
        let rep = check_data_assumptions(&m, Regime::Baseline);
        assert!(!rep.overall);
        let failed: Vec<_> = rep
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        assert_eq!(failed, vec!["cov_z1y >= 0"]);
    }

    #[test]
    fn free_cov_drops_proxy_covariance_check() {
        let m = MomentSummary {
            cov_z1z2: -2.0,
            ..m0()
        };
        assert!(!check_data_assumptions(&m, Regime::Baseline).overall);
        assert!(check_data_assumptions(&m, Regime::FreeCov).overall);
    }

    #[test]
    fn no_sign_accepts_agreeing_negative_covariances() {
        let m = MomentSummary {
            cov_z1y: -0.3,
            cov_z2y: -0.4,
            ..m0()
        };
        let rep = check_data_assumptions(&m, Regime::NoSign);
        assert!(rep.overall);
        let m = MomentSummary {
            cov_z1y: -0.3,
            cov_z2y: 0.4,
            ..m0()
        };
        assert!(!check_data_assumptions(&m, Regime::NoSign).overall);
    }
}
