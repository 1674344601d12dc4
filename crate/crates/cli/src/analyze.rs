//! The `analyze` command: point estimates, identified sets and confidence
//! intervals for one CSV file.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Context;
use proxybounds_core::inference::BootstrapRun;
use proxybounds_core::{
    brute_force_bounds, check_data_assumptions, identify, lubotsky_wittenberg, moment_summary,
    reduced_form, refine_better_proxy, residualize, AssumptionReport, BetterProxy, BoundsResult,
    BruteForceResult, ConfidenceInterval, DivisorPolicy, Error as CoreError, InferenceConfig,
    LwEstimate, MomentSummary, ProxyIndex, Regime, Sample,
};
use serde::Serialize;

use crate::data::{load_csv, ColumnMap, LoadedData};
use crate::{CliResult, ExitKind, Failure};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    pub columns: ColumnMap,
    pub regimes: Vec<Regime>,
    pub alphas: Vec<f64>,
    pub bootstrap: usize,
    pub draws: usize,
    pub seed: u64,
    pub cluster_bootstrap: bool,
    pub truncate_at_zero: bool,
    pub divisor: DivisorPolicy,
    /// Grid step of the brute-force cross-check, if requested.
    pub oracle: Option<f64>,
    pub better_proxy: Option<BetterProxy>,
    pub inference: bool,
    pub out: Option<PathBuf>,
}

/// A value or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fallible<T> {
    pub value: Option<T>,
    pub error: Option<String>,
}

impl<T> From<proxybounds_core::Result<T>> for Fallible<T> {
    fn from(r: proxybounds_core::Result<T>) -> Self {
        match r {
            Ok(v) => Fallible {
                value: Some(v),
                error: None,
            },
            Err(e) => Fallible {
                value: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool_version: String,
    pub input: String,
    pub seed: u64,
    pub bootstrap: usize,
    pub draws: usize,
    pub n: usize,
    pub rows_read: usize,
    pub dropped_rows: usize,
    pub covariates: usize,
    pub dropped_constant_columns: Vec<String>,
    pub clusters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub columns: ColumnMap,
    pub regimes: Vec<Regime>,
    pub alphas: Vec<f64>,
    pub divisor: DivisorPolicy,
    pub truncate_at_zero: bool,
    pub cluster_bootstrap: bool,
    pub better_proxy: Option<BetterProxy>,
    pub inference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Baselines {
    pub b1_proxy1: Fallible<f64>,
    pub b1_proxy2: Fallible<f64>,
    pub lubotsky_wittenberg: Fallible<LwEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NotRejected,
    Rejected,
    NotEvaluated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecificationTest {
    pub verdict: Verdict,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalReport {
    #[serde(flatten)]
    pub interval: ConfidenceInterval,
    /// Lower bound clipped at zero (equal to the raw bound without a sign
    /// restriction).
    pub c_lb_truncated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub grid_step: f64,
    #[serde(flatten)]
    pub result: BruteForceResult,
    pub max_endpoint_gap: Option<f64>,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub assumptions: AssumptionReport,
    pub bounds: Fallible<BoundsResult>,
    pub refinement_error: Option<String>,
    pub specification_test: SpecificationTest,
    pub confidence_intervals: Vec<IntervalReport>,
    pub inference_error: Option<String>,
    pub oracle: Option<Fallible<OracleReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Status {
    pub exit_code: u8,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub provenance: Provenance,
    pub settings: Settings,
    pub moments: MomentSummary,
    pub baselines: Baselines,
    pub regimes: Vec<RegimeReport>,
    pub status: Status,
}

impl Report {
    pub fn exit_kind(&self) -> ExitKind {
        match self.status.exit_code {
            0 => ExitKind::Success,
            3 => ExitKind::Assumption,
            4 => ExitKind::EmptySet,
            5 => ExitKind::Inference,
            _ => ExitKind::Other,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn oracle_check(
    m: &MomentSummary,
    b: &BoundsResult,
    step: f64,
) -> proxybounds_core::Result<OracleReport> {
    let beta_max = m.var_y.sqrt().max(b.upper.abs()).max(b.lower.abs());
    let result = brute_force_bounds(m, step, beta_max, b.regime)?;
    let max_endpoint_gap = result
        .interval
        .map(|(lo, hi)| (lo - b.lower).abs().max((hi - b.upper).abs()));
    let agrees = match max_endpoint_gap {
        Some(g) => !b.is_empty() && g <= step,
        None => b.is_empty(),
    };
    Ok(OracleReport {
        grid_step: step,
        result,
        max_endpoint_gap,
        agrees,
    })
}

fn regime_report(
    cfg: &AnalysisConfig,
    sample: &Sample,
    m: &MomentSummary,
    regime: Regime,
) -> CliResult<(RegimeReport, Option<ExitKind>)> {
    let assumptions = check_data_assumptions(m, regime);
    let identified = identify(m, regime);
    let mut kind = None;
    let mut refinement_error = None;
    let oracle = match (&identified, cfg.oracle) {
        (Ok(b), Some(step)) => Some(oracle_check(m, b, step).into()),
        _ => None,
    };
    let bounds = match (identified, cfg.better_proxy) {
        (Ok(b), Some(better)) if regime == Regime::Baseline => {
            match refine_better_proxy(m, &b, better) {
                Ok(r) => Ok(r),
                Err(e) => {
                    refinement_error = Some(e.to_string());
                    Ok(b)
                }
            }
        }
        (r, _) => r,
    };
    let specification_test = match &bounds {
        Ok(b) if b.is_empty() => {
            kind = Some(ExitKind::EmptySet);
            SpecificationTest {
                verdict: Verdict::Rejected,
                message: format!(
                    "estimated set is empty (lower {} > upper {}); the maintained assumptions are rejected",
                    b.lower, b.upper
                ),
            }
        }
        Ok(_) => SpecificationTest {
            verdict: Verdict::NotRejected,
            message: "estimated set is nonempty".into(),
        },
        Err(e) => {
            kind = Some(ExitKind::of(e));
            SpecificationTest {
                verdict: Verdict::NotEvaluated,
                message: format!("bounds unavailable: {e}"),
            }
        }
    };

    let mut confidence_intervals = Vec::new();
    let mut inference_error = None;
    if cfg.inference && matches!(&bounds, Ok(b) if !b.is_empty()) {
        let icfg = InferenceConfig {
            alpha: cfg.alphas[0],
            bootstrap: cfg.bootstrap,
            draws: cfg.draws,
            seed: cfg.seed,
            cluster_bootstrap: cfg.cluster_bootstrap,
            truncate_at_zero: cfg.truncate_at_zero,
            regime,
            divisor: cfg.divisor,
        };
        icfg.validate().map_err(Failure::usage)?;
        let intervals = BootstrapRun::new(sample, &icfg).and_then(|run| {
            cfg.alphas
                .iter()
                .map(|&a| run.interval(a, &icfg))
                .collect::<proxybounds_core::Result<Vec<_>>>()
        });
        match intervals {
            Ok(cis) => {
                confidence_intervals = cis
                    .into_iter()
                    .map(|ci| IntervalReport {
                        c_lb_truncated: if regime == Regime::NoSign {
                            ci.raw_c_lb
                        } else {
                            ci.raw_c_lb.max(0.0)
                        },
                        interval: ci,
                    })
                    .collect();
            }
            Err(e @ CoreError::InvalidConfig(_)) => return Err(Failure::usage(e)),
            Err(e) => {
                kind.get_or_insert(ExitKind::Inference);
                inference_error = Some(e.to_string());
            }
        }
    }
    Ok((
        RegimeReport {
            regime,
            assumptions,
            bounds: bounds.into(),
            refinement_error,
            specification_test,
            confidence_intervals,
            inference_error,
            oracle,
        },
        kind,
    ))
}

pub fn build_report(cfg: &AnalysisConfig, data: &LoadedData) -> CliResult<Report> {
    let sample = &data.sample;
    let m = moment_summary(&residualize(sample)?, cfg.divisor)?;
    let baselines = Baselines {
        b1_proxy1: reduced_form(&m, ProxyIndex::First).into(),
        b1_proxy2: reduced_form(&m, ProxyIndex::Second).into(),
        lubotsky_wittenberg: lubotsky_wittenberg(&m).into(),
    };
    let mut regimes = Vec::new();
    let mut kinds = Vec::new();
    for &r in &cfg.regimes {
        let (report, kind) = regime_report(cfg, sample, &m, r)?;
        regimes.push(report);
        kinds.extend(kind);
    }
    let kind = [
        ExitKind::Assumption,
        ExitKind::EmptySet,
        ExitKind::Inference,
        ExitKind::Other,
    ]
    .into_iter()
    .find(|k| kinds.contains(k))
    .unwrap_or(ExitKind::Success);
    let message = match kind {
        ExitKind::Success => "ok",
        ExitKind::Assumption => "data violate a testable assumption",
        ExitKind::EmptySet => "specification test rejected: empty identified set",
        ExitKind::Inference => "inference failed",
        _ => "bounds could not be computed",
    };
    Ok(Report {
        provenance: Provenance {
            tool_version: TOOL_VERSION.into(),
            input: cfg.input.display().to_string(),
            seed: cfg.seed,
            bootstrap: cfg.bootstrap,
            draws: cfg.draws,
            n: sample.n(),
            rows_read: data.rows_read,
            dropped_rows: data.dropped_rows,
            covariates: sample.covariate_count(),
            dropped_constant_columns: data.dropped_constant_columns.clone(),
            clusters: data.cluster_labels.as_ref().map(Vec::len),
        },
        settings: Settings {
            columns: cfg.columns.clone(),
            regimes: cfg.regimes.clone(),
            alphas: cfg.alphas.clone(),
            divisor: cfg.divisor,
            truncate_at_zero: cfg.truncate_at_zero,
            cluster_bootstrap: cfg.cluster_bootstrap,
            better_proxy: cfg.better_proxy,
            inference: cfg.inference,
        },
        moments: m,
        baselines,
        regimes,
        status: Status {
            exit_code: kind.code(),
            message: message.into(),
        },
    })
}

fn fmt_fallible(f: &Fallible<f64>) -> String {
    match (&f.value, &f.error) {
        (Some(v), _) => format!("{v:.6}"),
        (None, Some(e)) => format!("n/a ({e})"),
        _ => "n/a".into(),
    }
}

fn pct(alpha: f64) -> String {
    let p = format!("{:.2}", alpha * 100.0);
    let p = p.trim_end_matches('0').trim_end_matches('.');
    format!("{p}% CI")
}

/// Plain-text summary: estimate row followed by one row per coverage level.
pub fn render_table(r: &Report) -> String {
    let mut out = String::new();
    let p = &r.provenance;
    let _ = writeln!(
        out,
        "proxybounds {}  input {}  n = {} (read {}, dropped {})  covariates {}",
        p.tool_version, p.input, p.n, p.rows_read, p.dropped_rows, p.covariates
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<28}{}",
        "reduced form, proxy 1",
        fmt_fallible(&r.baselines.b1_proxy1)
    );
    let _ = writeln!(
        out,
        "{:<28}{}",
        "reduced form, proxy 2",
        fmt_fallible(&r.baselines.b1_proxy2)
    );
    let lw = &r.baselines.lubotsky_wittenberg;
    let lw = Fallible {
        value: lw.value.map(|v| v.b_star),
        error: lw.error.clone(),
    };
    let _ = writeln!(out, "{:<28}{}", "Lubotsky-Wittenberg b*", fmt_fallible(&lw));
    for g in &r.regimes {
        let _ = writeln!(out);
        let _ = writeln!(out, "[{}]", g.regime);
        let failures = g.assumptions.failures();
        let _ = writeln!(
            out,
            "  {:<26}{}",
            "assumptions",
            if failures.is_empty() {
                "ok".to_string()
            } else {
                format!("FAIL: {}", failures.join("; "))
            }
        );
        match (&g.bounds.value, &g.bounds.error) {
            (Some(b), _) => {
                let _ = writeln!(
                    out,
                    "  {:<26}[{:.6}, {:.6}]",
                    "identified set", b.lower, b.upper
                );
                let c = &b.components;
                let l1 = c.l1.map_or("-".to_string(), |v| format!("{v:.6}"));
                let _ = writeln!(
                    out,
                    "  {:<26}l1 {l1}  l2 {:.6}  l3 {:.6}",
                    "components", c.l2, c.l3
                );
            }
            (None, e) => {
                let _ = writeln!(
                    out,
                    "  {:<26}n/a ({})",
                    "identified set",
                    e.as_deref().unwrap_or("")
                );
            }
        }
        for ci in &g.confidence_intervals {
            let lower = if r.settings.truncate_at_zero {
                ci.c_lb_truncated
            } else {
                ci.interval.raw_c_lb
            };
            let _ = writeln!(
                out,
                "  {:<26}[{lower:.6}, {:.6}]{}",
                pct(ci.interval.alpha),
                ci.interval.c_ub,
                if ci.interval.crossed {
                    "  (crossed)"
                } else {
                    ""
                }
            );
        }
        if let Some(e) = &g.inference_error {
            let _ = writeln!(out, "  {:<26}failed: {e}", "confidence intervals");
        }
        if let Some(o) = &g.oracle {
            let text = match (&o.value, &o.error) {
                (Some(o), _) => format!(
                    "{} (step {}, max gap {})",
                    if o.agrees { "agrees" } else { "DISAGREES" },
                    o.grid_step,
                    o.max_endpoint_gap
                        .map_or("-".into(), |g| format!("{g:.2e}"))
                ),
                (None, e) => format!("failed: {}", e.as_deref().unwrap_or("")),
            };
            let _ = writeln!(out, "  {:<26}{text}", "grid oracle");
        }
        let verdict = match g.specification_test.verdict {
            Verdict::NotRejected => "not rejected",
            Verdict::Rejected => "REJECTED (empty set)",
            Verdict::NotEvaluated => "not evaluated",
        };
        let _ = writeln!(out, "  {:<26}{verdict}", "specification test");
    }
    out
}

pub fn run(cfg: &AnalysisConfig) -> CliResult<ExitKind> {
    let data = load_csv(&cfg.input, &cfg.columns).map_err(Failure::usage)?;
    let report = build_report(cfg, &data)?;
    if let Some(path) = &cfg.out {
        std::fs::write(path, report.to_json())
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(|e| Failure::new(ExitKind::Other, e))?;
    }
    print!("{}", render_table(&report));
    if report.exit_kind() != ExitKind::Success {
        log::warn!("{}", report.status.message);
    }
    Ok(report.exit_kind())
}
