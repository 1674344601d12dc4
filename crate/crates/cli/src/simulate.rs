//! Monte Carlo driver and synthetic data export.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use proxybounds_core::dgp::exact_moment_sample;
use proxybounds_core::inference::BootstrapRun;
use proxybounds_core::rng::{derive_seed, tag};
use proxybounds_core::{
    identify, latent_to_observable_moments, lubotsky_wittenberg, moment_summary, reduced_form,
    residualize, sample_dgp, BoundsResult, DivisorPolicy, InferenceConfig, LatentSpec,
    MomentSummary, ProxyIndex, Regime,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{SampleArgs, SimulateArgs};
use crate::data::write_sample_csv;
use crate::{CliResult, ExitKind, Failure};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub spec: LatentSpec,
    pub n: usize,
    pub reps: usize,
    pub covariates: usize,
    pub regime: Regime,
    pub seed: u64,
    /// Inference settings; `None` skips the confidence intervals.
    pub inference: Option<InferenceConfig>,
    pub divisor: DivisorPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRow {
    pub rep: usize,
    pub b1: Option<f64>,
    pub b_star: Option<f64>,
    pub lb_hat: Option<f64>,
    pub ub_hat: Option<f64>,
    pub c_lb: Option<f64>,
    pub c_ub: Option<f64>,
    pub covered: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub coverage: Option<f64>,
    pub coverage_reps: usize,
    pub bias_b1: Option<f64>,
    pub bias_b_star: Option<f64>,
    pub bias_lb_hat: Option<f64>,
    pub failed_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub spec: LatentSpec,
    pub n: usize,
    pub reps: usize,
    pub covariates: usize,
    pub regime: Regime,
    pub seed: u64,
    pub alpha: Option<f64>,
    pub true_set: BoundsResult,
    pub rows: Vec<RepRow>,
    /// Absent for a single replication.
    pub aggregate: Option<Aggregate>,
}

fn one_rep(cfg: &SimulationConfig, truth: &BoundsResult, rep: usize) -> RepRow {
    let rep_seed = derive_seed(cfg.seed, tag::SIMULATION, rep as u64);
    let mut row = RepRow {
        rep,
        b1: None,
        b_star: None,
        lb_hat: None,
        ub_hat: None,
        c_lb: None,
        c_ub: None,
        covered: None,
        error: None,
    };
    let result = (|| -> proxybounds_core::Result<()> {
        let s = sample_dgp(
            &cfg.spec,
            cfg.n,
            derive_seed(rep_seed, tag::DGP_ROWS, 0),
            cfg.covariates,
        )?;
        let m = moment_summary(&residualize(&s)?, cfg.divisor)?;
        row.b1 = reduced_form(&m, ProxyIndex::First).ok();
        row.b_star = lubotsky_wittenberg(&m).ok().map(|lw| lw.b_star);
        let b = identify(&m, cfg.regime)?;
        row.lb_hat = Some(b.lower);
        row.ub_hat = Some(b.upper);
        if let Some(icfg) = &cfg.inference {
            let icfg = InferenceConfig {
                seed: derive_seed(rep_seed, tag::BOOTSTRAP, 0),
                ..*icfg
            };
            let ci = BootstrapRun::new(&s, &icfg)?.interval(icfg.alpha, &icfg)?;
            row.c_lb = Some(ci.c_lb);
            row.c_ub = Some(ci.c_ub);
            row.covered = Some(ci.covers(truth.lower, truth.upper));
        }
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

fn mean_bias(values: impl Iterator<Item = Option<f64>>, target: f64) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().map(|x| x - target).sum::<f64>() / v.len() as f64)
}

pub fn simulate(cfg: &SimulationConfig) -> proxybounds_core::Result<SimulationReport> {
    if let Some(icfg) = &cfg.inference {
        icfg.validate()?;
    }
    let truth = identify(&latent_to_observable_moments(&cfg.spec), cfg.regime)?;
    let rows: Vec<RepRow> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| one_rep(cfg, &truth, r))
        .collect();
    let aggregate = (cfg.reps > 1).then(|| {
        let covered: Vec<bool> = rows.iter().filter_map(|r| r.covered).collect();
        let beta = cfg.spec.beta;
        Aggregate {
            coverage: (!covered.is_empty())
                .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64),
            coverage_reps: covered.len(),
            bias_b1: mean_bias(rows.iter().map(|r| r.b1), beta),
            bias_b_star: mean_bias(rows.iter().map(|r| r.b_star), beta),
            bias_lb_hat: mean_bias(rows.iter().map(|r| r.lb_hat), beta),
            failed_reps: rows.iter().filter(|r| r.error.is_some()).count(),
        }
    });
    Ok(SimulationReport {
        spec: cfg.spec,
        n: cfg.n,
        reps: cfg.reps,
        covariates: cfg.covariates,
        regime: cfg.regime,
        seed: cfg.seed,
        alpha: cfg.inference.map(|i| i.alpha),
        true_set: truth,
        rows,
        aggregate,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.6}"))
}

pub fn render(r: &SimulationReport, with_rows: bool) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "beta {}  true set [{:.6}, {:.6}]  n {}  reps {}  regime {}",
        r.spec.beta, r.true_set.lower, r.true_set.upper, r.n, r.reps, r.regime
    );
    if with_rows {
        let _ = writeln!(
            out,
            "{:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}",
            "rep", "b1", "b*", "lb_hat", "ub_hat", "c_lb", "c_ub", "covered"
        );
        for row in &r.rows {
            let covered = row.covered.map_or("-", |c| if c { "yes" } else { "no" });
            let _ = write!(
                out,
                "{:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}",
                row.rep,
                opt(row.b1),
                opt(row.b_star),
                opt(row.lb_hat),
                opt(row.ub_hat),
                opt(row.c_lb),
                opt(row.c_ub),
                covered
            );
            match &row.error {
                Some(e) => {
                    let _ = writeln!(out, "  error: {e}");
                }
                None => {
                    let _ = writeln!(out);
                }
            }
        }
    }
    if let Some(a) = &r.aggregate {
        let _ = writeln!(
            out,
            "coverage {} over {} reps  bias b1 {}  bias b* {}  bias lb_hat {}  failed {}",
            opt(a.coverage),
            a.coverage_reps,
            opt(a.bias_b1),
            opt(a.bias_b_star),
            opt(a.bias_lb_hat),
            a.failed_reps
        );
    }
    out
}

fn write_rows_csv(path: &Path, rows: &[RepRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_spec(path: &Path) -> CliResult<LatentSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::usage)?;
    Ok(LatentSpec::from_config_str(&text)?)
}

pub fn run(a: &SimulateArgs) -> CliResult<ExitKind> {
    let spec = load_spec(&a.spec)?;
    if a.reps == 0 {
        return Err(Failure::usage(anyhow::anyhow!("reps must be at least 1")));
    }
    let cfg = SimulationConfig {
        spec,
        n: a.n,
        reps: a.reps,
        covariates: a.covariates,
        regime: a.regime,
        seed: a.inference.seed,
        inference: (!a.no_inference).then(|| InferenceConfig {
            alpha: a.alpha,
            bootstrap: a.inference.bootstrap,
            draws: a.inference.draws,
            seed: a.inference.seed,
            cluster_bootstrap: false,
            truncate_at_zero: a.inference.truncate_at_zero,
            regime: a.regime,
            divisor: a.inference.divisor.into(),
        }),
        divisor: a.inference.divisor.into(),
    };
    let report = simulate(&cfg)?;
    let io = |e: anyhow::Error| Failure::new(ExitKind::Other, e);
    if let Some(path) = &a.csv {
        write_rows_csv(path, &report.rows).map_err(io)?;
    }
    if let Some(path) = &a.out {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        std::fs::write(path, json)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(io)?;
    }
    print!("{}", render(&report, a.csv.is_none()));
    Ok(ExitKind::Success)
}

pub fn write_sample(a: &SampleArgs) -> CliResult<ExitKind> {
    let sample = match (&a.spec, &a.moments) {
        (Some(path), _) => sample_dgp(&load_spec(path)?, a.n, a.seed, a.covariates)?,
        (None, Some(v)) => {
            if v.len() != 6 {
                return Err(Failure::usage(anyhow::anyhow!(
                    "--moments takes 6 values, got {}",
                    v.len()
                )));
            }
            let m = MomentSummary::population(v[0], v[1], v[2], v[3], v[4], v[5]);
            exact_moment_sample(&m, a.n, a.seed)?
        }
        (None, None) => {
            return Err(Failure::usage(anyhow::anyhow!(
                "either --spec or --moments is required"
            )))
        }
    };
    write_sample_csv(&a.out, &sample).map_err(|e| Failure::new(ExitKind::Other, e))?;
    Ok(ExitKind::Success)
}
