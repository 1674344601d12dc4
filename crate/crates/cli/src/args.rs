use std::path::PathBuf;

use anyhow::{bail, ensure};
use clap::{Args, Parser, Subcommand, ValueEnum};
use proxybounds_core::{BetterProxy, DivisorPolicy, Regime};

use crate::analyze::AnalysisConfig;
use crate::data::ColumnMap;

#[derive(Debug, Parser)]
#[command(
    name = "proxybounds",
    version,
    about = "Bounds on a regression slope measured with two error-ridden proxies"
)]
pub struct Cli {
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate bounds and confidence intervals from a CSV file.
    Analyze(AnalyzeArgs),
    /// Monte Carlo study of the estimators under a latent specification.
    Simulate(SimulateArgs),
    /// Print the built-in gallery of analytic examples.
    Examples,
    /// Write a simulated data set to CSV.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DivisorArg {
    /// Divide by n - 1.
    N1,
    /// Divide by n.
    N,
}

impl From<DivisorArg> for DivisorPolicy {
    fn from(d: DivisorArg) -> Self {
        match d {
            DivisorArg::N1 => DivisorPolicy::NMinus1,
            DivisorArg::N => DivisorPolicy::N,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BetterProxyArg {
    /// Proxy 1 has the smaller error variance.
    Proxy1,
    /// Proxy 2 has the smaller error variance.
    Proxy2,
}

impl From<BetterProxyArg> for BetterProxy {
    fn from(b: BetterProxyArg) -> Self {
        match b {
            BetterProxyArg::Proxy1 => BetterProxy::Proxy1Better,
            BetterProxyArg::Proxy2 => BetterProxy::Proxy2Better,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InferenceArgs {
    /// Bootstrap replicates.
    #[arg(long = "bootstrap", default_value_t = 1000)]
    pub bootstrap: usize,
    /// Normal draws for the critical values.
    #[arg(long, default_value_t = 10000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = DivisorArg::N1)]
    pub divisor: DivisorArg,
    /// Clip the lower confidence bound at zero.
    #[arg(long)]
    pub truncate_at_zero: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub outcome: String,
    #[arg(long)]
    pub proxy1: String,
    #[arg(long)]
    pub proxy2: String,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Cluster identifier column; switches to the cluster bootstrap.
    #[arg(long)]
    pub cluster: Option<String>,
    #[arg(long, value_delimiter = ',', default_value = "baseline")]
    pub regime: Vec<Regime>,
    /// Coverage levels of the confidence intervals.
    #[arg(long, value_delimiter = ',', default_value = "0.90,0.99")]
    pub alpha: Vec<f64>,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Cross-check the closed-form bounds against a grid search.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub oracle_step: f64,
    /// Rank the proxies by error variance to tighten the baseline set.
    #[arg(long, value_enum)]
    pub better_proxy: Option<BetterProxyArg>,
    /// Report point estimates only.
    #[arg(long)]
    pub no_inference: bool,
    /// Path of the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn check_alpha(alpha: f64) -> anyhow::Result<()> {
    ensure!(
        alpha > 0.5 && alpha < 1.0,
        "alpha must lie in (0.5, 1), got {alpha}"
    );
    Ok(())
}

impl AnalyzeArgs {
    pub fn into_config(self) -> anyhow::Result<AnalysisConfig> {
        ensure!(!self.regime.is_empty(), "at least one regime is required");
        ensure!(!self.alpha.is_empty(), "at least one alpha is required");
        for &a in &self.alpha {
            check_alpha(a)?;
        }
        ensure!(self.oracle_step > 0.0, "oracle step must be positive");
        let mut regimes = Vec::new();
        for r in self.regime {
            if regimes.contains(&r) {
                bail!("regime `{r}` requested twice");
            }
            regimes.push(r);
        }
        let columns = ColumnMap {
            outcome: self.outcome,
            proxy1: self.proxy1,
            proxy2: self.proxy2,
            covariates: self.covariates,
            cluster: self.cluster,
        };
        columns.validate()?;
        Ok(AnalysisConfig {
            input: self.input,
            cluster_bootstrap: columns.cluster.is_some(),
            columns,
            regimes,
            alphas: self.alpha,
            bootstrap: self.inference.bootstrap,
            draws: self.inference.draws,
            seed: self.inference.seed,
            divisor: self.inference.divisor.into(),
            truncate_at_zero: self.inference.truncate_at_zero,
            oracle: self.oracle.then_some(self.oracle_step),
            better_proxy: self.better_proxy.map(Into::into),
            inference: !self.no_inference,
            out: self.out,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Latent specification file (`key = value` lines).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Number of exogenous covariates in each simulated sample.
    #[arg(long, default_value_t = 0)]
    pub covariates: usize,
    #[arg(long, default_value = "baseline")]
    pub regime: Regime,
    #[arg(long, default_value_t = 0.90, value_parser = parse_alpha)]
    pub alpha: f64,
    #[command(flatten)]
    pub inference: InferenceArgs,
    /// Skip the confidence intervals.
    #[arg(long)]
    pub no_inference: bool,
    /// Path of the JSON summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Path of the per-replication CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.parse().map_err(|e| format!("{e}"))?;
    check_alpha(a).map_err(|e| e.to_string())?;
    Ok(a)
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    /// Latent specification file.
    #[arg(long, conflicts_with = "moments", required_unless_present = "moments")]
    pub spec: Option<PathBuf>,
    /// Target sample moments `var_y,var_z1,var_z2,cov_z1y,cov_z2y,cov_z1z2`,
    /// matched exactly.
    #[arg(long, value_delimiter = ',')]
    pub moments: Option<Vec<f64>>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0, conflicts_with = "moments")]
    pub covariates: usize,
    #[arg(long)]
    pub out: PathBuf,
}
