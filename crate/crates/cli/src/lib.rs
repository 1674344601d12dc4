//! Command-line front end: CSV analysis reports, Monte Carlo simulation and
//! the built-in example gallery.

pub mod analyze;
pub mod args;
pub mod data;
pub mod gallery;
pub mod simulate;

use std::fmt;

use proxybounds_core::Error as CoreError;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Success,
    Other,
    Usage,
    Assumption,
    EmptySet,
    Inference,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        match self {
            ExitKind::Success => 0,
            ExitKind::Other => 1,
            ExitKind::Usage => 2,
            ExitKind::Assumption => 3,
            ExitKind::EmptySet => 4,
            ExitKind::Inference => 5,
        }
    }

    pub fn of(e: &CoreError) -> Self {
        match e {
            CoreError::InvalidSample(_)
            | CoreError::InvalidSpec(_)
            | CoreError::NonPsdSpec { .. }
            | CoreError::InvalidConfig(_)
            | CoreError::Shape(_)
            | CoreError::Parse(_)
            | CoreError::InsufficientData { .. } => ExitKind::Usage,
            CoreError::AssumptionViolation { .. } | CoreError::SignViolation { .. } => {
                ExitKind::Assumption
            }
            CoreError::DegenerateBootstrap(_) | CoreError::Inference(_) => ExitKind::Inference,
            _ => ExitKind::Other,
        }
    }
}

/// An error tagged with the exit status it should produce.
#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: ExitKind, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            kind,
            error: error.into(),
        }
    }

    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure::new(ExitKind::Usage, error)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::new(ExitKind::of(&e), e)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Runs a parsed command line, returning the exit status.
pub fn run(cli: args::Cli) -> CliResult<ExitKind> {
    match cli.command {
        args::Command::Analyze(a) => {
            let cfg = a.into_config().map_err(Failure::usage)?;
            analyze::run(&cfg)
        }
        args::Command::Simulate(a) => simulate::run(&a),
        args::Command::Examples => {
            print!("{}", gallery::render(&gallery::build()?));
            Ok(ExitKind::Success)
        }
        args::Command::Sample(a) => simulate::write_sample(&a),
    }
}
