use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Which set of identifying assumptions is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Known nonnegative sign and nonnegatively correlated measurement errors.
    Baseline,
    /// Known sign, covariance between the measurement errors unrestricted.
    FreeCov,
    /// Sign of the slope learned from the reduced forms.
    NoSign,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Baseline => "baseline",
            Regime::FreeCov => "free_cov",
            Regime::NoSign => "no_sign",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" => Ok(Regime::Baseline),
            "free_cov" => Ok(Regime::FreeCov),
            "no_sign" => Ok(Regime::NoSign),
            other => Err(crate::Error::Parse(format!("unknown regime `{other}`"))),
        }
    }
}
