use std::fmt;
use std::str::FromStr;

use crate::Error;

/// Which extreme eigenvalue an energy refers to.
///
/// `Min` is the `mu > 0` branch (energy `lambda_min / 2`, entropy `Sigma_+`),
/// `Max` the `mu < 0` branch (energy `lambda_max / 2`, entropy `Sigma_-`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Min,
    Max,
}

impl Branch {
    /// Sign of the bias parameter on this branch.
    pub fn sign(self) -> f64 {
        match self {
            Branch::Min => 1.0,
            Branch::Max => -1.0,
        }
    }

    /// Branch selected by a nonzero `mu`.
    pub fn of_mu(mu: f64) -> Option<Branch> {
        if mu > 0.0 {
            Some(Branch::Min)
        } else if mu < 0.0 {
            Some(Branch::Max)
        } else {
            None
        }
    }

    /// True if `mu` is zero or carries this branch's sign.
    pub fn admits(self, mu: f64) -> bool {
        mu == 0.0 || Branch::of_mu(mu) == Some(self)
    }

    pub fn label(self) -> &'static str {
        match self {
            Branch::Min => "min",
            Branch::Max => "max",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "min" | "+" | "plus" => Ok(Branch::Min),
            "max" | "-" | "minus" => Ok(Branch::Max),
            other => Err(Error::parse(format!("unknown branch '{other}'"))),
        }
    }
}
