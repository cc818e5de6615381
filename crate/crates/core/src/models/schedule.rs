use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Post-change mean sequence `mu_0, mu_1, ...` of a Gaussian exploding family.
///
/// Built-in kinds are nondecreasing and converge to their limit. The
/// explicit table is unconstrained apart from non-negativity so that
/// counterexamples (decreasing means) can be expressed; it is extended by
/// its last value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeanSchedule {
    /// `mu_n = mu`.
    Constant { mu: f64 },
    /// `mu_n = mu * arctan(rate * n) / (pi / 2)`; `mu = pi/2, rate = 1`
    /// gives `arctan(n)`.
    Arctangent { mu: f64, rate: f64 },
    /// `mu_n = min(slope * n, mu)`.
    LinearSaturating { mu: f64, slope: f64 },
    /// `mu_n = mu * (1 - ratio^n)`.
    GeometricApproach { mu: f64, ratio: f64 },
    /// `mu_n = table[min(n, len - 1)]`.
    ExplicitTable { table: Vec<f64> },
}

impl MeanSchedule {
    /// `mu_n = arctan(n)`, limit `pi / 2`.
    pub fn arctangent() -> Self {
        Self::Arctangent {
            mu: FRAC_PI_2,
            rate: 1.0,
        }
    }

    pub fn constant(mu: f64) -> Self {
        Self::Constant { mu }
    }

    pub fn table(values: impl Into<Vec<f64>>) -> Self {
        Self::ExplicitTable {
            table: values.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_mu = |mu: f64| {
            if mu.is_finite() && mu >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "schedule limit mu must be finite and >= 0, got {mu}"
                )))
            }
        };
        match *self {
            Self::Constant { mu } => check_mu(mu),
            Self::Arctangent { mu, rate } => {
                check_mu(mu)?;
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "arctangent rate must be finite and > 0, got {rate}"
                    )));
                }
                Ok(())
            }
            Self::LinearSaturating { mu, slope } => {
                check_mu(mu)?;
                if !(slope.is_finite() && slope > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "linear-saturating slope must be finite and > 0, got {slope}"
                    )));
                }
                Ok(())
            }
            Self::GeometricApproach { mu, ratio } => {
                check_mu(mu)?;
                if !(0.0..1.0).contains(&ratio) {
                    return Err(Error::InvalidArgument(format!(
                        "geometric ratio must lie in [0, 1), got {ratio}"
                    )));
                }
                Ok(())
            }
            Self::ExplicitTable { ref table } => {
                if table.is_empty() {
                    return Err(Error::InvalidArgument("mean table is empty".into()));
                }
                if let Some((i, v)) = table
                    .iter()
                    .enumerate()
                    .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
                {
                    return Err(Error::InvalidArgument(format!(
                        "mean table entry {i} must be finite and >= 0, got {v}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `mu_n`.
    pub fn mean(&self, n: usize) -> f64 {
        match *self {
            Self::Constant { mu } => mu,
            Self::Arctangent { mu, rate } => (mu / FRAC_PI_2) * (rate * n as f64).atan(),
            Self::LinearSaturating { mu, slope } => (slope * n as f64).min(mu),
            Self::GeometricApproach { mu, ratio } => mu * (1.0 - ratio.powf(n as f64)),
            Self::ExplicitTable { ref table } => table[n.min(table.len() - 1)],
        }
    }

    /// The limit `mu` of the sequence.
    pub fn limit(&self) -> f64 {
        match *self {
            Self::Constant { mu }
            | Self::Arctangent { mu, .. }
            | Self::LinearSaturating { mu, .. }
            | Self::GeometricApproach { mu, .. } => mu,
            Self::ExplicitTable { ref table } => *table.last().expect("validated table"),
        }
    }

    /// Largest mean over the whole sequence.
    pub fn supremum(&self) -> f64 {
        match self {
            Self::ExplicitTable { table } => table.iter().copied().fold(0.0, f64::max),
            _ => self.limit(),
        }
    }

    pub fn is_nondecreasing(&self) -> bool {
        match self {
            Self::ExplicitTable { table } => table.windows(2).all(|w| w[0] <= w[1]),
            _ => true,
        }
    }
}
