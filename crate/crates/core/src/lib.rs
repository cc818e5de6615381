//! Quickest change detection for exploding processes.
//!
//! Observations are i.i.d. with density `g` before an unknown change point
//! `nu` and follow an independent, nonstationary family `f_0, f_1, ...`
//! afterwards, where each `f_{n+1}` dominates `f_n` in monotone likelihood
//! ratio order. The sample at time `n >= nu` is drawn from `f_{n - nu}`, so
//! the post-change likelihood of an observation depends on where the change
//! happened.
//!
//! The crate is organised as:
//!
//! - [`models`]: density families, log-likelihood ratios, KL divergences and
//!   grid checks of the MLR / stochastic-dominance structure.
//! - [`process`]: seeded observation paths under the change-point model.
//! - [`detectors`]: the EX-CUSUM statistic, the exploding Shiryaev-Roberts
//!   statistic and the classic CUSUM baseline, plus stopping rules.
//! - [`conditions`]: numerical checks of the sufficient conditions for
//!   asymptotic optimality (Cesaro KL limit, moment bounds, SLLN, dominance).
//! - [`metrics`]: Monte Carlo estimates of mean time to false alarm and
//!   conditional detection delay.

#![forbid(unsafe_code)]

pub mod conditions;
pub mod detectors;
mod error;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod process;
pub mod quadrature;

pub use error::{Error, Result};
