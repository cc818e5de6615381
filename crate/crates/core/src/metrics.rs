//! Monte Carlo estimates of the false-alarm / detection-delay tradeoff.
//!
//! Every trial is seeded with [`trial_seed`] from the experiment seed and the
//! trial index, trials run in parallel, and results are aggregated in trial
//! order, so estimates are bit-identical for identical `(seed, trials,
//! horizon)` regardless of thread count.
//!
//! Censoring: a false-alarm run that reaches the horizon contributes the
//! horizon as its stopping time, which biases the ARL estimate downward
//! (conservative when checking `E_inf[tau] >= gamma`). A delay run that
//! reaches the horizon contributes `horizon + 1 - nu`, a lower bound on its
//! delay, and is counted in `censored`.
//!
//! Lorden's essential supremum over pre-change histories is not estimated:
//! with independent observations the post-change delay does not depend on
//! the pre-change history.

use rayon::prelude::*;
use serde::Serialize;

use crate::detectors::{run_detector, DetectorConfig, StopResult};
use crate::models::DensityModel;
use crate::numerics::{Moments, Z_95_ONE_SIDED};
use crate::process::{trial_seed, ChangePoint, Observations};
use crate::{Error, Result};

/// Upper limit on default false-alarm horizons.
pub const MAX_FALSE_ALARM_HORIZON: usize = 10_000_000;
/// Trials below which estimates carry a warning.
pub const MIN_ARL_TRIALS: usize = 100;
pub const MIN_CADD_TRIALS: usize = 1_000;

/// Threshold `A = log(gamma)` guaranteeing `E_inf[tau] >= gamma`.
pub fn threshold_for_gamma(gamma: f64) -> f64 {
    gamma.ln()
}

/// `20 e^A`, capped at [`MAX_FALSE_ALARM_HORIZON`].
pub fn default_false_alarm_horizon(threshold: f64) -> usize {
    let h = (20.0 * threshold.exp() * (1.0 - 1e-12)).ceil();
    if h.is_nan() || h >= MAX_FALSE_ALARM_HORIZON as f64 {
        MAX_FALSE_ALARM_HORIZON
    } else {
        (h as usize).max(1)
    }
}

/// Steps simulated after the change point: `10 ceil(A / I)`, at least 10.
pub fn default_delay_margin(threshold: f64, information: f64) -> usize {
    let steps = (threshold / information).ceil();
    if steps.is_finite() && steps >= 1.0 {
        10 * steps.min(1e6) as usize
    } else if steps.is_finite() {
        10
    } else {
        10_000_000
    }
}

/// Classification of one simulated run against its change point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum TrialOutcome {
    /// Stopped at or after the change; `delay = tau - nu`.
    Detected { tau: usize, delay: usize },
    /// Stopped before the change.
    FalseAlarm { tau: usize },
    Censored { horizon: usize },
}

impl TrialOutcome {
    pub fn classify(result: &StopResult, nu: ChangePoint) -> Self {
        match (*result, nu.time()) {
            (StopResult::Censored { horizon, .. }, _) => TrialOutcome::Censored { horizon },
            (StopResult::Stopped { tau, .. }, Some(nu)) if tau >= nu => TrialOutcome::Detected {
                tau,
                delay: tau - nu,
            },
            (StopResult::Stopped { tau, .. }, _) => TrialOutcome::FalseAlarm { tau },
        }
    }
}

/// Runs `trials` independent paths and returns their stop results in trial
/// order.
pub fn run_trials(
    model: &dyn DensityModel,
    detector: &DetectorConfig,
    threshold: f64,
    nu: ChangePoint,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<StopResult>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let obs = Observations::new(model, nu, trial_seed(seed, t));
            run_detector(detector, model, obs, threshold, horizon)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArlEstimate {
    pub threshold: f64,
    pub trials: usize,
    pub horizon: usize,
    /// Mean stopping time with censored runs counted at the horizon.
    pub mean_tau: f64,
    pub std_error: f64,
    pub censored_fraction: f64,
    /// One-sided 95% normal-approximation lower confidence bound.
    pub lcb95: f64,
    pub warnings: Vec<String>,
}

/// Mean time to false alarm `E_inf[tau]` under no change.
pub fn estimate_arl2fa(
    model: &dyn DensityModel,
    detector: &DetectorConfig,
    threshold: f64,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> Result<ArlEstimate> {
    if trials == 0 {
        return Err(Error::Estimation("no false-alarm trials requested".into()));
    }
    let mut warnings = Vec::new();
    if trials < MIN_ARL_TRIALS {
        warnings.push(format!(
            "{trials} trials is below the recommended {MIN_ARL_TRIALS}"
        ));
    }
    if (horizon as f64) < 10.0 * threshold.exp() {
        warnings.push(format!(
            "horizon {horizon} is below 10 e^A = {:.1}; the estimate is heavily censored",
            10.0 * threshold.exp()
        ));
    }

    let results = run_trials(
        model,
        detector,
        threshold,
        ChangePoint::Never,
        horizon,
        trials,
        seed,
    )?;
    let mut taus = Moments::new();
    let mut censored = 0usize;
    for r in &results {
        match r {
            StopResult::Stopped { tau, .. } => taus.push(*tau as f64),
            StopResult::Censored { horizon, .. } => {
                censored += 1;
                taus.push(*horizon as f64);
            }
        }
    }
    let mean_tau = taus.mean();
    let std_error = taus.std_error();
    Ok(ArlEstimate {
        threshold,
        trials,
        horizon,
        mean_tau,
        std_error,
        censored_fraction: censored as f64 / trials as f64,
        lcb95: mean_tau - Z_95_ONE_SIDED * std_error,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaddEstimate {
    pub nu: usize,
    pub threshold: f64,
    pub trials: usize,
    pub horizon: usize,
    /// Runs with `tau >= nu`, censored runs included.
    pub accepted: usize,
    pub false_alarms: usize,
    pub censored: usize,
    pub mean_delay: f64,
    pub std_error: f64,
    pub acceptance_rate: f64,
    pub warnings: Vec<String>,
}

/// Conditional average detection delay `E_nu[tau - nu | tau >= nu]`.
pub fn estimate_cadd(
    model: &dyn DensityModel,
    detector: &DetectorConfig,
    threshold: f64,
    nu: usize,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> Result<CaddEstimate> {
    let change = ChangePoint::at(nu)?;
    if horizon < nu {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} ends before the change point {nu}"
        )));
    }
    if trials == 0 {
        return Err(Error::Estimation("no delay trials requested".into()));
    }
    let mut warnings = Vec::new();
    if trials < MIN_CADD_TRIALS {
        warnings.push(format!(
            "{trials} trials is below the recommended {MIN_CADD_TRIALS}"
        ));
    }

    let results = run_trials(model, detector, threshold, change, horizon, trials, seed)?;
    let mut delays = Moments::new();
    let (mut false_alarms, mut censored) = (0, 0);
    for r in &results {
        match TrialOutcome::classify(r, change) {
            TrialOutcome::Detected { delay, .. } => delays.push(delay as f64),
            TrialOutcome::FalseAlarm { .. } => false_alarms += 1,
            TrialOutcome::Censored { horizon } => {
                censored += 1;
                delays.push((horizon + 1 - nu) as f64);
            }
        }
    }
    let accepted = delays.count();
    if accepted == 0 {
        return Err(Error::Estimation(format!(
            "no run reached the change point nu = {nu} without a false alarm"
        )));
    }
    if censored > 0 {
        warnings.push(format!(
            "{censored} runs were censored at the horizon; their delays are lower bounds"
        ));
    }
    Ok(CaddEstimate {
        nu,
        threshold,
        trials,
        horizon,
        accepted,
        false_alarms,
        censored,
        mean_delay: delays.mean(),
        std_error: delays.std_error(),
        acceptance_rate: accepted as f64 / trials as f64,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanCell {
    pub nu: usize,
    pub estimate: Option<CaddEstimate>,
    /// Why the cell has no estimate.
    pub flag: Option<String>,
}

/// Conditional delays over a finite grid of change points, a grid
/// approximation of the supremum over `nu`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayScan {
    pub cells: Vec<ScanCell>,
    pub worst_nu: Option<usize>,
    pub worst_delay: Option<f64>,
}

/// Runs [`estimate_cadd`] at every change point in `nu_grid` with horizon
/// `nu + margin`, sharing the experiment seed across cells.
pub fn worst_case_delay_scan(
    model: &dyn DensityModel,
    detector: &DetectorConfig,
    threshold: f64,
    nu_grid: &[usize],
    trials: usize,
    margin: usize,
    seed: u64,
) -> Result<DelayScan> {
    if nu_grid.is_empty() {
        return Err(Error::InvalidArgument("empty change-point grid".into()));
    }
    let mut cells = Vec::with_capacity(nu_grid.len());
    for &nu in nu_grid {
        let cell = match estimate_cadd(model, detector, threshold, nu, trials, nu + margin, seed) {
            Ok(est) => ScanCell {
                nu,
                estimate: Some(est),
                flag: None,
            },
            Err(Error::Estimation(msg)) => ScanCell {
                nu,
                estimate: None,
                flag: Some(msg),
            },
            Err(e) => return Err(e),
        };
        cells.push(cell);
    }
    let worst = cells
        .iter()
        .filter_map(|c| c.estimate.as_ref().map(|e| (c.nu, e.mean_delay)))
        .fold(None, |best: Option<(usize, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        });
    Ok(DelayScan {
        cells,
        worst_nu: worst.map(|w| w.0),
        worst_delay: worst.map(|w| w.1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub gamma: f64,
    pub threshold: f64,
    pub arl: ArlEstimate,
    /// Delay with the change at time 1.
    pub cadd: CaddEstimate,
    /// First-order delay `log(gamma) / I`.
    pub bound: f64,
}

/// For each `gamma`: threshold `log(gamma)`, ARL with the default
/// false-alarm horizon, and CADD at `nu = 1` with the default delay margin.
pub fn tradeoff_curve(
    model: &dyn DensityModel,
    detector: &DetectorConfig,
    gammas: &[f64],
    trials: usize,
    information: f64,
    seed: u64,
) -> Result<Vec<TradeoffRow>> {
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("no gamma values given".into()));
    }
    if gammas.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
        return Err(Error::InvalidArgument(
            "gamma values must be finite and positive".into(),
        ));
    }
    if gammas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "gamma values must be strictly increasing".into(),
        ));
    }
    gammas
        .iter()
        .map(|&gamma| {
            let threshold = threshold_for_gamma(gamma);
            let arl = estimate_arl2fa(
                model,
                detector,
                threshold,
                trials,
                default_false_alarm_horizon(threshold),
                seed,
            )?;
            let margin = default_delay_margin(threshold, information);
            let cadd = estimate_cadd(model, detector, threshold, 1, trials, 1 + margin, seed)?;
            Ok(TradeoffRow {
                gamma,
                threshold,
                arl,
                cadd,
                bound: threshold / information,
            })
        })
        .collect()
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "slope needs at least two paired points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("x values are all equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}
