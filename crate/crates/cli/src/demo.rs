//! Single-path demonstration and its repeated-seed summary.

use excusum::detectors::{statistic_trace, DetectorConfig};
use excusum::models::DensityModel;
use excusum::process::{generate_path, trial_seed, ChangePoint, ChangeSpec};
use rayon::prelude::*;
use serde::Serialize;

pub const DEFAULT_NU: usize = 80;
pub const DEFAULT_HORIZON: usize = 200;
pub const DEFAULT_GAMMA: f64 = 1000.0;
/// A demo run counts as a timely detection when `nu <= tau <= nu + 20`.
pub const DETECTION_WINDOW: usize = 20;
/// Fraction of seeds that must meet each demo criterion.
pub const REQUIRED_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoRun {
    pub seed: u64,
    pub samples: Vec<f64>,
    /// Statistic after every observation; the run does not stop at `tau`.
    pub statistics: Vec<f64>,
    /// First crossing of the threshold, if any.
    pub tau: Option<usize>,
    /// `max_{n < nu} W_n`; the whole path when there is no change.
    pub pre_change_max: Option<f64>,
}

pub fn demo_run(
    model: &dyn DensityModel,
    detector: &DetectorConfig,
    threshold: f64,
    nu: ChangePoint,
    horizon: usize,
    seed: u64,
) -> excusum::Result<DemoRun> {
    let path = generate_path(model, &ChangeSpec::new(nu, horizon, seed)?);
    let statistics = statistic_trace(detector, model, path.samples.iter().copied())?;
    let tau = statistics
        .iter()
        .position(|&w| detector.kind.crosses(w, threshold))
        .map(|i| i + 1);
    let pre_len = nu.time().map_or(horizon, |t| (t - 1).min(horizon));
    let pre_change_max = statistics[..pre_len]
        .iter()
        .copied()
        .reduce(f64::max);
    Ok(DemoRun {
        seed,
        samples: path.samples,
        statistics,
        tau,
        pre_change_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoSummary {
    pub runs: usize,
    pub threshold: f64,
    pub nu: ChangePoint,
    pub horizon: usize,
    /// Runs whose pre-change statistic stayed below the threshold.
    pub quiet_before_change: usize,
    /// Runs with `nu <= tau <= nu + DETECTION_WINDOW` (finite `nu` only).
    pub timely_detections: Option<usize>,
    /// Runs whose final statistic is below the threshold (no change only).
    pub below_at_horizon: Option<usize>,
    pub pass: bool,
}

/// Repeats [`demo_run`] for `runs` seeds derived from `seed`.
pub fn demo_summary(
    model: &dyn DensityModel,
    detector: &DetectorConfig,
    threshold: f64,
    nu: ChangePoint,
    horizon: usize,
    runs: usize,
    seed: u64,
) -> excusum::Result<DemoSummary> {
    let results = (0..runs as u64)
        .into_par_iter()
        .map(|i| demo_run(model, detector, threshold, nu, horizon, trial_seed(seed, i)))
        .collect::<excusum::Result<Vec<_>>>()?;
    let count = |f: &dyn Fn(&DemoRun) -> bool| results.iter().filter(|r| f(r)).count();
    let quiet = count(&|r| r.pre_change_max.is_none_or(|m| m < threshold));
    let (timely, below) = match nu.time() {
        Some(t) => (
            Some(count(&|r| {
                r.tau.is_some_and(|tau| tau >= t && tau <= t + DETECTION_WINDOW)
            })),
            None,
        ),
        None => (
            None,
            Some(count(&|r| r.statistics.last().is_some_and(|&w| w < threshold))),
        ),
    };
    let enough = |c: usize| c as f64 >= REQUIRED_FRACTION * runs as f64;
    let pass = runs > 0
        && enough(quiet)
        && timely.is_none_or(enough)
        && below.is_none_or(enough);
    Ok(DemoSummary {
        runs,
        threshold,
        nu,
        horizon,
        quiet_before_change: quiet,
        timely_detections: timely,
        below_at_horizon: below,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use excusum::detectors::DetectorKind;
    use excusum::models::GaussianModel;

    #[test]
    fn demo_run_bookkeeping() {
        let m = GaussianModel::arctangent();
        let det = DetectorConfig::plain(DetectorKind::ExCusum);
        let nu = ChangePoint::at(80).unwrap();
        let r = demo_run(&m, &det, 1000f64.ln(), nu, 200, 7).unwrap();
        assert_eq!(r.samples.len(), 200);
        assert_eq!(r.statistics.len(), 200);
        let expected_max = r.statistics[..79].iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(r.pre_change_max, Some(expected_max));
        if let Some(tau) = r.tau {
            assert!(r.statistics[tau - 1] > 1000f64.ln());
            assert!(r.statistics[..tau - 1].iter().all(|&w| w <= 1000f64.ln()));
        }
        assert_eq!(r, demo_run(&m, &det, 1000f64.ln(), nu, 200, 7).unwrap());
    }

    #[test]
    fn change_at_one_has_no_pre_change_segment() {
        let m = GaussianModel::arctangent();
        let det = DetectorConfig::plain(DetectorKind::ExCusum);
        let r = demo_run(&m, &det, 3.0, ChangePoint::at(1).unwrap(), 50, 1).unwrap();
        assert_eq!(r.pre_change_max, None);
    }

    #[test]
    fn no_change_summary_counts_final_statistic() {
        let m = GaussianModel::arctangent();
        let det = DetectorConfig::plain(DetectorKind::ExCusum);
        let s = demo_summary(&m, &det, 1000f64.ln(), ChangePoint::Never, 200, 200, 3).unwrap();
        assert!(s.timely_detections.is_none());
        assert!(s.below_at_horizon.unwrap() >= s.quiet_before_change);
        assert!(s.pass, "{s:?}");
    }
}
