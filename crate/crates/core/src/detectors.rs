//! Sequential detectors and stopping rules.
//!
//! - [`ExCusum`]: `W_n = max_{1<=k<=n} sum_{i=k}^n log f_{i-k}(X_i) / g(X_i)`,
//!   stopped at the first `n` with `W_n > A`.
//! - [`ShiryaevRoberts`]: `R_n = sum_{1<=k<=n} prod_{i=k}^n f_{i-k}(X_i) / g(X_i)`,
//!   kept as `log R_n`; `R_n - n` is a martingale before the change. Stopped
//!   at the first `n` with `log R_n > A`.
//! - [`Cusum`]: the stationary recursion `C_n = max(C_{n-1}, 0) + log f_0(X_n) / g(X_n)`,
//!   stopped at the first `n` with `C_n >= A`.
//!
//! Neither exploding statistic has a constant-memory recursion: the
//! likelihood of `X_i` under candidate `k` depends on `i - k`, so every
//! candidate carries its own running sum and each step costs
//! O(active candidates). [`ExCusum`] accepts an optional window that keeps
//! only the newest `M` candidates; this is an approximation with no
//! optimality guarantee.

use std::collections::VecDeque;
use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};

use crate::models::{fill_llr, llr, DensityModel};
use crate::{Error, Result};

/// EX-CUSUM state: one log-likelihood sum per retained candidate.
#[derive(Debug, Clone)]
pub struct ExCusum {
    window: Option<NonZeroUsize>,
    time: usize,
    /// `S_k(n)` for candidates `k = n, n-1, ...`, newest first, so that
    /// position `q` evaluates the next observation under `f_{q+1}`.
    sums: VecDeque<f64>,
    statistic: f64,
    argmax: usize,
    scratch: Vec<f64>,
}

impl ExCusum {
    pub fn new(window: Option<NonZeroUsize>) -> Self {
        Self {
            window,
            time: 0,
            sums: VecDeque::new(),
            statistic: f64::NEG_INFINITY,
            argmax: 0,
            scratch: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &dyn DensityModel, x: f64) -> Result<f64> {
        let active = self.sums.len();
        self.scratch.resize(active + 1, 0.0);
        fill_llr(model, x, &mut self.scratch)?;
        self.time += 1;

        add_shifted(&mut self.sums, &self.scratch[1..]);
        self.sums.push_front(self.scratch[0]);
        if let Some(m) = self.window {
            self.sums.truncate(m.get());
        }

        let (best_pos, best) = argmax(&self.sums);
        self.statistic = best;
        self.argmax = self.time - best_pos;
        Ok(best)
    }

    /// `W_n`; `-inf` before the first observation.
    pub fn statistic(&self) -> f64 {
        self.statistic
    }

    pub fn time(&self) -> usize {
        self.time
    }

    /// Oldest retained candidate change time.
    pub fn first_candidate(&self) -> usize {
        self.time + 1 - self.sums.len()
    }

    /// Candidate change time attaining `W_n`.
    pub fn argmax_candidate(&self) -> Option<usize> {
        (self.time > 0).then_some(self.argmax)
    }

    /// `S_k(n)` for the retained candidates, oldest first.
    pub fn candidate_sums(&self) -> impl Iterator<Item = f64> + '_ {
        self.sums.iter().rev().copied()
    }

    pub fn candidate_count(&self) -> usize {
        self.sums.len()
    }
}

/// `values[q] += increments[q]` across both halves of the ring buffer.
fn add_shifted(values: &mut VecDeque<f64>, increments: &[f64]) {
    let (front, back) = values.as_mut_slices();
    let (inc_front, inc_back) = increments.split_at(front.len());
    for (v, d) in front.iter_mut().zip(inc_front) {
        *v += d;
    }
    for (v, d) in back.iter_mut().zip(inc_back) {
        *v += d;
    }
}

/// Position and value of the first maximum. A NaN anywhere yields NaN.
fn argmax(values: &VecDeque<f64>) -> (usize, f64) {
    let (front, back) = values.as_slices();
    let best = slice_max(front).max(slice_max(back));
    if best.is_nan() || values.iter().any(|v| v.is_nan()) {
        return (0, f64::NAN);
    }
    let pos = values.iter().position(|&v| v == best).unwrap_or(0);
    (pos, best)
}

fn slice_max(values: &[f64]) -> f64 {
    let mut lanes = [f64::NEG_INFINITY; 4];
    let mut chunks = values.chunks_exact(4);
    for c in &mut chunks {
        for (l, &v) in lanes.iter_mut().zip(c) {
            *l = if v > *l { v } else { *l };
        }
    }
    let tail = chunks
        .remainder()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    lanes.into_iter().fold(tail, f64::max)
}

/// Exploding Shiryaev-Roberts state, kept in the log domain.
#[derive(Debug, Clone, Default)]
pub struct ShiryaevRoberts {
    time: usize,
    /// `log prod_{i=k}^n f_{i-k}(X_i) / g(X_i)` for `k = n, n-1, ..., 1`.
    log_products: VecDeque<f64>,
    log_r: f64,
    scratch: Vec<f64>,
}

impl ShiryaevRoberts {
    pub fn new() -> Self {
        Self {
            log_r: f64::NEG_INFINITY,
            ..Self::default()
        }
    }

    pub fn step(&mut self, model: &dyn DensityModel, x: f64) -> Result<f64> {
        let active = self.log_products.len();
        self.scratch.resize(active + 1, 0.0);
        fill_llr(model, x, &mut self.scratch)?;
        self.time += 1;

        add_shifted(&mut self.log_products, &self.scratch[1..]);
        self.log_products.push_front(self.scratch[0]);

        let max = self
            .log_products
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.log_r = if max.is_finite() {
            let sum: f64 = self.log_products.iter().map(|v| (v - max).exp()).sum();
            max + sum.ln()
        } else {
            max
        };
        Ok(self.log_r)
    }

    /// `log R_n`.
    pub fn log_statistic(&self) -> f64 {
        self.log_r
    }

    pub fn time(&self) -> usize {
        self.time
    }

    /// Per-candidate log products, oldest candidate first.
    pub fn log_products(&self) -> Vec<f64> {
        self.log_products.iter().rev().copied().collect()
    }
}

/// Classic CUSUM with stationary post-change density `f_0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Cusum {
    time: usize,
    statistic: f64,
}

impl Cusum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, model: &dyn DensityModel, x: f64) -> Result<f64> {
        let z = llr(model, 0, x)?;
        self.statistic = self.statistic.max(0.0) + z;
        self.time += 1;
        Ok(self.statistic)
    }

    pub fn statistic(&self) -> f64 {
        self.statistic
    }

    pub fn time(&self) -> usize {
        self.time
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "ex-cusum")]
    ExCusum,
    #[serde(rename = "sr")]
    ShiryaevRoberts,
    #[serde(rename = "cusum")]
    Cusum,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::ExCusum => "ex-cusum",
            DetectorKind::ShiryaevRoberts => "sr",
            DetectorKind::Cusum => "cusum",
        }
    }

    /// EX-CUSUM and SR stop on `statistic > A`; the CUSUM baseline on `>= A`.
    pub fn crosses(self, statistic: f64, threshold: f64) -> bool {
        match self {
            DetectorKind::ExCusum | DetectorKind::ShiryaevRoberts => statistic > threshold,
            DetectorKind::Cusum => statistic >= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// EX-CUSUM only: retain the newest `window` candidates.
    pub window: Option<NonZeroUsize>,
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind, window: Option<usize>) -> Result<Self> {
        let window = match window {
            None => None,
            Some(_) if kind != DetectorKind::ExCusum => {
                return Err(Error::InvalidArgument(format!(
                    "a candidate window applies only to ex-cusum, not {}",
                    kind.name()
                )))
            }
            Some(m) => Some(NonZeroUsize::new(m).ok_or_else(|| {
                Error::InvalidArgument("window must be >= 1".into())
            })?),
        };
        Ok(Self { kind, window })
    }

    pub fn plain(kind: DetectorKind) -> Self {
        Self { kind, window: None }
    }

    pub fn build(&self) -> Detector {
        match self.kind {
            DetectorKind::ExCusum => Detector::ExCusum(ExCusum::new(self.window)),
            DetectorKind::ShiryaevRoberts => Detector::ShiryaevRoberts(ShiryaevRoberts::new()),
            DetectorKind::Cusum => Detector::Cusum(Cusum::new()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Detector {
    ExCusum(ExCusum),
    ShiryaevRoberts(ShiryaevRoberts),
    Cusum(Cusum),
}

impl Detector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::ExCusum(_) => DetectorKind::ExCusum,
            Detector::ShiryaevRoberts(_) => DetectorKind::ShiryaevRoberts,
            Detector::Cusum(_) => DetectorKind::Cusum,
        }
    }

    /// Consumes one observation and returns the statistic compared against
    /// the threshold (`log R_n` for SR).
    pub fn step(&mut self, model: &dyn DensityModel, x: f64) -> Result<f64> {
        let value = match self {
            Detector::ExCusum(d) => d.step(model, x)?,
            Detector::ShiryaevRoberts(d) => d.step(model, x)?,
            Detector::Cusum(d) => d.step(model, x)?,
        };
        if value.is_nan() {
            return Err(Error::NanStatistic {
                time: self.time(),
                observation: x,
            });
        }
        Ok(value)
    }

    pub fn statistic(&self) -> f64 {
        match self {
            Detector::ExCusum(d) => d.statistic(),
            Detector::ShiryaevRoberts(d) => d.log_statistic(),
            Detector::Cusum(d) => d.statistic(),
        }
    }

    pub fn time(&self) -> usize {
        match self {
            Detector::ExCusum(d) => d.time(),
            Detector::ShiryaevRoberts(d) => d.time(),
            Detector::Cusum(d) => d.time(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum StopResult {
    /// First time the statistic crossed the threshold.
    Stopped { tau: usize, statistic: f64 },
    /// No crossing up to and including `horizon`.
    Censored { horizon: usize, statistic: f64 },
}

impl StopResult {
    pub fn tau(&self) -> Option<usize> {
        match *self {
            StopResult::Stopped { tau, .. } => Some(tau),
            StopResult::Censored { .. } => None,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, StopResult::Censored { .. })
    }
}

fn check_threshold(threshold: f64, horizon: usize) -> Result<()> {
    if threshold.is_nan() {
        return Err(Error::InvalidArgument("threshold is NaN".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    Ok(())
}

/// Runs a detector over at most `horizon` observations.
///
/// If the observation source ends before the horizon, the run is censored
/// at the last observation consumed.
pub fn run_detector<I>(
    config: &DetectorConfig,
    model: &dyn DensityModel,
    observations: I,
    threshold: f64,
    horizon: usize,
) -> Result<StopResult>
where
    I: IntoIterator<Item = f64>,
{
    check_threshold(threshold, horizon)?;
    let mut detector = config.build();
    let mut last = f64::NEG_INFINITY;
    for x in observations.into_iter().take(horizon) {
        last = detector.step(model, x)?;
        if config.kind.crosses(last, threshold) {
            return Ok(StopResult::Stopped {
                tau: detector.time(),
                statistic: last,
            });
        }
    }
    Ok(StopResult::Censored {
        horizon: detector.time(),
        statistic: last,
    })
}

/// Statistic after every observation, without stopping.
pub fn statistic_trace<I>(
    config: &DetectorConfig,
    model: &dyn DensityModel,
    observations: I,
) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = f64>,
{
    let mut detector = config.build();
    observations
        .into_iter()
        .map(|x| detector.step(model, x))
        .collect()
}

/// `W_n` recomputed from scratch by the literal double loop over candidate
/// `k` and time `i`. `n` is 1-based.
pub fn ex_cusum_brute(samples: &[f64], model: &dyn DensityModel, n: usize) -> Result<f64> {
    if n == 0 || n > samples.len() {
        return Err(Error::InvalidArgument(format!(
            "time {n} outside 1..={}",
            samples.len()
        )));
    }
    let mut best = f64::NEG_INFINITY;
    for k in 1..=n {
        let mut sum = 0.0;
        for i in k..=n {
            sum += llr(model, i - k, samples[i - 1])?;
        }
        best = best.max(sum);
    }
    Ok(best)
}

/// `W_1, ..., W_N` for every prefix of `samples`, with the loop order
/// reversed relative to the incremental update: for each candidate `k` the
/// sum is extended over `i` and offered to every `W_i`.
pub fn ex_cusum_brute_all(samples: &[f64], model: &dyn DensityModel) -> Result<Vec<f64>> {
    let n = samples.len();
    let mut w = vec![f64::NEG_INFINITY; n];
    for k in 1..=n {
        let mut sum = 0.0;
        for i in k..=n {
            sum += llr(model, i - k, samples[i - 1])?;
            if sum > w[i - 1] {
                w[i - 1] = sum;
            }
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianModel, MeanSchedule};
    use crate::process::{generate_path, trial_seed, ChangePoint, ChangeSpec};

    fn table(values: &[f64]) -> GaussianModel {
        GaussianModel::new(MeanSchedule::table(values.to_vec())).unwrap()
    }

    fn path(model: &GaussianModel, nu: ChangePoint, n: usize, seed: u64) -> Vec<f64> {
        generate_path(model, &ChangeSpec::new(nu, n, seed).unwrap()).samples
    }

    #[test]
    fn ex_cusum_hand_example() {
        // mu = (0.5, 0.75), X = (1, 2)
        let m = table(&[0.5, 0.75]);
        let mut d = ExCusum::new(None);
        assert!((d.step(&m, 1.0).unwrap() - 0.375).abs() < 1e-15);
        assert!((d.step(&m, 2.0).unwrap() - 1.593_75).abs() < 1e-15);
        assert_eq!(d.argmax_candidate(), Some(1));
        let sums: Vec<f64> = d.candidate_sums().collect();
        assert_eq!(sums, vec![1.593_75, 0.875]);
    }

    #[test]
    fn ex_cusum_zero_schedule_stays_zero() {
        let m = table(&[0.0]);
        let mut d = ExCusum::new(None);
        for x in path(&m, ChangePoint::Never, 50, 1) {
            assert_eq!(d.step(&m, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn ex_cusum_first_step_is_llr0() {
        let m = GaussianModel::arctangent();
        let m2 = table(&[0.3, 0.9]);
        for x in [-1.2, 0.4, 3.0] {
            let mut d = ExCusum::new(None);
            assert!((d.step(&m, x).unwrap() - llr(&m, 0, x).unwrap()).abs() < 1e-14);
            let mut d = ExCusum::new(None);
            assert!((d.step(&m2, x).unwrap() - llr(&m2, 0, x).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn ex_cusum_invariants_hold_along_a_path() {
        let m = GaussianModel::arctangent();
        let mut d = ExCusum::new(None);
        for (t, x) in path(&m, ChangePoint::at(30).unwrap(), 80, 4).into_iter().enumerate() {
            let w = d.step(&m, x).unwrap();
            assert_eq!(d.candidate_count(), t + 1);
            let max = d.candidate_sums().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(w, max);
            assert!(w >= llr(&m, 0, x).unwrap() - 1e-14);
        }
    }

    #[test]
    fn ex_cusum_matches_brute_force() {
        let m = GaussianModel::arctangent();
        for seed in 0..5 {
            let xs = path(&m, ChangePoint::at(40).unwrap(), 120, trial_seed(77, seed));
            let all = ex_cusum_brute_all(&xs, &m).unwrap();
            let mut d = ExCusum::new(None);
            for (i, &x) in xs.iter().enumerate() {
                let w = d.step(&m, x).unwrap();
                assert!((w - all[i]).abs() < 1e-9);
                if i % 17 == 0 {
                    assert!((w - ex_cusum_brute(&xs, &m, i + 1).unwrap()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn brute_edge_cases() {
        let m = GaussianModel::arctangent();
        let xs = [0.7, -0.2];
        assert_eq!(ex_cusum_brute(&xs, &m, 1).unwrap(), llr(&m, 0, 0.7).unwrap());
        assert!(ex_cusum_brute(&xs, &m, 0).is_err());
        assert!(ex_cusum_brute(&xs, &m, 3).is_err());
        assert_eq!(ex_cusum_brute(&xs, &table(&[0.0]), 2).unwrap(), 0.0);
    }

    #[test]
    fn window_drops_old_candidates() {
        let m = GaussianModel::arctangent();
        let xs = path(&m, ChangePoint::at(5).unwrap(), 30, 8);
        let mut windowed = ExCusum::new(NonZeroUsize::new(4));
        let mut full = ExCusum::new(NonZeroUsize::new(30));
        let mut plain = ExCusum::new(None);
        for x in &xs {
            windowed.step(&m, *x).unwrap();
            let a = full.step(&m, *x).unwrap();
            let b = plain.step(&m, *x).unwrap();
            assert_eq!(a, b);
            assert!(windowed.candidate_count() <= 4);
        }
        assert_eq!(windowed.first_candidate(), 27);
        let plain_tail: Vec<f64> = plain.candidate_sums().skip(26).collect();
        let windowed_all: Vec<f64> = windowed.candidate_sums().collect();
        assert_eq!(plain_tail, windowed_all);
    }

    #[test]
    fn cusum_matches_constant_schedule_ex_cusum() {
        let m = GaussianModel::new(MeanSchedule::constant(0.8)).unwrap();
        for seed in 0..10 {
            let mut ex = ExCusum::new(None);
            let mut cu = Cusum::new();
            for x in path(&m, ChangePoint::at(100).unwrap(), 300, seed) {
                let a = ex.step(&m, x).unwrap();
                let b = cu.step(&m, x).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cusum_edge_cases() {
        let zero = table(&[0.0]);
        let mut c = Cusum::new();
        for x in [1.0, -3.0, 2.0] {
            assert_eq!(c.step(&zero, x).unwrap(), 0.0);
        }
        let m = table(&[1.0]);
        let mut c = Cusum::new();
        assert!((c.step(&m, 0.2).unwrap() - llr(&m, 0, 0.2).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn sr_zero_schedule_counts_time() {
        let m = table(&[0.0]);
        let mut sr = ShiryaevRoberts::new();
        for n in 1..=40 {
            let log_r = sr.step(&m, 0.3 * n as f64 - 5.0).unwrap();
            assert!((log_r.exp() - n as f64).abs() < 1e-9 * n as f64);
        }
    }

    #[test]
    fn sr_first_step_is_likelihood_ratio() {
        let m = table(&[0.6]);
        let mut sr = ShiryaevRoberts::new();
        let v = sr.step(&m, 1.1).unwrap();
        assert!((v - llr(&m, 0, 1.1).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn sr_dominates_ex_cusum() {
        let m = GaussianModel::arctangent();
        let mut sr = ShiryaevRoberts::new();
        let mut ex = ExCusum::new(None);
        for x in path(&m, ChangePoint::at(50).unwrap(), 120, 3) {
            let log_r = sr.step(&m, x).unwrap();
            let w = ex.step(&m, x).unwrap();
            assert!(log_r >= w - 1e-12);
            let lse = crate::numerics::log_sum_exp(&sr.log_products());
            assert!((lse - log_r).abs() < 1e-12);
        }
    }

    #[test]
    fn sr_handles_exploding_products() {
        let m = table(&[30.0]);
        let mut sr = ShiryaevRoberts::new();
        for _ in 0..50 {
            sr.step(&m, 30.0).unwrap();
        }
        assert!(sr.log_statistic().is_finite());
        assert!(sr.log_statistic() > 20_000.0);
    }

    #[test]
    fn run_detector_thresholds() {
        let m = GaussianModel::arctangent();
        let xs = path(&m, ChangePoint::at(20).unwrap(), 100, 2);
        let cfg = DetectorConfig::plain(DetectorKind::ExCusum);
        let r = run_detector(&cfg, &m, xs.iter().copied(), -1.0, 100).unwrap();
        // arctan: mu_0 = 0 so W_1 = 0 > -1
        assert_eq!(r.tau(), Some(1));
        let r = run_detector(&cfg, &m, xs.iter().copied(), f64::INFINITY, 100).unwrap();
        assert_eq!(
            r,
            StopResult::Censored {
                horizon: 100,
                statistic: r_stat(&r)
            }
        );
        assert!(run_detector(&cfg, &m, xs.iter().copied(), f64::NAN, 100).is_err());
    }

    fn r_stat(r: &StopResult) -> f64 {
        match *r {
            StopResult::Stopped { statistic, .. } | StopResult::Censored { statistic, .. } => statistic,
        }
    }

    #[test]
    fn strict_versus_weak_crossing() {
        // W_1 = 0 exactly under the arctan schedule (mu_0 = 0).
        let m = GaussianModel::arctangent();
        let xs = [0.5, 0.5];
        let ex = DetectorConfig::plain(DetectorKind::ExCusum);
        let r = run_detector(&ex, &m, xs, 0.0, 1).unwrap();
        assert!(r.is_censored());
        let cu = DetectorConfig::plain(DetectorKind::Cusum);
        let r = run_detector(&cu, &m, xs, 0.0, 1).unwrap();
        assert_eq!(r.tau(), Some(1));
    }

    #[test]
    fn threshold_monotonicity_pathwise() {
        let m = GaussianModel::arctangent();
        let cfg = DetectorConfig::plain(DetectorKind::ExCusum);
        for seed in 0..20 {
            let xs = path(&m, ChangePoint::at(30).unwrap(), 200, seed);
            let mut prev = 0;
            for a in [0.5, 1.0, 2.0, 4.0, 6.0, 8.0] {
                let tau = run_detector(&cfg, &m, xs.iter().copied(), a, 200)
                    .unwrap()
                    .tau()
                    .unwrap_or(201);
                assert!(tau >= prev);
                prev = tau;
            }
        }
    }

    #[test]
    fn nan_observation_is_a_domain_error() {
        let m = GaussianModel::arctangent();
        let cfg = DetectorConfig::plain(DetectorKind::ShiryaevRoberts);
        let err = run_detector(&cfg, &m, [0.1, f64::NAN], 100.0, 10).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn window_config_validation() {
        assert!(DetectorConfig::new(DetectorKind::ExCusum, Some(0)).is_err());
        assert!(DetectorConfig::new(DetectorKind::Cusum, Some(5)).is_err());
        assert!(DetectorConfig::new(DetectorKind::ExCusum, Some(5)).is_ok());
    }
}
