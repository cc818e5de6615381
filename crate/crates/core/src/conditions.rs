//! Numerical checks of the sufficient conditions for asymptotic optimality
//! of EX-CUSUM.
//!
//! Observation `X_k` (1-based) under a change at time 1 is drawn from
//! `f_{k-1}`, so the LLR term `Z_k = log f_{k-1}(X_k) / g(X_k)` has mean
//! `D(f_{k-1} || g)`. The checks are:
//!
//! * MLR ordering of `g, f_0, f_1, ...` on a grid,
//! * convergence of the Cesàro average of `D(f_{k-1} || g)` to some `I > 0`,
//! * a uniform bound on the centred fourth moment of `Z_k`,
//! * shrinking deviations of `(1/n) sum Z_k` from `I`,
//! * stochastic ordering of LLR sums started at later candidate times.
//!
//! Almost-sure statements cannot be checked by simulation; a passing SLLN
//! check is reported as consistent with a.s. convergence and nothing more.

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::{default_grid, kl_divergence, verify_mlr, Density, DensityModel, KlMethod};
use crate::numerics::{quantile_sorted, CompensatedSum, Moments};
use crate::process::{trial_seed, ChangePoint, Observations, PathRng};
use crate::{Error, Result};

/// Cesàro limits at or below this are treated as `I = 0`.
pub const MIN_INFORMATION: f64 = 1e-12;
/// Confidence level of the empirical-CDF slack in [`sum_dominance_check`].
pub const DOMINANCE_CONFIDENCE: f64 = 0.99;
pub const MIN_MOMENT_TRIALS: usize = 10_000;
pub const MIN_SLLN_TRIALS: usize = 1_000;
pub const MIN_DOMINANCE_TRIALS: usize = 10_000;
/// Wording used whenever the SLLN evidence is summarised.
pub const SLLN_NOTE: &str = "consistent with a.s. convergence (simulation evidence, not a proof)";

/// Standard errors of slack allowed above the fourth-moment bound.
const MOMENT_SLACK_SE: f64 = 3.0;

/// Preferred KL method: closed form when the model has one.
pub fn preferred_kl_method(model: &dyn DensityModel) -> KlMethod {
    if model.kl_closed_form(0).is_some() {
        KlMethod::Closed
    } else {
        KlMethod::Quadrature
    }
}

/// Running averages `(1/n) sum_{k=1}^n D(f_{k-1} || g)` for `n = 1..=n_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CesaroTrace {
    pub method: KlMethod,
    #[serde(skip)]
    pub averages: Vec<f64>,
    /// The average at `n_max`, used as the estimate of `I`.
    pub limit_estimate: f64,
    pub closed_form_limit: Option<f64>,
    pub information_positive: bool,
}

impl CesaroTrace {
    pub fn n_max(&self) -> usize {
        self.averages.len()
    }

    /// Average at 1-based `n`.
    pub fn average_at(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|i| self.averages.get(i)).copied()
    }
}

pub fn cesaro_kl_average(
    model: &dyn DensityModel,
    n_max: usize,
    method: KlMethod,
) -> Result<CesaroTrace> {
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be >= 1".into()));
    }
    let mut sum = CompensatedSum::new();
    let mut averages = Vec::with_capacity(n_max);
    for k in 1..=n_max {
        sum.add(kl_divergence(model, k - 1, method)?);
        averages.push(sum.value() / k as f64);
    }
    let limit_estimate = averages[n_max - 1];
    Ok(CesaroTrace {
        method,
        averages,
        limit_estimate,
        closed_form_limit: model.information_limit(),
        information_positive: limit_estimate > MIN_INFORMATION,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    /// Observation index; `X_k ~ f_{k-1}`.
    pub k: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub closed_form: Option<f64>,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    /// Uniform bound `C`, when the model provides one.
    pub bound: Option<f64>,
    pub trials: usize,
    pub rows: Vec<MomentRow>,
    pub pass: bool,
    pub warnings: Vec<String>,
}

/// Monte Carlo estimate of `E[(Z_k - D(f_{k-1} || g))^4]` under
/// `X_k ~ f_{k-1}` at each `k` in `indices`.
///
/// A row is within the bound when `estimate - 3 se <= C`. Without an
/// analytic `C` the check passes iff every estimate is finite.
pub fn fourth_moment_check(
    model: &dyn DensityModel,
    indices: &[usize],
    trials: usize,
    seed: u64,
) -> Result<MomentReport> {
    if indices.is_empty() || indices.contains(&0) {
        return Err(Error::InvalidArgument(
            "moment indices must be non-empty and >= 1".into(),
        ));
    }
    if trials < 2 {
        return Err(Error::InvalidArgument("moment check needs >= 2 trials".into()));
    }
    let method = preferred_kl_method(model);
    let centres = indices
        .iter()
        .map(|&k| kl_divergence(model, k - 1, method))
        .collect::<Result<Vec<f64>>>()?;

    let draws: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = PathRng::seed_from_u64(trial_seed(seed, t));
            indices
                .iter()
                .zip(&centres)
                .map(|(&k, &centre)| {
                    let x = model.sample(Density::Post(k - 1), &mut rng);
                    (model.log_ratio(k - 1, x) - centre).powi(4)
                })
                .collect()
        })
        .collect();

    let bound = model.llr_fourth_moment_bound();
    let rows: Vec<MomentRow> = indices
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let m: Moments = draws.iter().map(|d| d[j]).collect();
            let (estimate, std_error) = (m.mean(), m.std_error());
            let within_bound = match bound {
                Some(c) => estimate - MOMENT_SLACK_SE * std_error <= c,
                None => estimate.is_finite(),
            };
            MomentRow {
                k,
                estimate,
                std_error,
                closed_form: model.llr_central_fourth_moment(k - 1),
                within_bound,
            }
        })
        .collect();

    let mut warnings = Vec::new();
    if trials < MIN_MOMENT_TRIALS {
        warnings.push(format!(
            "{trials} moment trials is below the recommended {MIN_MOMENT_TRIALS}"
        ));
    }
    if bound.is_none() {
        warnings.push("model has no analytic fourth-moment bound; only finiteness checked".into());
    }
    Ok(MomentReport {
        bound,
        trials,
        pass: rows.iter().all(|r| r.within_bound),
        rows,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SllnRow {
    pub n: usize,
    /// Mean over trials of `(1/n) sum_{k=1}^n Z_k`.
    pub mean_average: f64,
    /// Sample variance over trials of the same average.
    pub variance: f64,
    /// Quantiles of `|(1/n) sum Z_k - I|`.
    pub q50: f64,
    pub q95: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SllnReport {
    pub reference: f64,
    pub trials: usize,
    pub rows: Vec<SllnRow>,
    /// 95th-percentile deviation strictly decreasing along the grid.
    pub decreasing: bool,
    pub note: &'static str,
    pub warnings: Vec<String>,
}

/// Simulates change-at-1 paths and summarises the deviation of the LLR
/// average from `reference` at each `n` of the (strictly increasing) grid.
pub fn slln_empirical(
    model: &dyn DensityModel,
    grid: &[usize],
    trials: usize,
    seed: u64,
    reference: f64,
) -> Result<SllnReport> {
    if grid.is_empty() || grid[0] == 0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "SLLN grid must be non-empty, >= 1 and strictly increasing".into(),
        ));
    }
    if trials < 2 {
        return Err(Error::InvalidArgument("SLLN check needs >= 2 trials".into()));
    }
    let n_max = *grid.last().expect("non-empty grid");
    let start = ChangePoint::at(1)?;

    let averages: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut sum = 0.0;
            let mut out = Vec::with_capacity(grid.len());
            let mut next = grid.iter().peekable();
            for (i, x) in Observations::new(model, start, trial_seed(seed, t))
                .take(n_max)
                .enumerate()
            {
                sum += model.log_ratio(i, x);
                if next.peek() == Some(&&(i + 1)) {
                    next.next();
                    out.push(sum / (i + 1) as f64);
                }
            }
            out
        })
        .collect();

    let rows: Vec<SllnRow> = grid
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let m: Moments = averages.iter().map(|a| a[j]).collect();
            let mut dev: Vec<f64> = averages.iter().map(|a| (a[j] - reference).abs()).collect();
            dev.sort_by(f64::total_cmp);
            SllnRow {
                n,
                mean_average: m.mean(),
                variance: m.variance(),
                q50: quantile_sorted(&dev, 0.5),
                q95: quantile_sorted(&dev, 0.95),
                max: dev[dev.len() - 1],
            }
        })
        .collect();

    let mut warnings = Vec::new();
    if trials < MIN_SLLN_TRIALS {
        warnings.push(format!(
            "{trials} SLLN trials is below the recommended {MIN_SLLN_TRIALS}"
        ));
    }
    if grid.len() < 2 {
        warnings.push("single-point SLLN grid cannot show decay".into());
    }
    Ok(SllnReport {
        reference,
        trials,
        decreasing: grid.len() >= 2 && rows.windows(2).all(|w| w[1].q95 < w[0].q95),
        rows,
        note: SLLN_NOTE,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SumDominance {
    pub k_small: usize,
    pub k_large: usize,
    pub n: usize,
    pub trials: usize,
    /// `sup_x (F_large(x) - F_small(x))` over the pooled sample.
    pub max_gap: f64,
    pub slack: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
}

/// `sqrt(ln(2 / 0.01) / (2 trials))`.
pub fn dkw_slack(trials: usize) -> f64 {
    ((2.0 / (1.0 - DOMINANCE_CONFIDENCE)).ln() / (2.0 * trials as f64)).sqrt()
}

/// Checks that `(1/n) sum_{i=k}^{k+n} log f_{i-k}(X_i) / g(X_i)` grows
/// stochastically from `k_small` to `k_large` under a change at time 1.
///
/// Both sums are taken from the same simulated path in each trial. Passing
/// `k_small >= k_large` is allowed: equal values give a zero gap and
/// swapped values test the reverse ordering.
pub fn sum_dominance_check(
    model: &dyn DensityModel,
    k_small: usize,
    k_large: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<SumDominance> {
    if k_small == 0 || k_large == 0 || n == 0 || trials == 0 {
        return Err(Error::InvalidArgument(
            "k_small, k_large, n and trials must all be >= 1".into(),
        ));
    }
    let length = k_small.max(k_large) + n;
    let start = ChangePoint::at(1)?;
    let window_sum = |path: &[f64], k: usize| -> f64 {
        let total: f64 = path[k - 1..=k - 1 + n]
            .iter()
            .enumerate()
            .map(|(j, &x)| model.log_ratio(j, x))
            .sum();
        total / n as f64
    };

    let pairs: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let path: Vec<f64> = Observations::new(model, start, trial_seed(seed, t))
                .take(length)
                .collect();
            (window_sum(&path, k_small), window_sum(&path, k_large))
        })
        .collect();

    let (mut small, mut large): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    if small.iter().chain(&large).any(|v| v.is_nan()) {
        return Err(Error::Estimation("NaN in simulated LLR sums".into()));
    }
    small.sort_by(f64::total_cmp);
    large.sort_by(f64::total_cmp);
    let max_gap = max_cdf_excess(&large, &small);
    let slack = dkw_slack(trials);

    let mut warnings = Vec::new();
    if trials < MIN_DOMINANCE_TRIALS {
        warnings.push(format!(
            "{trials} dominance trials is below the recommended {MIN_DOMINANCE_TRIALS}"
        ));
    }
    Ok(SumDominance {
        k_small,
        k_large,
        n,
        trials,
        max_gap,
        slack,
        pass: max_gap <= slack,
        warnings,
    })
}

/// `max(0, sup_x F_a(x) - F_b(x))` for sorted samples of equal length.
fn max_cdf_excess(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len() as f64;
    let (mut i, mut j, mut best) = (0, 0, 0.0_f64);
    while i < a.len() {
        let x = a[i];
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 - j as f64) / len);
    }
    best
}

/// Sample sizes and grids for [`full_condition_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub cesaro_n: usize,
    pub moment_indices: Vec<usize>,
    pub moment_trials: usize,
    pub slln_grid: Vec<usize>,
    pub slln_trials: usize,
    pub dominance_k_small: usize,
    pub dominance_k_large: usize,
    pub dominance_n: usize,
    pub dominance_trials: usize,
    /// MLR is checked for `g < f_0` and `f_n < f_{n+1}` for `n < mlr_indices`.
    pub mlr_indices: usize,
    /// Set by the caller; never read from a config file.
    #[serde(skip_deserializing)]
    pub seed: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            cesaro_n: 100_000,
            moment_indices: vec![1, 10, 100, 1000],
            moment_trials: 100_000,
            slln_grid: vec![1000, 4000, 16000],
            slln_trials: 1000,
            dominance_k_small: 1,
            dominance_k_large: 5,
            dominance_n: 20,
            dominance_trials: 100_000,
            mlr_indices: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub condition: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CesaroPoint {
    pub n: usize,
    pub average: f64,
}

/// One row of the CSV trace; cells a check did not compute are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub n: usize,
    pub cesaro_avg: Option<f64>,
    pub moment_est: Option<f64>,
    pub slln_q95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub information_number_i: f64,
    pub closed_form_i: Option<f64>,
    pub cesaro: CesaroTrace,
    /// Cesàro averages on a thinned, increasing set of `n`.
    pub cesaro_trace: Vec<CesaroPoint>,
    pub moments: MomentReport,
    pub slln: SllnReport,
    pub dominance: SumDominance,
    /// First failing MLR pair, if any.
    pub mlr_failure: Option<String>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl ConditionReport {
    pub fn failed(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.pass)
    }
}

/// Runs every check under `budgets` and combines the verdicts.
pub fn full_condition_report(model: &dyn DensityModel, budgets: &Budgets) -> Result<ConditionReport> {
    let mut warnings = Vec::new();
    let mut verdicts = Vec::new();

    let mut mlr_failure = None;
    let mut lower = Density::Pre;
    for _ in 0..=budgets.mlr_indices {
        let check = verify_mlr(model, lower, &default_grid(model, lower))?;
        if !check.holds {
            mlr_failure = Some(format!(
                "{} < {} violated near x = {:.4} (log-ratio drop {:.3e})",
                describe(lower),
                describe(lower.successor()),
                check.violation_at.unwrap_or(f64::NAN),
                check.worst_violation
            ));
            break;
        }
        lower = lower.successor();
    }
    verdicts.push(Verdict {
        condition: "mlr",
        pass: mlr_failure.is_none(),
        detail: mlr_failure.clone().unwrap_or_else(|| {
            format!("g < f_0 < ... < f_{} on grid", budgets.mlr_indices)
        }),
    });

    let method = preferred_kl_method(model);
    if kl_divergence(model, 0, method)? <= MIN_INFORMATION {
        warnings.push(
            "f_0 coincides with g: the observation at the change point carries no information"
                .into(),
        );
    }
    let cesaro = cesaro_kl_average(model, budgets.cesaro_n, method)?;
    let information = cesaro.limit_estimate;
    verdicts.push(Verdict {
        condition: "information_positive",
        pass: cesaro.information_positive,
        detail: match cesaro.closed_form_limit {
            Some(limit) => format!(
                "Cesàro average at n = {} is {information:.9} (closed-form limit {limit:.9})",
                budgets.cesaro_n
            ),
            None => format!("Cesàro average at n = {} is {information:.9}", budgets.cesaro_n),
        },
    });

    let moments = fourth_moment_check(
        model,
        &budgets.moment_indices,
        budgets.moment_trials,
        trial_seed(budgets.seed, 1),
    )?;
    let worst = moments
        .rows
        .iter()
        .map(|r| r.estimate)
        .fold(f64::NEG_INFINITY, f64::max);
    verdicts.push(Verdict {
        condition: "fourth_moment",
        pass: moments.pass,
        detail: match moments.bound {
            Some(c) => format!("largest estimate {worst:.6} against C = {c:.8}"),
            None => format!("largest estimate {worst:.6}, no analytic C"),
        },
    });
    warnings.extend(moments.warnings.iter().cloned());

    let reference = cesaro.closed_form_limit.unwrap_or(information);
    let slln = slln_empirical(
        model,
        &budgets.slln_grid,
        budgets.slln_trials,
        trial_seed(budgets.seed, 2),
        reference,
    )?;
    let q95: Vec<String> = slln.rows.iter().map(|r| format!("{:.4e}", r.q95)).collect();
    verdicts.push(Verdict {
        condition: "slln",
        pass: slln.decreasing,
        detail: if slln.decreasing {
            format!("q95 deviations {} decreasing; {SLLN_NOTE}", q95.join(" > "))
        } else {
            format!("q95 deviations {} not strictly decreasing", q95.join(", "))
        },
    });
    warnings.extend(slln.warnings.iter().cloned());

    let dominance = sum_dominance_check(
        model,
        budgets.dominance_k_small,
        budgets.dominance_k_large,
        budgets.dominance_n,
        budgets.dominance_trials,
        trial_seed(budgets.seed, 3),
    )?;
    verdicts.push(Verdict {
        condition: "sum_dominance",
        pass: dominance.pass,
        detail: format!(
            "k = {} vs k = {}: max CDF gap {:.3e}, slack {:.3e}",
            dominance.k_small, dominance.k_large, dominance.max_gap, dominance.slack
        ),
    });
    warnings.extend(dominance.warnings.iter().cloned());

    let trace = trace_rows(&cesaro, &moments, &slln);
    let cesaro_trace = thinned_ns(cesaro.n_max())
        .into_iter()
        .map(|n| CesaroPoint {
            n,
            average: cesaro.averages[n - 1],
        })
        .collect();

    Ok(ConditionReport {
        information_number_i: information,
        closed_form_i: cesaro.closed_form_limit,
        cesaro,
        cesaro_trace,
        moments,
        slln,
        dominance,
        mlr_failure,
        pass: verdicts.iter().all(|v| v.pass),
        verdicts,
        warnings,
        trace,
    })
}

fn describe(d: Density) -> String {
    match d {
        Density::Pre => "g".into(),
        Density::Post(n) => format!("f_{n}"),
    }
}

/// `1..=10` then roughly 20 points per decade up to `n_max`, always ending
/// at `n_max`.
fn thinned_ns(n_max: usize) -> Vec<usize> {
    let mut ns: Vec<usize> = (1..=n_max.min(10)).collect();
    let mut x = 10.0_f64;
    while (x as usize) < n_max {
        x *= 10f64.powf(0.05);
        let n = (x.round() as usize).min(n_max);
        if ns.last() != Some(&n) {
            ns.push(n);
        }
    }
    ns
}

fn trace_rows(cesaro: &CesaroTrace, moments: &MomentReport, slln: &SllnReport) -> Vec<TraceRow> {
    let mut ns = thinned_ns(cesaro.n_max());
    ns.extend(moments.rows.iter().map(|r| r.k));
    ns.extend(slln.rows.iter().map(|r| r.n));
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| TraceRow {
            n,
            cesaro_avg: cesaro.average_at(n),
            moment_est: moments.rows.iter().find(|r| r.k == n).map(|r| r.estimate),
            slln_q95: slln.rows.iter().find(|r| r.n == n).map(|r| r.q95),
        })
        .collect()
}
