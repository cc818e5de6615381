//! Pre- and post-change density families.
//!
//! A [`DensityModel`] bundles the pre-change density `g` with the indexed
//! post-change family `f_0, f_1, ...`. The checked operations in this module
//! ([`llr`], [`kl_divergence`], [`verify_mlr`],
//! [`verify_stochastic_dominance`]) work against any implementation; the
//! unit-variance Gaussian location family is the built-in one.

mod gaussian;
mod schedule;

use std::fmt;

use rand::RngCore;
use serde::Serialize;

use crate::quadrature::Quadrature;
use crate::{Error, Result};

pub use gaussian::GaussianModel;
pub use schedule::MeanSchedule;

/// Half-width, in scale units, of the window integrated by quadrature.
pub const QUADRATURE_HALF_WIDTH: f64 = 10.0;
/// Half-width, in scale units, of the default MLR / dominance grid.
pub const GRID_HALF_WIDTH: f64 = 8.0;
/// Default number of grid points.
pub const DEFAULT_GRID_POINTS: usize = 2001;
/// Allowed decrease of the log-ratio between neighbouring grid points.
pub const MLR_TOLERANCE: f64 = 1e-12;
/// Allowed excess of the lower tail over the upper tail.
pub const DOMINANCE_TOLERANCE: f64 = 1e-9;

/// Names one density of a model: `g` or `f_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Density {
    Pre,
    Post(usize),
}

impl Density {
    /// The next density in MLR order: `g -> f_0`, `f_n -> f_{n+1}`.
    pub fn successor(self) -> Self {
        match self {
            Density::Pre => Density::Post(0),
            Density::Post(n) => Density::Post(n + 1),
        }
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::Pre => write!(f, "g"),
            Density::Post(n) => write!(f, "f_{n}"),
        }
    }
}

/// Closed interval of the real line shared by `g` and every `f_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub lower: f64,
    pub upper: f64,
}

impl Support {
    pub const REAL: Support = Support {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn contains(&self, x: f64) -> bool {
        x.is_finite() && self.lower <= x && x <= self.upper
    }

    fn clip(&self, lower: f64, upper: f64) -> (f64, f64) {
        (lower.max(self.lower), upper.min(self.upper))
    }
}

impl fmt::Display for Support {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lower, self.upper)
    }
}

/// Pre-change density `g` plus the post-change family `{f_n}`.
///
/// Implementations are immutable and shared across trial workers.
pub trait DensityModel: Send + Sync {
    fn support(&self) -> Support;

    fn log_density(&self, density: Density, x: f64) -> f64;

    /// One draw from `density`. Deterministic given the generator state.
    fn sample(&self, density: Density, rng: &mut dyn RngCore) -> f64;

    /// Centre and spread used to place quadrature windows and check grids.
    fn location_scale(&self, density: Density) -> (f64, f64);

    /// `log f_index(x) - log g(x)` without domain checks.
    fn log_ratio(&self, index: usize, x: f64) -> f64 {
        self.log_density(Density::Post(index), x) - self.log_density(Density::Pre, x)
    }

    /// Writes `log f_m(x) / g(x)` into `out[m]` for every `m < out.len()`.
    fn fill_log_ratios(&self, x: f64, out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self.log_ratio(m, x);
        }
    }

    /// `D(f_index || g)` when known analytically.
    fn kl_closed_form(&self, _index: usize) -> Option<f64> {
        None
    }

    /// `E[(llr - D)^4]` under `f_index`, when known analytically.
    fn llr_central_fourth_moment(&self, _index: usize) -> Option<f64> {
        None
    }

    /// Uniform bound `C` on the centred fourth moments, when known.
    fn llr_fourth_moment_bound(&self) -> Option<f64> {
        None
    }

    /// Limit of `D(f_n || g)` when known analytically.
    fn information_limit(&self) -> Option<f64> {
        None
    }

    fn sample_pre(&self, rng: &mut dyn RngCore) -> f64 {
        self.sample(Density::Pre, rng)
    }

    fn sample_post(&self, index: usize, rng: &mut dyn RngCore) -> f64 {
        self.sample(Density::Post(index), rng)
    }
}

fn check_observation(model: &dyn DensityModel, x: f64) -> Result<()> {
    let support = model.support();
    if support.contains(x) {
        Ok(())
    } else {
        Err(Error::Domain {
            x,
            support: support.to_string(),
        })
    }
}

/// Per-sample log-likelihood ratio `log f_index(x) / g(x)`.
pub fn llr(model: &dyn DensityModel, index: usize, x: f64) -> Result<f64> {
    check_observation(model, x)?;
    Ok(model.log_ratio(index, x))
}

/// Same as [`llr`] but for every index `0..out.len()` at once.
pub fn fill_llr(model: &dyn DensityModel, x: f64, out: &mut [f64]) -> Result<()> {
    check_observation(model, x)?;
    model.fill_log_ratios(x, out);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KlMethod {
    Closed,
    Quadrature,
}

/// `D(f_n || g)`.
pub fn kl_divergence(model: &dyn DensityModel, n: usize, method: KlMethod) -> Result<f64> {
    match method {
        KlMethod::Closed => model
            .kl_closed_form(n)
            .ok_or(Error::Unsupported("closed-form KL divergence")),
        KlMethod::Quadrature => {
            let post = Density::Post(n);
            let (lower, upper) = window(model, &[post], QUADRATURE_HALF_WIDTH);
            let integrand = |x: f64| {
                let log_f = model.log_density(post, x);
                if log_f == f64::NEG_INFINITY {
                    0.0
                } else {
                    log_f.exp() * (log_f - model.log_density(Density::Pre, x))
                }
            };
            let value = Quadrature::default().integrate(integrand, lower, upper)?;
            Ok(value.max(0.0))
        }
    }
}

/// Smallest interval covering `half_width` scale units around each density,
/// clipped to the support.
pub fn window(model: &dyn DensityModel, densities: &[Density], half_width: f64) -> (f64, f64) {
    let (lower, upper) = densities
        .iter()
        .map(|&d| model.location_scale(d))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (c, s)| {
            (lo.min(c - half_width * s), hi.max(c + half_width * s))
        });
    model.support().clip(lower, upper)
}

/// Equispaced grid spanning `GRID_HALF_WIDTH` scale units around `lower`
/// and its successor.
pub fn default_grid(model: &dyn DensityModel, lower: Density) -> Vec<f64> {
    let (a, b) = window(model, &[lower, lower.successor()], GRID_HALF_WIDTH);
    let last = (DEFAULT_GRID_POINTS - 1) as f64;
    (0..DEFAULT_GRID_POINTS)
        .map(|i| a + (b - a) * i as f64 / last)
        .collect()
}

fn check_grid(model: &dyn DensityModel, grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "grid needs at least two points".into(),
        ));
    }
    if let Some(w) = grid.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(format!(
            "grid must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    let support = model.support();
    if let Some(&x) = grid.iter().find(|&&x| !support.contains(x)) {
        return Err(Error::InvalidArgument(format!(
            "grid point {x} lies outside the support {support}"
        )));
    }
    Ok(())
}

/// Outcome of a grid MLR check between a density and its successor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlrCheck {
    pub lower: Density,
    pub holds: bool,
    /// Largest decrease of the log-ratio between neighbouring points
    /// (`inf` when the denominator density vanishes).
    pub worst_violation: f64,
    /// Grid point where the worst violation ends.
    pub violation_at: Option<f64>,
}

/// Checks that `successor(x) / lower(x)` is nondecreasing along `grid`.
///
/// The ratio is evaluated as a difference of log-densities. This is a
/// necessary-condition check only: monotonicity between and beyond the grid
/// points is not examined.
pub fn verify_mlr(model: &dyn DensityModel, lower: Density, grid: &[f64]) -> Result<MlrCheck> {
    check_grid(model, grid)?;
    let upper = lower.successor();
    let mut worst = 0.0_f64;
    let mut worst_at = None;
    let mut previous: Option<f64> = None;

    for &x in grid {
        let log_den = model.log_density(lower, x);
        if log_den == f64::NEG_INFINITY || log_den.is_nan() {
            worst = f64::INFINITY;
            worst_at = Some(x);
            break;
        }
        let ratio = model.log_density(upper, x) - log_den;
        if let Some(prev) = previous {
            let drop = if ratio == prev { 0.0 } else { prev - ratio };
            if drop > worst {
                worst = drop;
                worst_at = Some(x);
            }
        }
        previous = Some(ratio);
    }

    Ok(MlrCheck {
        lower,
        holds: worst <= MLR_TOLERANCE,
        worst_violation: worst,
        violation_at: if worst > MLR_TOLERANCE { worst_at } else { None },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DominanceCheck {
    pub lower: Density,
    pub holds: bool,
    /// `max_x P_lower(X > x) - P_successor(X > x)` over the grid.
    pub worst_gap: f64,
    pub gap_at: f64,
}

/// Checks the upper-tail inequality `P_lower(X > x) <= P_successor(X > x)`
/// at every grid point, tails computed by quadrature.
pub fn verify_stochastic_dominance(
    model: &dyn DensityModel,
    lower: Density,
    grid: &[f64],
) -> Result<DominanceCheck> {
    check_grid(model, grid)?;
    let upper = lower.successor();
    let (_, far) = window(model, &[lower, upper], QUADRATURE_HALF_WIDTH);
    let lower_tails = upper_tails(model, lower, grid, far)?;
    let upper_tails = upper_tails(model, upper, grid, far)?;

    let (worst_gap, gap_at) = lower_tails
        .iter()
        .zip(&upper_tails)
        .zip(grid)
        .map(|((a, b), &x)| (a - b, x))
        .fold((f64::NEG_INFINITY, grid[0]), |best, cur| {
            if cur.0 > best.0 {
                cur
            } else {
                best
            }
        });

    Ok(DominanceCheck {
        lower,
        holds: worst_gap <= DOMINANCE_TOLERANCE,
        worst_gap,
        gap_at,
    })
}

/// `P(X > x)` at every grid point, accumulated segment by segment from the
/// right end of the window.
fn upper_tails(
    model: &dyn DensityModel,
    density: Density,
    grid: &[f64],
    far: f64,
) -> Result<Vec<f64>> {
    let quad = Quadrature {
        tolerance: 1e-13,
        min_levels: 2,
        max_levels: 20,
    };
    let pdf = |x: f64| model.log_density(density, x).exp();
    let last = *grid.last().expect("checked grid");
    let mut tail = if far > last {
        quad.integrate(pdf, last, far)?
    } else {
        0.0
    };
    let mut tails = vec![0.0; grid.len()];
    tails[grid.len() - 1] = tail;
    for i in (0..grid.len() - 1).rev() {
        tail += quad.integrate(pdf, grid[i], grid[i + 1])?;
        tails[i] = tail;
    }
    Ok(tails)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn gaussian(table: &[f64]) -> GaussianModel {
        GaussianModel::new(MeanSchedule::table(table.to_vec())).unwrap()
    }

    fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect()
    }

    // Independent evaluation of the Gaussian log-density, kept apart from
    // the model code.
    fn normal_log_pdf(x: f64, mu: f64) -> f64 {
        -0.5 * (x - mu).powi(2) - 0.5 * (2.0 * PI).ln()
    }

    #[test]
    fn llr_zero_schedule_is_zero() {
        let m = GaussianModel::new(MeanSchedule::constant(0.0)).unwrap();
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(llr(&m, 0, x).unwrap(), 0.0);
            assert_eq!(llr(&m, 17, x).unwrap(), 0.0);
        }
    }

    #[test]
    fn llr_hand_values() {
        let m = gaussian(&[0.0, 1.0]);
        assert!((llr(&m, 1, 1.0).unwrap() - 0.5).abs() < 1e-15);

        let m = GaussianModel::arctangent();
        let v = llr(&m, 1, 0.0).unwrap();
        assert!((v - (-0.308_425)).abs() < 1e-6);
        let mu = 1f64.atan();
        let oracle = normal_log_pdf(0.0, mu) - normal_log_pdf(0.0, 0.0);
        assert!((v - oracle).abs() < 1e-14);
    }

    #[test]
    fn llr_rejects_non_finite() {
        let m = GaussianModel::arctangent();
        assert!(matches!(llr(&m, 0, f64::NAN), Err(Error::Domain { .. })));
        assert!(matches!(
            llr(&m, 0, f64::INFINITY),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn llr_equals_log_density_difference() {
        let m = GaussianModel::arctangent();
        for n in [0, 1, 7, 80] {
            for x in [-4.0, -0.3, 0.0, 1.1, 5.0] {
                let direct =
                    m.log_density(Density::Post(n), x) - m.log_density(Density::Pre, x);
                assert!((llr(&m, n, x).unwrap() - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kl_examples() {
        for (mu, expected) in [(0.0, 0.0), (2.0, 2.0), (FRAC_PI_2, PI * PI / 8.0)] {
            let m = gaussian(&[mu]);
            let closed = kl_divergence(&m, 0, KlMethod::Closed).unwrap();
            assert!((closed - expected).abs() < 1e-15);
            let quad = kl_divergence(&m, 0, KlMethod::Quadrature).unwrap();
            assert!((quad - expected).abs() < 1e-8, "mu={mu}: {quad}");
        }
        assert!((PI * PI / 8.0 - 1.233_700).abs() < 1e-6);
    }

    #[test]
    fn kl_closed_and_quadrature_agree() {
        for mu in [0.1, 1.0, FRAC_PI_2] {
            let m = gaussian(&[mu]);
            let closed = kl_divergence(&m, 0, KlMethod::Closed).unwrap();
            let quad = kl_divergence(&m, 0, KlMethod::Quadrature).unwrap();
            assert!((closed - quad).abs() < 1e-8);
        }
    }

    struct NoClosedForm;
    impl DensityModel for NoClosedForm {
        fn support(&self) -> Support {
            Support::REAL
        }
        fn log_density(&self, density: Density, x: f64) -> f64 {
            let mu = match density {
                Density::Pre => 0.0,
                Density::Post(_) => 1.0,
            };
            normal_log_pdf(x, mu)
        }
        fn sample(&self, _: Density, _: &mut dyn RngCore) -> f64 {
            0.0
        }
        fn location_scale(&self, density: Density) -> (f64, f64) {
            match density {
                Density::Pre => (0.0, 1.0),
                Density::Post(_) => (1.0, 1.0),
            }
        }
    }

    #[test]
    fn kl_closed_without_closed_form_is_unsupported() {
        assert!(matches!(
            kl_divergence(&NoClosedForm, 0, KlMethod::Closed),
            Err(Error::Unsupported(_))
        ));
        let q = kl_divergence(&NoClosedForm, 0, KlMethod::Quadrature).unwrap();
        assert!((q - 0.5).abs() < 1e-8);
    }

    #[test]
    fn densities_integrate_to_one() {
        let m = GaussianModel::arctangent();
        let q = Quadrature::default();
        for d in [Density::Pre, Density::Post(0), Density::Post(3), Density::Post(80)] {
            let (a, b) = window(&m, &[d], QUADRATURE_HALF_WIDTH);
            let mass = q.integrate(|x| m.log_density(d, x).exp(), a, b).unwrap();
            assert!((mass - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn likelihood_ratio_integrates_to_one_under_g() {
        let m = GaussianModel::arctangent();
        let q = Quadrature::default();
        for n in [0, 1, 5, 80] {
            let (a, b) = window(&m, &[Density::Pre, Density::Post(n)], QUADRATURE_HALF_WIDTH);
            let mass = q
                .integrate(
                    |x| (llr(&m, n, x).unwrap() + m.log_density(Density::Pre, x)).exp(),
                    a,
                    b,
                )
                .unwrap();
            assert!((mass - 1.0).abs() < 1e-6, "n={n}: {mass}");
        }
    }

    #[test]
    fn mlr_examples() {
        let grid = linspace(-5.0, 5.0, 101);
        let up = gaussian(&[0.3, 0.7]);
        assert!(verify_mlr(&up, Density::Post(0), &grid).unwrap().holds);

        let down = gaussian(&[0.7, 0.3]);
        let check = verify_mlr(&down, Density::Post(0), &grid).unwrap();
        assert!(!check.holds);
        assert!(check.worst_violation > 0.0);
        assert!(check.violation_at.is_some());

        let flat = gaussian(&[0.4, 0.4]);
        let check = verify_mlr(&flat, Density::Post(0), &grid).unwrap();
        assert!(check.holds);
        assert_eq!(check.worst_violation, 0.0);
    }

    #[test]
    fn mlr_pre_change_sentinel() {
        let m = gaussian(&[0.5, 0.6]);
        let grid = default_grid(&m, Density::Pre);
        assert_eq!(grid.len(), DEFAULT_GRID_POINTS);
        assert!(verify_mlr(&m, Density::Pre, &grid).unwrap().holds);
    }

    #[test]
    fn mlr_rejects_bad_grids() {
        let m = GaussianModel::arctangent();
        assert!(verify_mlr(&m, Density::Pre, &[0.0]).is_err());
        assert!(verify_mlr(&m, Density::Pre, &[0.0, 0.0]).is_err());
        assert!(verify_mlr(&m, Density::Pre, &[1.0, 0.0]).is_err());
        assert!(verify_mlr(&m, Density::Pre, &[0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn dominance_examples() {
        let grid = linspace(-5.0, 5.0, 101);
        let up = gaussian(&[0.3, 0.7]);
        assert!(verify_stochastic_dominance(&up, Density::Post(0), &grid)
            .unwrap()
            .holds);

        let flat = gaussian(&[0.4, 0.4]);
        let check = verify_stochastic_dominance(&flat, Density::Post(0), &grid).unwrap();
        assert!(check.holds);
        assert!(check.worst_gap.abs() < 1e-12);

        let reversed = gaussian(&[1.0, 0.0]);
        let check = verify_stochastic_dominance(&reversed, Density::Post(0), &grid).unwrap();
        assert!(!check.holds);
        // P(N(1,1) > 0.5) - P(N(0,1) > 0.5) = 2 Phi(0.5) - 1
        assert!((check.gap_at - 0.5).abs() < 1e-12);
        assert!((check.worst_gap - 0.382_924_922_548_026).abs() < 1e-8);
    }

    #[test]
    fn tails_match_normal_cdf() {
        let m = GaussianModel::new(MeanSchedule::constant(0.0)).unwrap();
        let grid = vec![-1.0, 0.0, 1.0, 2.0];
        let (_, far) = window(&m, &[Density::Pre], QUADRATURE_HALF_WIDTH);
        let tails = upper_tails(&m, Density::Pre, &grid, far).unwrap();
        let expected = [0.841_344_746_068_542_9, 0.5, 0.158_655_253_931_457_05, 0.022_750_131_948_179_2];
        for (t, e) in tails.iter().zip(expected) {
            assert!((t - e).abs() < 1e-11, "{t} vs {e}");
        }
    }

    #[test]
    fn built_in_schedules_pass_mlr_and_dominance() {
        let schedules = [
            MeanSchedule::arctangent(),
            MeanSchedule::constant(1.0),
            MeanSchedule::LinearSaturating { mu: 1.5, slope: 0.1 },
            MeanSchedule::GeometricApproach { mu: 2.0, ratio: 0.9 },
        ];
        for s in schedules {
            let m = GaussianModel::new(s.clone()).unwrap();
            let lowers = [Density::Pre, Density::Post(0), Density::Post(1), Density::Post(9), Density::Post(30)];
            for lower in lowers {
                let grid = default_grid(&m, lower);
                let mlr = verify_mlr(&m, lower, &grid).unwrap();
                let dom = verify_stochastic_dominance(&m, lower, &grid).unwrap();
                assert!(mlr.holds, "{s:?} {lower}");
                assert!(dom.holds, "{s:?} {lower}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = GaussianModel::arctangent();
        let a = m.sample_pre(&mut ChaCha8Rng::seed_from_u64(7));
        let b = m.sample_pre(&mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn post_sample_mean() {
        let m = gaussian(&[10.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| m.sample_post(0, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 10.0).abs() < 0.02);
    }

    #[test]
    fn zero_mean_post_matches_pre_in_distribution() {
        let m = gaussian(&[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let pre: f64 = (0..n).map(|_| m.sample_pre(&mut rng)).sum::<f64>() / n as f64;
        let post: f64 = (0..n).map(|_| m.sample_post(0, &mut rng)).sum::<f64>() / n as f64;
        assert!((pre - post).abs() < 0.02);
    }
}
