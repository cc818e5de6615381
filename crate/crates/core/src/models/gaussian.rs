use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{Density, DensityModel, MeanSchedule, Support};
use crate::Result;

/// `ln(sqrt(2 pi))`.
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Number of schedule entries precomputed at construction.
const CACHED_MEANS: usize = 1 << 16;

/// Unit-variance Gaussian location family: `g = N(0, 1)` and
/// `f_n = N(mu_n, 1)`.
///
/// The per-sample log-likelihood ratio is `mu_n * (x - mu_n / 2)`, the KL
/// divergence is `mu_n^2 / 2` and the centred fourth moment of the LLR under
/// `f_n` is `3 mu_n^4`.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    schedule: MeanSchedule,
    means: Vec<f64>,
    half_squares: Vec<f64>,
}

impl GaussianModel {
    pub fn new(schedule: MeanSchedule) -> Result<Self> {
        schedule.validate()?;
        let means: Vec<f64> = (0..CACHED_MEANS).map(|n| schedule.mean(n)).collect();
        let half_squares = means.iter().map(|m| 0.5 * m * m).collect();
        Ok(Self {
            schedule,
            means,
            half_squares,
        })
    }

    /// The model used throughout the numerical examples: `mu_n = arctan(n)`.
    pub fn arctangent() -> Self {
        Self::new(MeanSchedule::arctangent()).expect("built-in schedule is valid")
    }

    pub fn schedule(&self) -> &MeanSchedule {
        &self.schedule
    }

    /// `mu_n`.
    pub fn mean(&self, n: usize) -> f64 {
        match self.means.get(n) {
            Some(&m) => m,
            None => self.schedule.mean(n),
        }
    }
}

impl DensityModel for GaussianModel {
    fn support(&self) -> Support {
        Support::REAL
    }

    fn log_density(&self, density: Density, x: f64) -> f64 {
        let mu = match density {
            Density::Pre => 0.0,
            Density::Post(n) => self.mean(n),
        };
        let z = x - mu;
        -0.5 * z * z - LN_SQRT_2PI
    }

    fn sample(&self, density: Density, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match density {
            Density::Pre => z,
            Density::Post(n) => self.mean(n) + z,
        }
    }

    fn location_scale(&self, density: Density) -> (f64, f64) {
        match density {
            Density::Pre => (0.0, 1.0),
            Density::Post(n) => (self.mean(n), 1.0),
        }
    }

    fn log_ratio(&self, index: usize, x: f64) -> f64 {
        let mu = self.mean(index);
        mu * (x - 0.5 * mu)
    }

    fn fill_log_ratios(&self, x: f64, out: &mut [f64]) {
        let cached = out.len().min(self.means.len());
        let (head, tail) = out.split_at_mut(cached);
        for ((o, &m), &h) in head.iter_mut().zip(&self.means).zip(&self.half_squares) {
            *o = m * x - h;
        }
        for (i, o) in tail.iter_mut().enumerate() {
            let mu = self.schedule.mean(cached + i);
            *o = mu * x - 0.5 * mu * mu;
        }
    }

    fn kl_closed_form(&self, index: usize) -> Option<f64> {
        let mu = self.mean(index);
        Some(0.5 * mu * mu)
    }

    fn llr_central_fourth_moment(&self, index: usize) -> Option<f64> {
        Some(3.0 * self.mean(index).powi(4))
    }

    fn llr_fourth_moment_bound(&self) -> Option<f64> {
        Some(3.0 * self.schedule.supremum().powi(4))
    }

    fn information_limit(&self) -> Option<f64> {
        let mu = self.schedule.limit();
        Some(0.5 * mu * mu)
    }
}
