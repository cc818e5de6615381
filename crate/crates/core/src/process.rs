//! Observation paths under the change-point model.
//!
//! Time is 1-based. The observation at time `n` is drawn from `g` when
//! `n < nu` and from `f_{n - nu}` when `n >= nu`, so the sample at the change
//! point itself comes from `f_0`.

use std::fmt;
use std::num::NonZeroUsize;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::models::{Density, DensityModel};
use crate::{Error, Result};

/// Generator used for every simulated path.
pub type PathRng = ChaCha8Rng;

/// Location of the change point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChangePoint {
    At(NonZeroUsize),
    /// No change ever happens; every observation is pre-change.
    Never,
}

impl ChangePoint {
    pub fn at(nu: usize) -> Result<Self> {
        NonZeroUsize::new(nu)
            .map(ChangePoint::At)
            .ok_or_else(|| Error::InvalidArgument("change point must be >= 1".into()))
    }

    pub fn time(self) -> Option<usize> {
        match self {
            ChangePoint::At(nu) => Some(nu.get()),
            ChangePoint::Never => None,
        }
    }

    /// Density generating the observation at 1-based `time`.
    pub fn density_at(self, time: usize) -> Density {
        match self {
            ChangePoint::At(nu) if time >= nu.get() => Density::Post(time - nu.get()),
            _ => Density::Pre,
        }
    }
}

impl fmt::Display for ChangePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChangePoint::At(nu) => write!(f, "{nu}"),
            ChangePoint::Never => write!(f, "inf"),
        }
    }
}

impl Serialize for ChangePoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ChangePoint::At(nu) => serializer.serialize_u64(nu.get() as u64),
            ChangePoint::Never => serializer.serialize_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChangeSpec {
    pub nu: ChangePoint,
    pub horizon: usize,
    pub seed: u64,
}

impl ChangeSpec {
    pub fn new(nu: ChangePoint, horizon: usize, seed: u64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        Ok(Self { nu, horizon, seed })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Path {
    pub samples: Vec<f64>,
    pub spec: ChangeSpec,
}

/// Seed for trial `index` of an experiment with seed `base`.
///
/// Trials seeded this way are reproducible and independent of the order in
/// which they execute.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x6a09_e667_f3bc_c908)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Unbounded observation sequence for a change point and seed.
pub struct Observations<'a> {
    model: &'a dyn DensityModel,
    nu: ChangePoint,
    rng: PathRng,
    time: usize,
}

impl<'a> Observations<'a> {
    pub fn new(model: &'a dyn DensityModel, nu: ChangePoint, seed: u64) -> Self {
        Self {
            model,
            nu,
            rng: PathRng::seed_from_u64(seed),
            time: 0,
        }
    }

    /// Time index of the most recently produced observation.
    pub fn time(&self) -> usize {
        self.time
    }
}

impl Iterator for Observations<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        self.time += 1;
        let density = self.nu.density_at(self.time);
        Some(self.model.sample(density, &mut self.rng))
    }
}

/// The observations of `spec`, one at a time, stopping at the horizon.
pub fn path_stream<'a>(
    model: &'a dyn DensityModel,
    spec: &ChangeSpec,
) -> std::iter::Take<Observations<'a>> {
    Observations::new(model, spec.nu, spec.seed).take(spec.horizon)
}

pub fn generate_path(model: &dyn DensityModel, spec: &ChangeSpec) -> Path {
    Path {
        samples: path_stream(model, spec).collect(),
        spec: *spec,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{GaussianModel, Support};
    use rand::RngCore;
    use std::sync::Mutex;

    /// Records which densities are sampled.
    #[derive(Default)]
    struct Probe {
        requests: Mutex<Vec<Density>>,
    }

    impl DensityModel for Probe {
        fn support(&self) -> Support {
            Support::REAL
        }
        fn log_density(&self, _: Density, _: f64) -> f64 {
            0.0
        }
        fn sample(&self, density: Density, _: &mut dyn RngCore) -> f64 {
            self.requests.lock().unwrap().push(density);
            match density {
                Density::Pre => -1.0,
                Density::Post(n) => n as f64,
            }
        }
        fn location_scale(&self, _: Density) -> (f64, f64) {
            (0.0, 1.0)
        }
    }

    fn spec(nu: ChangePoint, horizon: usize, seed: u64) -> ChangeSpec {
        ChangeSpec::new(nu, horizon, seed).unwrap()
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(ChangePoint::at(0).is_err());
        assert!(ChangeSpec::new(ChangePoint::Never, 0, 1).is_err());
    }

    #[test]
    fn change_point_sample_uses_index_zero() {
        for nu in 1..20 {
            let probe = Probe::default();
            let horizon = 25;
            generate_path(&probe, &spec(ChangePoint::at(nu).unwrap(), horizon, 3));
            let req = probe.requests.lock().unwrap();
            assert_eq!(req[nu - 1], Density::Post(0));
            let pre = req.iter().filter(|d| **d == Density::Pre).count();
            assert_eq!(pre, nu - 1);
            assert_eq!(req.len() - pre, horizon - nu + 1);
            for (t, d) in req.iter().enumerate().skip(nu - 1) {
                assert_eq!(*d, Density::Post(t + 1 - nu));
            }
        }
    }

    #[test]
    fn never_yields_only_pre_change() {
        let probe = Probe::default();
        let path = generate_path(&probe, &spec(ChangePoint::Never, 100, 1));
        assert_eq!(path.samples.len(), 100);
        assert!(path.samples.iter().all(|&x| x == -1.0));
    }

    #[test]
    fn pre_change_mean_near_zero() {
        let m = GaussianModel::arctangent();
        let total: f64 = (0..1000)
            .flat_map(|t| generate_path(&m, &spec(ChangePoint::Never, 100, trial_seed(5, t))).samples)
            .sum();
        assert!((total / 100_000.0).abs() < 0.02);
    }

    #[test]
    fn post_change_means_follow_schedule_from_nu() {
        // nu = 1, horizon 3: draws from f_0, f_1, f_2.
        let m = GaussianModel::arctangent();
        let trials = 20_000;
        let mut sums = [0.0; 3];
        for t in 0..trials {
            let p = generate_path(&m, &spec(ChangePoint::at(1).unwrap(), 3, trial_seed(9, t)));
            for (s, x) in sums.iter_mut().zip(&p.samples) {
                *s += x;
            }
        }
        let expected = [0.0, 1f64.atan(), 2f64.atan()];
        for (s, e) in sums.iter().zip(expected) {
            // 4 standard errors of a unit-variance mean
            assert!((s / trials as f64 - e).abs() < 4.0 / (trials as f64).sqrt());
        }
    }

    #[test]
    fn sample_at_change_point_80_is_f0() {
        let m = GaussianModel::arctangent();
        let trials = 10_000;
        let (mut at79, mut at80, mut at81) = (0.0, 0.0, 0.0);
        for t in 0..trials {
            let p = generate_path(&m, &spec(ChangePoint::at(80).unwrap(), 200, trial_seed(21, t)));
            at79 += p.samples[78];
            at80 += p.samples[79];
            at81 += p.samples[80];
        }
        let tol = 4.0 / (trials as f64).sqrt();
        assert!((at79 / trials as f64).abs() < tol);
        assert!((at80 / trials as f64).abs() < tol);
        assert!((at81 / trials as f64 - 1f64.atan()).abs() < tol);
    }

    #[test]
    fn stream_equals_path_and_is_deterministic() {
        let m = GaussianModel::arctangent();
        let s = spec(ChangePoint::at(10).unwrap(), 50, 42);
        let streamed: Vec<f64> = path_stream(&m, &s).collect();
        assert_eq!(streamed, generate_path(&m, &s).samples);
        assert_eq!(generate_path(&m, &s), generate_path(&m, &s));
        let other: Vec<f64> = path_stream(&m, &spec(ChangePoint::at(10).unwrap(), 50, 43)).collect();
        assert_ne!(streamed, other);
    }

    #[test]
    fn long_pre_change_stream() {
        let m = GaussianModel::arctangent();
        let s = spec(ChangePoint::Never, 1_000_000, 1);
        assert_eq!(path_stream(&m, &s).filter(|x| x.is_finite()).count(), 1_000_000);
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| trial_seed(0, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(trial_seed(1, 0), trial_seed(2, 0));
    }
}
