//! JSON experiment configuration.
//!
//! Parsing rejects unknown fields and reports the offending field path;
//! [`ExperimentConfig::resolve`] then checks cross-field rules before any
//! computation starts.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::{Path, PathBuf};

use excusum::conditions::Budgets;
use excusum::detectors::{DetectorConfig, DetectorKind};
use excusum::models::{GaussianModel, MeanSchedule};
use excusum::process::ChangePoint;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer};

/// A config problem tied to a field path such as `run.nu`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "invalid config: {}", self.message)
        } else {
            write!(f, "invalid config at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub detector: DetectorBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
    /// Sample sizes for `verify`; defaults apply when absent.
    #[serde(default)]
    pub verify: Option<Budgets>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub family: Family,
    pub schedule: ScheduleBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    Arctangent,
    LinearSaturating,
    GeometricApproach,
    ExplicitTable,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub kind: ScheduleKind,
    pub mu: Option<f64>,
    #[serde(default)]
    pub params: ScheduleParams,
    pub table: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub rate: Option<f64>,
    pub slope: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBlock {
    pub kind: DetectorKind,
    pub threshold: Option<f64>,
    pub gamma: Option<f64>,
    pub window: Option<usize>,
}

impl Default for DetectorBlock {
    fn default() -> Self {
        Self {
            kind: DetectorKind::ExCusum,
            threshold: None,
            gamma: None,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub seed: u64,
    pub nu: Option<Nu>,
    pub horizon: Option<usize>,
    pub trials: Option<usize>,
    /// Change points for `cadd`.
    pub nu_grid: Option<Vec<usize>>,
    /// Values of gamma for `arl`, `cadd` and `tradeoff`.
    pub gammas: Option<Vec<f64>>,
    /// Steps simulated after each change point in `cadd`.
    pub delay_margin: Option<usize>,
}

/// `nu` as written in a config: a positive integer or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Nu(pub ChangePoint);

impl<'de> Deserialize<'de> for Nu {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct NuVisitor;

        impl Visitor<'_> for NuVisitor {
            type Value = Nu;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or \"inf\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Nu, E> {
                usize::try_from(v)
                    .ok()
                    .and_then(|v| ChangePoint::at(v).ok())
                    .map(Nu)
                    .ok_or_else(|| E::invalid_value(de::Unexpected::Unsigned(v), &self))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Nu, E> {
                match u64::try_from(v) {
                    Ok(v) => self.visit_u64(v),
                    Err(_) => Err(E::invalid_value(de::Unexpected::Signed(v), &self)),
                }
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Nu, E> {
                if v == "inf" {
                    Ok(Nu(ChangePoint::Never))
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(NuVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv]
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().to_string())
        })
    }

    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Ok(Self::from_json(&text)?)
    }

    /// Validates cross-field rules and builds the runtime objects.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let model = GaussianModel::new(self.schedule()?)
            .map_err(|e| invalid("model.schedule", e.to_string()))?;
        let d = &self.detector;
        let detector = DetectorConfig::new(d.kind, d.window)
            .map_err(|e| invalid("detector.window", e.to_string()))?;
        let threshold = match (d.threshold, d.gamma) {
            (Some(_), Some(_)) => {
                return Err(invalid("detector", "give either threshold or gamma, not both"))
            }
            (Some(a), None) if a.is_nan() => return Err(invalid("detector.threshold", "NaN")),
            (Some(a), None) => Some(a),
            (None, Some(g)) => Some(log_gamma("detector.gamma", g)?),
            (None, None) => None,
        };
        let r = &self.run;
        if r.horizon == Some(0) {
            return Err(invalid("run.horizon", "must be >= 1"));
        }
        if r.trials == Some(0) {
            return Err(invalid("run.trials", "must be >= 1"));
        }
        if let Some(grid) = &r.nu_grid {
            if grid.is_empty() || grid.contains(&0) {
                return Err(invalid("run.nu_grid", "must be non-empty with entries >= 1"));
            }
        }
        if let Some(gammas) = &r.gammas {
            if gammas.is_empty() {
                return Err(invalid("run.gammas", "must be non-empty"));
            }
            for (i, &g) in gammas.iter().enumerate() {
                log_gamma(&format!("run.gammas[{i}]"), g)?;
            }
            if gammas.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid("run.gammas", "must be strictly increasing"));
            }
        }
        if self.output.formats.is_empty() {
            return Err(invalid("output.formats", "must name at least one format"));
        }
        if let Some(b) = &self.verify {
            check_budgets(b)?;
        }
        Ok(Resolved {
            model,
            detector,
            threshold,
        })
    }

    fn schedule(&self) -> Result<MeanSchedule, ConfigError> {
        let s = &self.model.schedule;
        let p = &s.params;
        let require_mu = || s.mu.ok_or_else(|| invalid("model.schedule.mu", "required for this kind"));
        let require = |value: Option<f64>, name: &str| {
            value.ok_or_else(|| invalid(&format!("model.schedule.params.{name}"), "required for this kind"))
        };
        let reject = |value: Option<f64>, name: &str| match value {
            Some(_) => Err(invalid(
                &format!("model.schedule.params.{name}"),
                "not used by this kind",
            )),
            None => Ok(()),
        };
        if s.table.is_some() && s.kind != ScheduleKind::ExplicitTable {
            return Err(invalid("model.schedule.table", "only used by explicit-table"));
        }
        let schedule = match s.kind {
            ScheduleKind::Constant => {
                reject(p.rate, "rate")?;
                reject(p.slope, "slope")?;
                reject(p.ratio, "ratio")?;
                MeanSchedule::Constant { mu: require_mu()? }
            }
            ScheduleKind::Arctangent => {
                reject(p.slope, "slope")?;
                reject(p.ratio, "ratio")?;
                MeanSchedule::Arctangent {
                    mu: s.mu.unwrap_or(FRAC_PI_2),
                    rate: p.rate.unwrap_or(1.0),
                }
            }
            ScheduleKind::LinearSaturating => {
                reject(p.rate, "rate")?;
                reject(p.ratio, "ratio")?;
                MeanSchedule::LinearSaturating {
                    mu: require_mu()?,
                    slope: require(p.slope, "slope")?,
                }
            }
            ScheduleKind::GeometricApproach => {
                reject(p.rate, "rate")?;
                reject(p.slope, "slope")?;
                MeanSchedule::GeometricApproach {
                    mu: require_mu()?,
                    ratio: require(p.ratio, "ratio")?,
                }
            }
            ScheduleKind::ExplicitTable => {
                if s.mu.is_some() {
                    return Err(invalid("model.schedule.mu", "explicit-table takes its limit from the table"));
                }
                reject(p.rate, "rate")?;
                reject(p.slope, "slope")?;
                reject(p.ratio, "ratio")?;
                let table = s
                    .table
                    .clone()
                    .ok_or_else(|| invalid("model.schedule.table", "required for explicit-table"))?;
                MeanSchedule::table(table)
            }
        };
        schedule
            .validate()
            .map_err(|e| invalid("model.schedule", e.to_string()))?;
        Ok(schedule)
    }

    pub fn nu(&self) -> Option<ChangePoint> {
        self.run.nu.map(|n| n.0)
    }
}

fn log_gamma(path: &str, gamma: f64) -> Result<f64, ConfigError> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(gamma.ln())
    } else {
        Err(invalid(path, format!("gamma must be finite and > 0, got {gamma}")))
    }
}

fn check_budgets(b: &Budgets) -> Result<(), ConfigError> {
    let positive = [
        ("verify.cesaro_n", b.cesaro_n),
        ("verify.moment_trials", b.moment_trials),
        ("verify.slln_trials", b.slln_trials),
        ("verify.dominance_k_small", b.dominance_k_small),
        ("verify.dominance_k_large", b.dominance_k_large),
        ("verify.dominance_n", b.dominance_n),
        ("verify.dominance_trials", b.dominance_trials),
    ];
    for (path, value) in positive {
        if value == 0 {
            return Err(invalid(path, "must be >= 1"));
        }
    }
    if b.moment_indices.is_empty() || b.moment_indices.contains(&0) {
        return Err(invalid("verify.moment_indices", "must be non-empty with entries >= 1"));
    }
    if b.slln_grid.is_empty()
        || b.slln_grid[0] == 0
        || b.slln_grid.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(invalid("verify.slln_grid", "must be non-empty, >= 1 and strictly increasing"));
    }
    Ok(())
}

/// Runtime objects built from a validated config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub model: GaussianModel,
    pub detector: DetectorConfig,
    /// Threshold from `detector.threshold` or `log(detector.gamma)`.
    pub threshold: Option<f64>,
}
