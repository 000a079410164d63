//! Run configuration, read from TOML.
//!
//! Parsing happens in two steps. Serde checks the shape of the file and
//! [`RunConfig::problem`] then checks the values, so every error names the
//! offending key (for example `problem.p`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::barrier::BarrierConfig;
use crate::error::{Error, Result};
use crate::geometry::{Hyperrect, StateControlPartition};
use crate::gp::{BoundOptions, ErrorBoundConfig, InformationGain, KernelConfig};
use crate::systems::{NoiseModel, SystemModel};

/// A box written as `{ lower = [...], upper = [...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSpec {
    fn build(&self, key: &str) -> Result<Hyperrect> {
        Hyperrect::new(self.lower.clone(), self.upper.clone()).map_err(|e| config_error(key, e))
    }
}

impl From<&Hyperrect> for BoxSpec {
    fn from(b: &Hyperrect) -> Self {
        Self {
            lower: b.lower().to_vec(),
            upper: b.upper().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// `x' = A x + B u + w`.
    Linear,
    /// `x' = x + speed (cos u, sin u) + w`, `u ∈ [-π, π]`.
    Dubins,
    /// Only a dataset file is available; validation is disabled.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub kind: SystemKind,
    #[serde(default)]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub control_box: Option<BoxSpec>,
    #[serde(default)]
    pub speed: Option<f64>,
    /// Bypass learning and use the exact dynamics (`ε = δ = 0`).
    #[serde(default)]
    pub known: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Per-dimension standard deviation of the additive Gaussian noise.
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub safe_set: BoxSpec,
    pub initial_set: BoxSpec,
    pub state_cell_width: Vec<f64>,
    /// Number of control cells per control dimension.
    pub control_cells: Vec<usize>,
    pub horizon: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub size: Option<usize>,
    /// Box over `(x, u)` to sample from. Defaults to the safe set grown by
    /// one state cell, times the control box.
    #[serde(default)]
    pub sampling_region: Option<BoxSpec>,
    /// Existing dataset file, used instead of generating one.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSection {
    #[serde(default = "one")]
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
    #[serde(default = "one_usize")]
    pub subdivisions: usize,
    #[serde(default)]
    pub interval_std: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    /// `"computed"`.
    Mode(String),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorSection {
    pub delta: f64,
    pub rkhs_bounds: Vec<f64>,
    #[serde(default = "computed")]
    pub information_gain: GainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSection {
    #[serde(default = "max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "tolerance")]
    pub tolerance: f64,
}

impl Default for BarrierSection {
    fn default() -> Self {
        Self {
            max_iterations: max_iterations(),
            tolerance: tolerance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    #[serde(default = "trials")]
    pub trials: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self { trials: trials() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "out")]
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, out: out() }
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub noise: NoiseSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default)]
    pub gp: Option<GpSection>,
    #[serde(default)]
    pub error: Option<ErrorSection>,
    #[serde(default)]
    pub barrier: BarrierSection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub run: RunSection,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn computed() -> GainSpec {
    GainSpec::Mode("computed".into())
}
fn max_iterations() -> usize {
    200
}
fn tolerance() -> f64 {
    1e-9
}
fn trials() -> usize {
    1000
}
fn out() -> PathBuf {
    PathBuf::from("out")
}

fn config_error(key: &str, err: impl std::fmt::Display) -> Error {
    let message = match err.to_string() {
        s if s.starts_with("invalid argument: ") => s["invalid argument: ".len()..].to_string(),
        s => s,
    };
    Error::Config {
        key: key.to_string(),
        message,
    }
}

fn check(ok: bool, key: &str, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config_error(key, message))
    }
}

fn check_len(len: usize, expected: usize, key: &str) -> Result<()> {
    check(
        len == expected,
        key,
        &format!("expected {expected} entries, found {len}"),
    )
}

/// Learning settings, present unless the system is known.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningSetup {
    pub dataset_size: usize,
    pub sampling_region: Hyperrect,
    pub dataset_path: Option<PathBuf>,
    pub kernel: KernelConfig,
    pub error: ErrorBoundConfig,
    pub bounds: BoundOptions,
}

/// Validated, ready-to-use problem description.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Ground truth, absent for dataset-only runs.
    pub system: Option<SystemModel>,
    pub noise: NoiseModel,
    pub partition: StateControlPartition,
    pub horizon: usize,
    pub p: f64,
    /// `None` when the dynamics are known exactly.
    pub learning: Option<LearningSetup>,
    pub barrier: BarrierConfig,
    pub trials: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_error("<file>", e.message()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            config_error(&key, e.into_inner().message())
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse(&text)?;
        cfg.problem()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_error("<file>", e))
    }

    /// Checks every value and assembles the typed problem.
    pub fn problem(&self) -> Result<Problem> {
        let sys = &self.system;
        let prob = &self.problem;
        check(prob.p > 0.0 && prob.p < 1.0, "problem.p", "p must lie in (0,1)")?;
        check(prob.horizon >= 1, "problem.horizon", "horizon must be at least 1")?;

        let safe_set = prob.safe_set.build("problem.safe_set")?;
        let initial_set = prob.initial_set.build("problem.initial_set")?;
        let n = safe_set.dim();
        check(
            safe_set.contains_box(&initial_set),
            "problem.initial_set",
            "initial set must lie inside the safe set",
        )?;

        let system = match sys.kind {
            SystemKind::Linear => {
                let a = sys
                    .a
                    .clone()
                    .ok_or_else(|| config_error("system.a", "required for linear systems"))?;
                let b = sys
                    .b
                    .clone()
                    .ok_or_else(|| config_error("system.b", "required for linear systems"))?;
                let cb = sys
                    .control_box
                    .as_ref()
                    .ok_or_else(|| config_error("system.control_box", "required for linear systems"))?
                    .build("system.control_box")?;
                check_len(a.len(), n, "system.a")?;
                Some(SystemModel::linear(a, b, cb).map_err(|e| config_error("system.b", e))?)
            }
            SystemKind::Dubins => {
                check(n == 2, "problem.safe_set", "the Dubins system is planar")?;
                let speed = sys
                    .speed
                    .ok_or_else(|| config_error("system.speed", "required for Dubins systems"))?;
                check(
                    speed.is_finite() && speed > 0.0,
                    "system.speed",
                    "speed must be positive",
                )?;
                check(
                    sys.control_box.is_none(),
                    "system.control_box",
                    "the Dubins control box is fixed to [-pi, pi]",
                )?;
                Some(SystemModel::dubins(speed))
            }
            SystemKind::Dataset => {
                check(!sys.known, "system.known", "a dataset-only system cannot be known")?;
                None
            }
        };
        let control_box = match (&system, &sys.control_box) {
            (Some(s), _) => s.control_box.clone(),
            (None, Some(cb)) => cb.build("system.control_box")?,
            (None, None) => return Err(config_error("system.control_box", "required for dataset systems")),
        };
        let m = control_box.dim();

        check_len(self.noise.std.len(), n, "noise.std")?;
        let noise = NoiseModel::new(self.noise.std.clone()).map_err(|e| config_error("noise.std", e))?;

        check_len(prob.state_cell_width.len(), n, "problem.state_cell_width")?;
        check_len(prob.control_cells.len(), m, "problem.control_cells")?;
        let partition = StateControlPartition::uniform(
            safe_set.clone(),
            &prob.state_cell_width,
            control_box.clone(),
            &prob.control_cells,
            initial_set,
        )
        .map_err(|e| config_error("problem.state_cell_width", e))?;

        let learning = if sys.known {
            None
        } else {
            Some(self.learning(&safe_set, &control_box, n, m)?)
        };

        check(
            self.barrier.max_iterations >= 1,
            "barrier.max_iterations",
            "at least one iteration is needed",
        )?;
        check(
            self.barrier.tolerance >= 0.0 && self.barrier.tolerance.is_finite(),
            "barrier.tolerance",
            "tolerance must be non-negative",
        )?;
        check(
            self.validation.trials >= 1,
            "validation.trials",
            "at least one trial is needed",
        )?;

        Ok(Problem {
            system,
            noise,
            partition,
            horizon: prob.horizon,
            p: prob.p,
            learning,
            barrier: BarrierConfig {
                max_iterations: self.barrier.max_iterations,
                tolerance: self.barrier.tolerance,
                ..BarrierConfig::new(prob.horizon)
            },
            trials: self.validation.trials,
            seed: self.run.seed,
        })
    }

    fn learning(&self, safe_set: &Hyperrect, control_box: &Hyperrect, n: usize, m: usize) -> Result<LearningSetup> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| config_error("data", "required unless system.known = true"))?;
        let gp = self
            .gp
            .as_ref()
            .ok_or_else(|| config_error("gp", "required unless system.known = true"))?;
        let err = self
            .error
            .as_ref()
            .ok_or_else(|| config_error("error", "required unless system.known = true"))?;

        let dataset_size = match (&data.path, data.size) {
            (Some(_), _) => data.size.unwrap_or(0),
            (None, Some(size)) => {
                check(size >= 1, "data.size", "dataset size must be at least 1")?;
                size
            }
            (None, None) => return Err(config_error("data.size", "required when data.path is not given")),
        };
        if self.system.kind == SystemKind::Dataset {
            check(data.path.is_some(), "data.path", "required for dataset systems")?;
        }
        let sampling_region = match &data.sampling_region {
            Some(b) => {
                let region = b.build("data.sampling_region")?;
                check_len(region.dim(), n + m, "data.sampling_region")?;
                region
            }
            None => safe_set
                .dilate(&self.problem.state_cell_width)
                .map_err(|e| config_error("problem.state_cell_width", e))?
                .product(control_box),
        };

        check_len(gp.lengthscales.len(), n + m, "gp.lengthscales")?;
        let kernel = KernelConfig::new(gp.signal_variance, gp.lengthscales.clone(), gp.noise_variance)
            .map_err(|e| config_error("gp", e))?;
        check(
            gp.subdivisions >= 1,
            "gp.subdivisions",
            "at least one subdivision is needed",
        )?;

        check_len(err.rkhs_bounds.len(), n, "error.rkhs_bounds")?;
        let information_gain = match &err.information_gain {
            GainSpec::Mode(s) if s == "computed" => InformationGain::Computed,
            GainSpec::Mode(s) => {
                return Err(config_error(
                    "error.information_gain",
                    format!("expected \"computed\" or a number, found \"{s}\""),
                ))
            }
            GainSpec::Value(v) => InformationGain::Given(*v),
        };
        let error = ErrorBoundConfig {
            delta: err.delta,
            rkhs_bounds: err.rkhs_bounds.clone(),
            information_gain,
        };
        error.validate(n).map_err(|e| config_error("error", e))?;
        check(
            err.delta > 0.0 && err.delta < 1.0,
            "error.delta",
            "delta must lie in (0,1)",
        )?;

        Ok(LearningSetup {
            dataset_size,
            sampling_region,
            dataset_path: data.path.clone(),
            kernel,
            error,
            bounds: BoundOptions {
                subdivisions: gp.subdivisions,
                interval_std: gp.interval_std,
            },
        })
    }
}
