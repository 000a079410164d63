//! End-to-end pipeline over an output directory.
//!
//! Each stage reads the artifacts of the previous one and writes its own, so
//! a run can be resumed stage by stage. [`Pipeline::run`] is exactly the
//! composition of the five stages.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Problem, RunConfig};
use crate::error::{Error, Result};
use crate::gp::{FitSummary, GpModel};
use crate::pruning::{synthesize_permissible_set, PermissibleStrategySet, PruningOutcome, Removal};
use crate::rng::{self, Stream};
use crate::systems::{generate_dataset_with, Dataset};
use crate::transition::{build_matrix, KnownModel, LearnedModel, TransitionIntervalMatrix};
use crate::validation::{validate, write_trajectories_csv, ValidationConfig, ValidationReport};

pub const DATASET: &str = "dataset.csv";
pub const GP_FIT: &str = "gp_fit.json";
pub const BOUNDS: &str = "bounds.json";
pub const CERTIFICATE: &str = "certificate.json";
pub const PERMISSIBLE_SET: &str = "permissible_set.json";
pub const INFEASIBLE: &str = "infeasible.json";
pub const VALIDATION: &str = "validation.json";
pub const TRAJECTORIES: &str = "trajectories.csv";
pub const ADVERSARIAL: &str = "adversarial.csv";
pub const SUMMARY: &str = "run_summary.txt";

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    GenData,
    FitGp,
    Bounds,
    Prune,
    Validate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::GenData,
        Stage::FitGp,
        Stage::Bounds,
        Stage::Prune,
        Stage::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::FitGp => "fit-gp",
            Stage::Bounds => "bounds",
            Stage::Prune => "prune",
            Stage::Validate => "validate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|stage| stage.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage `{s}`")))
    }
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub p: Option<f64>,
}

/// Result of a stage that completed without error.
#[derive(Debug, Clone, PartialEq)]
pub enum StageOutcome {
    Done,
    Skipped(String),
    /// Pruning emptied a state cell; the removal log is in `infeasible.json`.
    Infeasible {
        cell: usize,
        removals: usize,
    },
}

/// Written to `infeasible.json` when pruning fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibleReport {
    pub cell: usize,
    pub removal_log: Vec<Removal>,
}

/// Headline numbers of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub safety_lower_bound: f64,
    pub retained_fraction: f64,
    pub retained_pairs: usize,
    pub total_pairs: usize,
    pub validation: Option<ValidationReport>,
}

/// A validated configuration bound to an output directory.
#[derive(Debug)]
pub struct Pipeline {
    config: RunConfig,
    problem: Problem,
    out: PathBuf,
}

fn read(path: &Path, stage: Stage) -> Result<String> {
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage: stage.name().into(),
        }),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl Pipeline {
    pub fn new(mut config: RunConfig, overrides: &Overrides) -> Result<Self> {
        if let Some(out) = &overrides.out {
            config.run.out = out.clone();
        }
        if let Some(seed) = overrides.seed {
            config.run.seed = seed;
        }
        if let Some(p) = overrides.p {
            config.problem.p = p;
        }
        let problem = config.problem()?;
        let out = config.run.out.clone();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self { config, problem, out })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    pub fn stage(&self, stage: Stage) -> Result<StageOutcome> {
        let started = Instant::now();
        let outcome = match stage {
            Stage::GenData => self.gen_data(),
            Stage::FitGp => self.fit_gp(),
            Stage::Bounds => self.bounds(),
            Stage::Prune => self.prune(),
            Stage::Validate => self.validate(),
        }?;
        log::info!("stage {stage} finished in {:.2?}: {outcome:?}", started.elapsed());
        Ok(outcome)
    }

    /// Runs every stage, stopping early on infeasibility, and writes the
    /// summary.
    pub fn run(&self) -> Result<StageOutcome> {
        let started = Instant::now();
        for stage in Stage::ALL {
            let outcome = self.stage(stage)?;
            if let StageOutcome::Infeasible { cell, removals } = outcome {
                let line = format!(
                    "infeasible: state cell {cell} lost every control cell after {removals} removals, wall time {:.2}s\n",
                    started.elapsed().as_secs_f64()
                );
                write(&self.path(SUMMARY), &line)?;
                return Ok(outcome);
            }
        }
        let summary = self.summary()?;
        let mut line = format!(
            "safety bound {:.10}, retained fraction {:.4} ({} of {} pairs), wall time {:.2}s\n",
            summary.safety_lower_bound,
            summary.retained_fraction,
            summary.retained_pairs,
            summary.total_pairs,
            started.elapsed().as_secs_f64()
        );
        if let Some(v) = &summary.validation {
            line.push_str(&format!(
                "validation: {} violations in {} trials, empirical safety {:.4}\n",
                v.violations, v.trials, v.empirical_safety
            ));
        }
        write(&self.path(SUMMARY), &line)?;
        Ok(StageOutcome::Done)
    }

    /// Reads back the headline numbers of a completed run.
    pub fn summary(&self) -> Result<RunSummary> {
        let set = self.load_permissible_set()?;
        let validation = match read(&self.path(VALIDATION), Stage::Validate) {
            Ok(text) => Some(serde_json::from_str(&text)?),
            Err(Error::MissingArtifact { .. }) => None,
            Err(e) => return Err(e),
        };
        let partition = &self.problem.partition;
        Ok(RunSummary {
            safety_lower_bound: set.certificate.safety_lower_bound,
            retained_fraction: set.retained_fraction,
            retained_pairs: set.retained_pairs(),
            total_pairs: partition.num_states() * partition.num_controls(),
            validation,
        })
    }

    fn gen_data(&self) -> Result<StageOutcome> {
        let Some(learning) = &self.problem.learning else {
            return Ok(StageOutcome::Skipped("dynamics are known".into()));
        };
        let dataset = match (&learning.dataset_path, &self.problem.system) {
            (Some(path), _) => Dataset::load(path)?,
            (None, Some(system)) => {
                let mut rng = rng::substream(self.problem.seed, Stream::Data);
                generate_dataset_with(
                    system,
                    &self.problem.noise,
                    &learning.sampling_region,
                    learning.dataset_size,
                    &mut rng,
                )?
            }
            (None, None) => return Err(Error::invalid("no dataset path and no system to sample")),
        };
        dataset.save(self.path(DATASET))?;
        Ok(StageOutcome::Done)
    }

    fn load_dataset(&self, stage: Stage) -> Result<Dataset> {
        Dataset::parse(&read(&self.path(DATASET), stage)?)
    }

    fn fit(&self, dataset: &Dataset) -> Result<GpModel> {
        let learning = self.problem.learning.as_ref().expect("learned problem");
        let partition = &self.problem.partition;
        let (n, m) = (partition.safe_set().dim(), partition.control_box().dim());
        if dataset.state_dim() != n || dataset.control_dim() != m {
            return Err(Error::DimensionMismatch {
                expected: n + m,
                got: dataset.state_dim() + dataset.control_dim(),
            });
        }
        GpModel::fit(dataset, &learning.kernel)
    }

    fn fit_gp(&self) -> Result<StageOutcome> {
        if self.problem.learning.is_none() {
            return Ok(StageOutcome::Skipped("dynamics are known".into()));
        }
        let dataset = self.load_dataset(Stage::GenData)?;
        let gp = self.fit(&dataset)?;
        write(&self.path(GP_FIT), &serde_json::to_string_pretty(&gp.summary())?)?;
        Ok(StageOutcome::Done)
    }

    fn bounds(&self) -> Result<StageOutcome> {
        let partition = &self.problem.partition;
        let matrix = match &self.problem.learning {
            None => {
                let system = self.problem.system.clone().expect("known systems have dynamics");
                build_matrix(&KnownModel { system }, &self.problem.noise, partition)?
            }
            Some(learning) => {
                // the fit is cheap next to the bounds, so it is recomputed
                // from the dataset and checked against the recorded summary
                let recorded: FitSummary = serde_json::from_str(&read(&self.path(GP_FIT), Stage::FitGp)?)?;
                let dataset = self.load_dataset(Stage::GenData)?;
                let gp = self.fit(&dataset)?;
                if gp.summary() != recorded {
                    return Err(Error::invalid(format!(
                        "{} does not match {}; rerun the fit-gp stage",
                        GP_FIT, DATASET
                    )));
                }
                let model = LearnedModel::new(gp, &learning.error, learning.bounds)?;
                log::info!("confidence scales {:?}", model.confidence_scales());
                build_matrix(&model, &self.problem.noise, partition)?
            }
        };
        matrix.save(self.path(BOUNDS))?;
        Ok(StageOutcome::Done)
    }

    fn prune(&self) -> Result<StageOutcome> {
        let matrix = TransitionIntervalMatrix::from_json(&read(&self.path(BOUNDS), Stage::Bounds)?)?;
        let partition = &self.problem.partition;
        if matrix.num_states() != partition.num_states() || matrix.num_controls() != partition.num_controls() {
            return Err(Error::invalid(format!(
                "{BOUNDS} does not match the configured partition"
            )));
        }
        for stale in [CERTIFICATE, PERMISSIBLE_SET, INFEASIBLE] {
            let path = self.path(stale);
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        match synthesize_permissible_set(
            &matrix,
            partition.initial_cells(),
            &self.problem.barrier,
            self.problem.p,
        )? {
            PruningOutcome::Permissible(set) => {
                write(&self.path(CERTIFICATE), &set.certificate.to_json()?)?;
                write(&self.path(PERMISSIBLE_SET), &set.to_json()?)?;
                Ok(StageOutcome::Done)
            }
            PruningOutcome::Infeasible { removal_log, cell } => {
                let removals = removal_log.len();
                let report = InfeasibleReport { cell, removal_log };
                write(&self.path(INFEASIBLE), &serde_json::to_string_pretty(&report)?)?;
                Ok(StageOutcome::Infeasible { cell, removals })
            }
        }
    }

    fn load_permissible_set(&self) -> Result<PermissibleStrategySet> {
        PermissibleStrategySet::from_json(&read(&self.path(PERMISSIBLE_SET), Stage::Prune)?)
    }

    fn validate(&self) -> Result<StageOutcome> {
        let Some(system) = &self.problem.system else {
            return Ok(StageOutcome::Skipped("no ground-truth dynamics to simulate".into()));
        };
        let set = self.load_permissible_set()?;
        let partition = &self.problem.partition;
        let config = ValidationConfig {
            trials: self.problem.trials,
            seed: self.problem.seed,
        };
        let (report, runs, adversarial) = validate(system, &self.problem.noise, &set, partition, &config)?;
        let m = partition.control_box().dim();
        write(&self.path(VALIDATION), &serde_json::to_string_pretty(&report)?)?;
        write_trajectories_csv(self.path(TRAJECTORIES), &runs, partition.safe_set(), m)?;
        write_trajectories_csv(self.path(ADVERSARIAL), &adversarial, partition.safe_set(), m)?;
        Ok(StageOutcome::Done)
    }
}
