//! Experiment configuration: a JSON file with the training hyperparameters,
//! the data source, split fractions, output directory, and the method/seed
//! grid to run. Command-line `--seed`, `--method`, and `--out` override the
//! file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fairmtl_core::data::SynthSpec;
use fairmtl_core::trainer::{Method, TrainConfig};
use fairmtl_core::{Error, Result};

/// Where the experiment's dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    /// Generated on the fly from the run seed.
    Synthetic(SynthSpec),
    /// Loaded from a CSV file in the documented schema.
    Csv {
        path: PathBuf,
        d: usize,
        n_tasks: usize,
    },
}

impl DataSource {
    pub fn n_tasks(&self) -> usize {
        match self {
            DataSource::Synthetic(spec) => spec.n_tasks,
            DataSource::Csv { n_tasks, .. } => *n_tasks,
        }
    }

    pub fn d(&self) -> usize {
        match self {
            DataSource::Synthetic(spec) => spec.d,
            DataSource::Csv { d, .. } => *d,
        }
    }
}

fn default_lr_student() -> f64 {
    0.01
}
fn default_lr_teacher() -> f64 {
    0.005
}
fn default_lr_w() -> f64 {
    0.025
}
fn default_gradnorm_alpha() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.9
}
fn default_batch_size() -> usize {
    8192
}
fn default_max_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    10
}
fn default_split_fractions() -> (f64, f64, f64) {
    (0.6, 0.2, 0.2)
}

/// The full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub trunk_dims: Vec<usize>,
    /// Task count; 0 (or omitted) derives it from the data source.
    #[serde(default)]
    pub n_tasks: usize,
    #[serde(default = "default_lr_student")]
    pub lr_student: f64,
    #[serde(default = "default_lr_teacher")]
    pub lr_teacher: f64,
    #[serde(default = "default_lr_w")]
    pub lr_w: f64,
    #[serde(default = "default_gradnorm_alpha")]
    pub gradnorm_alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub epsilon_explore: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Per-task trade-off weights for the fixed and stl methods; omitted
    /// means 1.0 everywhere.
    #[serde(default)]
    pub lambda_fixed: Option<Vec<f64>>,
    pub data: DataSource,
    #[serde(default = "default_split_fractions")]
    pub split_fractions: (f64, f64, f64),
    pub out_dir: PathBuf,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let content =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut config: ExperimentConfig = serde_json::from_str(&content)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if config.n_tasks == 0 {
            config.n_tasks = config.data.n_tasks();
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("methods must name at least one method".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must name at least one seed".into()));
        }
        let mut sorted = self.methods.clone();
        sorted.sort_by_key(|m| m.as_str());
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return Err(Error::Config("methods contains duplicates".into()));
        }
        if self.n_tasks != self.data.n_tasks() {
            return Err(Error::Config(format!(
                "n_tasks = {} disagrees with the data source's {} tasks",
                self.n_tasks,
                self.data.n_tasks()
            )));
        }
        if self.trunk_dims.first() != Some(&self.data.d()) {
            return Err(Error::Config(format!(
                "trunk_dims[0] = {:?} must equal the data dimension {}",
                self.trunk_dims.first(),
                self.data.d()
            )));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        if let Some(lambda) = &self.lambda_fixed {
            if lambda.len() != self.n_tasks {
                return Err(Error::Config(format!(
                    "lambda_fixed has {} entries for {} tasks",
                    lambda.len(),
                    self.n_tasks
                )));
            }
        }
        // Hyperparameter ranges are enforced per run.
        self.train_config(self.methods[0], self.seeds[0]).validate()
    }

    /// The per-run training configuration for one (method, seed) cell.
    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        TrainConfig {
            trunk_dims: self.trunk_dims.clone(),
            n_tasks: self.n_tasks,
            lr_student: self.lr_student,
            lr_teacher: self.lr_teacher,
            lr_w: self.lr_w,
            gradnorm_alpha: self.gradnorm_alpha,
            gamma: self.gamma,
            epsilon_explore: self.epsilon_explore,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            lambda_fixed: self
                .lambda_fixed
                .clone()
                .unwrap_or_else(|| vec![1.0; self.n_tasks]),
            method,
        }
    }

    /// Directory holding one run's artifacts.
    pub fn run_dir(&self, method: Method, seed: u64) -> PathBuf {
        self.out_dir.join(format!("{}_seed{}", method.as_str(), seed))
    }
}
