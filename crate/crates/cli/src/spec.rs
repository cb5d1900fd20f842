//! Experiment specification: dataset reference, model config, mechanism
//! switches, grid axes, and the declarative TOML config file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use adar_core::{CsvSchema, Dataset, MissingPolicy, SyntheticKind, TrainConfig};

/// Where the data comes from: a CSV file plus schema, or a generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Csv {
        path: PathBuf,
        target: String,
        features: Vec<String>,
        #[serde(default)]
        missing: MissingPolicy,
        #[serde(default)]
        name: Option<String>,
    },
    Synthetic {
        generator: SyntheticKind,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_attrs")]
        attrs: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
}

fn default_samples() -> usize {
    2000
}
fn default_attrs() -> usize {
    3
}
fn default_noise() -> f64 {
    0.1
}

impl DatasetSpec {
    pub fn name(&self) -> String {
        match self {
            DatasetSpec::Csv { name, path, .. } => name.clone().unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "csv".into())
            }),
            DatasetSpec::Synthetic { generator, .. } => format!("synthetic_{}", generator.name()),
        }
    }

    /// Loads (or generates) and splits the dataset with the given seed.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Csv {
                path,
                target,
                features,
                missing,
                ..
            } => {
                let schema = CsvSchema {
                    target_column: target.clone(),
                    feature_columns: features.clone(),
                    missing_policy: *missing,
                };
                Dataset::from_csv(path, &schema, &self.name(), seed)
                    .with_context(|| format!("loading {}", path.display()))
            }
            DatasetSpec::Synthetic {
                generator,
                samples,
                attrs,
                noise_std,
            } => {
                let (ds, _) = adar_core::synthesize(*generator, *samples, *attrs, *noise_std, seed)?;
                Ok(ds)
            }
        }
    }
}

/// One axis set of the sensitivity grid; the default reproduces the 32-point
/// design (2 values per axis).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GridAxes {
    pub g_thres: Vec<f64>,
    pub pr_thres: Vec<f64>,
    pub pr_freq: Vec<usize>,
    pub pa_thres: Vec<f64>,
    pub pa_freq: Vec<usize>,
}

impl Default for GridAxes {
    fn default() -> Self {
        GridAxes {
            g_thres: vec![5e-5, 1e-4],
            pr_thres: vec![0.05, 0.1],
            pr_freq: vec![50, 100],
            pa_thres: vec![0.05, 0.1],
            pa_freq: vec![25, 50],
        }
    }
}

impl GridAxes {
    pub fn len(&self) -> usize {
        self.g_thres.len()
            * self.pr_thres.len()
            * self.pr_freq.len()
            * self.pa_thres.len()
            * self.pa_freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    /// Rule caps to sweep in ablations.
    pub max_rules_list: Vec<usize>,
    pub repeats: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
    /// Concurrent runs; results are independent of this value.
    pub jobs: usize,
    pub grid: GridAxes,
}

impl ExperimentSpec {
    pub fn new(dataset: DatasetSpec, out_dir: PathBuf) -> Self {
        ExperimentSpec {
            dataset,
            train: TrainConfig::default(),
            max_rules_list: vec![3, 5, 7, 9],
            repeats: 1,
            base_seed: 42,
            out_dir,
            jobs: 1,
            grid: GridAxes::default(),
        }
    }
}

/// Layout of the declarative TOML config file; every section is optional and
/// command-line flags override its values.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ConfigFile {
    pub dataset: Option<DatasetSpec>,
    pub train: Option<TrainConfig>,
    pub experiment: Option<ExperimentSection>,
    pub grid: Option<GridAxes>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub repeats: Option<usize>,
    pub max_rules: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub base_seed: Option<u64>,
    pub jobs: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Standalone schema file for `--schema`: names the target and feature
/// columns of a CSV and the missing-value policy.
#[derive(Debug, Clone, Deserialize)]
pub struct SchemaFile {
    pub target: String,
    pub features: Vec<String>,
    #[serde(default)]
    pub missing: MissingPolicy,
    #[serde(default)]
    pub name: Option<String>,
}

impl SchemaFile {
    pub fn load(path: &Path) -> Result<SchemaFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading schema {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing schema {}", path.display()))
    }
}
