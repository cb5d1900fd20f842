//! CSV ingestion, standardization, deterministic splitting, and synthetic
//! regression fixtures.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{stream, stream_rng};

/// How missing or unparseable cells are handled during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    /// Drop any row with a missing value in a selected column.
    #[default]
    Drop,
    /// Replace missing cells with the column mean of the parseable cells.
    ImputeMean,
}

/// Column selection and missing-value policy for one CSV file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target_column: String,
    pub feature_columns: Vec<String>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
}

/// Numeric table produced by [`load_csv`]: selected feature columns plus the
/// target, after the missing-value policy has been applied.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Rows removed under the drop policy.
    pub dropped_rows: usize,
}

/// Per-column standardization statistics (population moments over the full
/// data, computed before splitting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

/// Standardized regression dataset with frozen train/val/test splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    /// Standardized feature matrix, row per sample.
    pub x: Vec<Vec<f64>>,
    /// Standardized target vector.
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub norm: NormStats,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

impl Dataset {
    pub fn num_attrs(&self) -> usize {
        self.feature_names.len()
    }

    /// Gathers the rows selected by `idx` into owned arrays.
    pub fn rows(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = idx.iter().map(|&i| self.x[i].clone()).collect();
        let y = idx.iter().map(|&i| self.y[i]).collect();
        (x, y)
    }

    /// Maps a standardized target value back to original units.
    pub fn destandardize_target(&self, y_std: f64) -> f64 {
        y_std * self.norm.target_std + self.norm.target_mean
    }

    /// Loads, standardizes, and splits a CSV file in one step.
    pub fn from_csv(path: &Path, schema: &CsvSchema, name: &str, seed: u64) -> Result<Dataset> {
        let table = load_csv(path, schema)?;
        Dataset::from_table(&table, name, seed)
    }

    /// Standardizes a raw table and splits it with the given seed.
    pub fn from_table(table: &RawTable, name: &str, seed: u64) -> Result<Dataset> {
        let (x, y, norm) = standardize(table)?;
        let (train_idx, val_idx, test_idx) = split(y.len(), seed)?;
        Ok(Dataset {
            name: name.to_string(),
            x,
            y,
            feature_names: table.feature_names.clone(),
            norm,
            train_idx,
            val_idx,
            test_idx,
            seed,
        })
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    let t = cell.trim();
    if t.is_empty() || t == "?" || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return None;
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads the selected columns of an RFC-4180 CSV file with a header row.
///
/// Missing or non-numeric cells are dropped row-wise or mean-imputed per the
/// schema's policy.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let target_col = col_index(&schema.target_column)?;
    let feature_cols: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;

    // Parse selected cells; None marks a missing value.
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut row: Vec<Option<f64>> = Vec::with_capacity(feature_cols.len() + 1);
        for &c in &feature_cols {
            row.push(record.get(c).and_then(parse_cell));
        }
        row.push(record.get(target_col).and_then(parse_cell));
        rows.push(row);
    }

    let width = feature_cols.len() + 1;
    let mut dropped = 0usize;
    let kept: Vec<Vec<f64>> = match schema.missing_policy {
        MissingPolicy::Drop => rows
            .into_iter()
            .filter_map(|row| {
                if row.iter().all(|c| c.is_some()) {
                    Some(row.into_iter().map(|c| c.unwrap()).collect())
                } else {
                    dropped += 1;
                    None
                }
            })
            .collect(),
        MissingPolicy::ImputeMean => {
            let mut means = vec![0.0f64; width];
            for (j, mean) in means.iter_mut().enumerate() {
                let mut sum = 0.0;
                let mut n = 0usize;
                for row in &rows {
                    if let Some(v) = row[j] {
                        sum += v;
                        n += 1;
                    }
                }
                if n == 0 {
                    let name = if j < feature_cols.len() {
                        schema.feature_columns[j].clone()
                    } else {
                        schema.target_column.clone()
                    };
                    return Err(Error::Config(format!(
                        "column `{name}` has no parseable values to impute from"
                    )));
                }
                *mean = sum / n as f64;
            }
            rows.into_iter()
                .map(|row| {
                    row.into_iter()
                        .enumerate()
                        .map(|(j, c)| c.unwrap_or(means[j]))
                        .collect()
                })
                .collect()
        }
    };

    let mut features = Vec::with_capacity(kept.len());
    let mut targets = Vec::with_capacity(kept.len());
    for mut row in kept {
        let t = row.pop().expect("target cell present");
        targets.push(t);
        features.push(row);
    }
    Ok(RawTable {
        feature_names: schema.feature_columns.clone(),
        features,
        targets,
        dropped_rows: dropped,
    })
}

fn column_moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Z-scores every feature column and the target with population moments.
pub fn standardize(table: &RawTable) -> Result<(Vec<Vec<f64>>, Vec<f64>, NormStats)> {
    if table.targets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let d = table.feature_names.len();
    let mut feature_means = Vec::with_capacity(d);
    let mut feature_stds = Vec::with_capacity(d);
    for j in 0..d {
        let (mean, std) = column_moments(table.features.iter().map(move |r| r[j]));
        if std <= 0.0 {
            return Err(Error::ConstantColumn(table.feature_names[j].clone()));
        }
        feature_means.push(mean);
        feature_stds.push(std);
    }
    let (target_mean, target_std) = column_moments(table.targets.iter().copied());
    if target_std <= 0.0 {
        return Err(Error::ConstantColumn("<target>".into()));
    }
    let x = table
        .features
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - feature_means[j]) / feature_stds[j])
                .collect()
        })
        .collect();
    let y = table
        .targets
        .iter()
        .map(|v| (v - target_mean) / target_std)
        .collect();
    Ok((
        x,
        y,
        NormStats {
            feature_means,
            feature_stds,
            target_mean,
            target_std,
        },
    ))
}

/// Deterministic 64/16/20 train/val/test split of `0..n`.
///
/// A seeded shuffle takes 20% for test; the remainder is split 80/20 again
/// into train and validation. Index lists are returned sorted.
pub fn split(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if n < 10 {
        return Err(Error::Config(format!(
            "need at least 10 rows to split, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, stream::SPLIT, 0);
    idx.shuffle(&mut rng);
    let n_test = n / 5;
    let n_val = (n - n_test) / 5;
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut val: Vec<usize> = idx[n_test..n_test + n_val].to_vec();
    let mut train: Vec<usize> = idx[n_test + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

/// Families of synthetic regression targets with a known rule-count ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Three linear regimes switched on the first feature; features beyond
    /// the third carry no signal.
    PiecewiseLinear,
    /// Three Gaussian bumps along the first feature.
    GaussianBumps,
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::PiecewiseLinear => "piecewise_linear",
            SyntheticKind::GaussianBumps => "gaussian_bumps",
        }
    }
}

/// Slopes of the three piecewise-linear regimes over the first three features.
pub const PIECEWISE_SLOPES: [[f64; 3]; 3] = [
    [2.0, -1.0, 0.5],
    [-1.5, 2.0, -0.5],
    [0.5, 1.0, 1.5],
];

/// Regime of a raw (unstandardized) first-feature value.
pub fn piecewise_region(x1: f64) -> usize {
    if x1 < -1.0 {
        0
    } else if x1 < 1.0 {
        1
    } else {
        2
    }
}

/// Generates a standardized, split synthetic dataset; the second return value
/// is the number of rules in the generating model.
pub fn synthesize(
    kind: SyntheticKind,
    n: usize,
    d: usize,
    noise_std: f64,
    seed: u64,
) -> Result<(Dataset, usize)> {
    assert!(n >= 10 && d >= 1, "need n >= 10 and d >= 1");
    let mut rng = stream_rng(seed, stream::SYNTH, 0);
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid noise sigma");
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut y = match kind {
            SyntheticKind::PiecewiseLinear => {
                let slopes = &PIECEWISE_SLOPES[piecewise_region(row[0])];
                row.iter()
                    .take(3)
                    .zip(slopes)
                    .map(|(x, b)| x * b)
                    .sum::<f64>()
            }
            SyntheticKind::GaussianBumps => {
                let bumps = [(-1.8, 0.6, 2.0), (0.0, 0.5, -1.5), (1.8, 0.7, 1.0)];
                bumps
                    .iter()
                    .map(|&(c, s, a): &(f64, f64, f64)| {
                        a * (-0.5 * ((row[0] - c) / s).powi(2)).exp()
                    })
                    .sum::<f64>()
            }
        };
        if noise_std > 0.0 {
            y += noise.sample(&mut rng);
        }
        features.push(row);
        targets.push(y);
    }
    let table = RawTable {
        feature_names: (0..d).map(|j| format!("x{}", j + 1)).collect(),
        features,
        targets,
        dropped_rows: 0,
    };
    let name = format!("synthetic_{}", kind.name());
    let ds = Dataset::from_table(&table, &name, seed)?;
    Ok((ds, 3))
}
