//! Executes experiment points and aggregates their metrics.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use adar_core::seed::derive_run_seed;
use adar_core::{fit, write_event_log, MetricsReport, TrainConfig, TrainReport};

use crate::spec::{DatasetSpec, ExperimentSpec};

/// The four ablation configurations: `(label, ap_enabled, rgrp_enabled)`.
pub const ABLATION_VARIANTS: [(&str, bool, bool); 4] = [
    ("Baseline", false, false),
    ("Baseline+RGRP", false, true),
    ("Baseline+AP", true, false),
    ("FullADAR", true, true),
];

/// One concrete run: a config point plus its repeat index. The run seed is
/// derived as `mix(base_seed, fnv1a(config_id), repeat)` and drives the data
/// split/generation and all training randomness.
#[derive(Debug, Clone)]
pub struct RunPoint {
    pub config_id: String,
    pub repeat: usize,
    pub cfg: TrainConfig,
    pub dataset: DatasetSpec,
    pub out_dir: Option<PathBuf>,
}

/// Per-run detail row; serialized into `runs.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub dataset: String,
    pub config_id: String,
    pub repeat: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunFailure {
    pub config_id: String,
    pub repeat: usize,
    pub error: String,
}

/// Mean/std aggregate over the repeats of one config point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub config_id: String,
    pub runs: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub rmse_standardized_mean: f64,
    pub rmse_standardized_std: f64,
    pub i_ov_mean: f64,
    pub i_ov_std: f64,
    pub i_fsp_mean: f64,
    pub i_fsp_std: f64,
    pub final_rules_mean: f64,
    pub final_rules_std: f64,
    pub final_attributes_mean: f64,
    pub final_attributes_std: f64,
}

/// Everything an experiment produced: detail rows, aggregates in config
/// order, and any per-run failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<RunFailure>,
}

/// Runs one point: load the dataset with the run seed, fit, evaluate on the
/// test split, and write the run artifacts (event log, model, metrics).
pub fn run_single(point: &RunPoint) -> Result<(RunRow, TrainReport)> {
    let run_id = format!("{}_r{}", point.config_id, point.repeat);
    let dataset = point
        .dataset
        .load(point.cfg.seed)
        .with_context(|| format!("run {run_id}: dataset"))?;
    let (rb, train_report) =
        fit(&dataset, &point.cfg).with_context(|| format!("run {run_id}: training"))?;
    let metrics = MetricsReport::evaluate(&rb, &dataset)
        .with_context(|| format!("run {run_id}: evaluation"))?;

    let mut event_log = None;
    if let Some(dir) = &point.out_dir {
        let run_dir = dir.join(&run_id);
        fs::create_dir_all(&run_dir)
            .with_context(|| format!("run {run_id}: creating {}", run_dir.display()))?;
        let log_path = run_dir.join("events.jsonl");
        let file = fs::File::create(&log_path)?;
        write_event_log(&train_report, std::io::BufWriter::new(file))?;
        fs::write(run_dir.join("model.json"), rb.to_json()?)?;
        fs::write(
            run_dir.join("metrics.json"),
            serde_json::to_string_pretty(&metrics)?,
        )?;
        event_log = Some(log_path);
    }

    Ok((
        RunRow {
            dataset: dataset.name.clone(),
            config_id: point.config_id.clone(),
            repeat: point.repeat,
            seed: point.cfg.seed,
            metrics,
            event_log,
        },
        train_report,
    ))
}

/// Executes points (optionally `jobs`-way parallel); row order always follows
/// the input order, so results are independent of the parallelism level.
pub fn run_points(points: &[RunPoint], jobs: usize) -> (Vec<RunRow>, Vec<RunFailure>) {
    let execute = |p: &RunPoint| run_single(p).map(|(row, _)| row);
    let results: Vec<std::result::Result<RunRow, String>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| {
            points
                .par_iter()
                .map(|p| execute(p).map_err(|e| format!("{e:#}")))
                .collect()
        })
    } else {
        points
            .iter()
            .map(|p| execute(p).map_err(|e| format!("{e:#}")))
            .collect()
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (point, result) in points.iter().zip(results) {
        match result {
            Ok(row) => rows.push(row),
            Err(error) => failures.push(RunFailure {
                config_id: point.config_id.clone(),
                repeat: point.repeat,
                error,
            }),
        }
    }
    (rows, failures)
}

fn expand_repeats(
    spec: &ExperimentSpec,
    config_id: &str,
    cfg: &TrainConfig,
    points: &mut Vec<RunPoint>,
) {
    for repeat in 0..spec.repeats {
        let mut cfg = cfg.clone();
        cfg.seed = derive_run_seed(spec.base_seed, config_id, repeat);
        points.push(RunPoint {
            config_id: config_id.to_string(),
            repeat,
            cfg,
            dataset: spec.dataset.clone(),
            out_dir: Some(spec.out_dir.clone()),
        });
    }
}

/// Points for the four ablation configurations crossed with the rule caps.
pub fn ablation_points(spec: &ExperimentSpec) -> Vec<RunPoint> {
    let mut points = Vec::new();
    for &(label, ap, rgrp) in &ABLATION_VARIANTS {
        for &max_rules in &spec.max_rules_list {
            let config_id = format!("{label}_L{max_rules}");
            let cfg = TrainConfig {
                ap_enabled: ap,
                rgrp_enabled: rgrp,
                max_rules,
                ..spec.train.clone()
            };
            expand_repeats(spec, &config_id, &cfg, &mut points);
        }
    }
    points
}

/// Mirrors the sensitivity-table labels, e.g. `G5e-05_PR0.1_PF50_PA0.05_PAF25`.
pub fn param_set_label(
    g_thres: f64,
    pr_thres: f64,
    pr_freq: usize,
    pa_thres: f64,
    pa_freq: usize,
) -> String {
    format!(
        "G{}_PR{}_PF{}_PA{}_PAF{}",
        format_param(g_thres),
        format_param(pr_thres),
        pr_freq,
        format_param(pa_thres),
        pa_freq
    )
}

/// Decimal below 1e-4 switches to `<mantissa>e-<2-digit exponent>`, matching
/// the labels of the sensitivity table.
pub fn format_param(v: f64) -> String {
    fn trim(s: String) -> String {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    }
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a < 1e-4 {
        let mut exp = a.log10().floor() as i32;
        let mut mant = v / 10f64.powi(exp);
        if mant.abs() >= 10.0 {
            mant /= 10.0;
            exp += 1;
        }
        if mant.abs() < 1.0 {
            mant *= 10.0;
            exp -= 1;
        }
        format!("{}e-{:02}", trim(format!("{mant:.12}")), -exp)
    } else {
        trim(format!("{v:.12}"))
    }
}

/// Cartesian product over the grid axes, in axis-major order.
pub fn grid_points(spec: &ExperimentSpec) -> Vec<RunPoint> {
    let mut points = Vec::new();
    for &g in &spec.grid.g_thres {
        for &prt in &spec.grid.pr_thres {
            for &prf in &spec.grid.pr_freq {
                for &pat in &spec.grid.pa_thres {
                    for &paf in &spec.grid.pa_freq {
                        let config_id = param_set_label(g, prt, prf, pat, paf);
                        let cfg = TrainConfig {
                            growth_threshold: g,
                            theta_rule: prt,
                            prune_rule_freq: prf,
                            theta_attr: pat,
                            prune_attr_freq: paf,
                            ap_enabled: true,
                            rgrp_enabled: true,
                            ..spec.train.clone()
                        };
                        expand_repeats(spec, &config_id, &cfg, &mut points);
                    }
                }
            }
        }
    }
    points
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups rows by config id (first-appearance order) and reduces each group
/// to population mean/std per metric.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    for row in rows {
        if !order.contains(&row.config_id.as_str()) {
            order.push(&row.config_id);
        }
    }
    order
        .into_iter()
        .map(|config_id| {
            let group: Vec<&RunRow> = rows.iter().filter(|r| r.config_id == config_id).collect();
            let col = |f: &dyn Fn(&RunRow) -> f64| -> Vec<f64> { group.iter().map(|r| f(r)).collect() };
            let (rmse_mean, rmse_std) = mean_std(&col(&|r| r.metrics.rmse));
            let (rs_mean, rs_std) = mean_std(&col(&|r| r.metrics.rmse_standardized));
            let (iov_mean, iov_std) = mean_std(&col(&|r| r.metrics.i_ov));
            let (ifsp_mean, ifsp_std) = mean_std(&col(&|r| r.metrics.i_fsp));
            let (rules_mean, rules_std) = mean_std(&col(&|r| r.metrics.final_rules as f64));
            let (attrs_mean, attrs_std) = mean_std(&col(&|r| r.metrics.final_attributes as f64));
            AggregateRow {
                config_id: config_id.to_string(),
                runs: group.len(),
                rmse_mean,
                rmse_std,
                rmse_standardized_mean: rs_mean,
                rmse_standardized_std: rs_std,
                i_ov_mean: iov_mean,
                i_ov_std: iov_std,
                i_fsp_mean: ifsp_mean,
                i_fsp_std: ifsp_std,
                final_rules_mean: rules_mean,
                final_rules_std: rules_std,
                final_attributes_mean: attrs_mean,
                final_attributes_std: attrs_std,
            }
        })
        .collect()
}

/// Runs a full experiment (prepared points), aggregates, and writes the
/// report files under `out_dir`.
pub fn run_experiment(points: &[RunPoint], jobs: usize, out_dir: &Path) -> Result<ExperimentReport> {
    let (rows, failures) = run_points(points, jobs);
    let aggregates = aggregate(&rows);
    let report = ExperimentReport {
        rows,
        aggregates,
        failures,
    };
    crate::report::emit_report(&report, out_dir)?;
    Ok(report)
}
