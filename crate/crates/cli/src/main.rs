//! `adar` — train and evaluate ADAR neuro-fuzzy regression models.
//!
//! Verbs: `train` (one run), `ablate` (the four mechanism configurations),
//! `grid` (the 32-point sensitivity sweep), `report` (re-aggregate a
//! `runs.csv`). A TOML config file supplies defaults; flags override it.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use adar_cli::{
    ablation_points, grid_points, run_experiment, run_single, ConfigFile, DatasetSpec,
    ExperimentSpec, RunPoint, SchemaFile,
};
use adar_core::SyntheticKind;

#[derive(Parser)]
#[command(name = "adar", version, about = "ADAR neuro-fuzzy regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its metrics, model, and event log.
    Train(RunArgs),
    /// Run the four ablation configurations across rule caps with repeats.
    Ablate(RunArgs),
    /// Run the hyperparameter sensitivity grid with repeats.
    Grid(RunArgs),
    /// Re-derive the aggregate CSV from a per-run detail CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV dataset path (requires --schema unless the config file has one).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// TOML schema file naming target/feature columns and missing policy.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Synthetic generator instead of a CSV: piecewise_linear | gaussian_bumps.
    #[arg(long, value_name = "KIND")]
    synthetic: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    attrs: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; per-run seeds derive from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Concurrent runs (results are independent of this).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write the standardized dataset snapshot next to the run.
    #[arg(long)]
    save_dataset: bool,

    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Rule caps; a list for `ablate`, the first value elsewhere.
    #[arg(long, value_delimiter = ',')]
    max_rules: Option<Vec<usize>>,
    #[arg(long)]
    init_rules: Option<usize>,
    #[arg(long)]
    g_thres: Option<f64>,
    #[arg(long, visible_alias = "theta-rule")]
    pr_thres: Option<f64>,
    #[arg(long)]
    pr_freq: Option<usize>,
    #[arg(long, visible_alias = "theta-attr")]
    pa_thres: Option<f64>,
    #[arg(long)]
    pa_freq: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    persistence: Option<u32>,
    #[arg(long)]
    l1_attr: Option<f64>,
    #[arg(long)]
    l1_rule: Option<f64>,
    #[arg(long)]
    rollback_tolerance: Option<f64>,
    #[arg(long)]
    grow_topk: Option<usize>,
    /// Enable/disable attribute pruning (true/false).
    #[arg(long)]
    ap: Option<bool>,
    /// Enable/disable rule growing & pruning (true/false).
    #[arg(long)]
    rgrp: Option<bool>,
    #[arg(long)]
    use_bias: bool,
    /// Literal masked-factor firing semantics.
    #[arg(long)]
    strict_firing: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Per-run detail CSV produced by `ablate` or `grid`.
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn build_spec(&self, default_repeats: usize) -> Result<ExperimentSpec> {
        let file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };

        let dataset = self.resolve_dataset(file.dataset)?;
        let out_dir = self
            .out
            .clone()
            .or(file.experiment.as_ref().and_then(|e| e.out.clone()))
            .unwrap_or_else(|| PathBuf::from("runs"));
        let mut spec = ExperimentSpec::new(dataset, out_dir);
        if let Some(train) = file.train {
            spec.train = train;
        }
        if let Some(grid) = file.grid {
            spec.grid = grid;
        }
        if let Some(exp) = file.experiment {
            if let Some(r) = exp.repeats {
                spec.repeats = r;
            } else {
                spec.repeats = default_repeats;
            }
            if let Some(m) = exp.max_rules {
                spec.max_rules_list = m;
            }
            if let Some(s) = exp.base_seed {
                spec.base_seed = s;
            }
            if let Some(j) = exp.jobs {
                spec.jobs = j;
            }
        } else {
            spec.repeats = default_repeats;
        }

        // Flag overrides.
        if let Some(v) = self.repeats {
            spec.repeats = v;
        }
        if let Some(v) = self.seed {
            spec.base_seed = v;
            spec.train.seed = v;
        }
        if let Some(v) = self.jobs {
            spec.jobs = v;
        }
        if let Some(list) = &self.max_rules {
            if list.is_empty() {
                bail!("--max-rules needs at least one value");
            }
            spec.max_rules_list = list.clone();
            spec.train.max_rules = list[0];
        }
        let t = &mut spec.train;
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(self.lr, t.learning_rate);
        set!(self.batch_size, t.batch_size);
        set!(self.epochs, t.epochs);
        set!(self.g_thres, t.growth_threshold);
        set!(self.pr_thres, t.theta_rule);
        set!(self.pr_freq, t.prune_rule_freq);
        set!(self.pa_thres, t.theta_attr);
        set!(self.pa_freq, t.prune_attr_freq);
        set!(self.patience, t.patience);
        set!(self.persistence, t.persistence_checks);
        set!(self.l1_attr, t.l1_attr);
        set!(self.l1_rule, t.l1_rule);
        set!(self.rollback_tolerance, t.rollback_tolerance);
        set!(self.ap, t.ap_enabled);
        set!(self.rgrp, t.rgrp_enabled);
        if let Some(v) = self.init_rules {
            t.init_rules = Some(v);
        }
        if let Some(v) = self.grow_topk {
            t.grow_topk = Some(v);
        }
        if self.use_bias {
            t.use_bias = true;
        }
        if self.strict_firing {
            t.strict_firing = true;
        }
        t.validate().context("invalid training configuration")?;
        if spec.repeats == 0 {
            bail!("repeats must be at least 1");
        }
        Ok(spec)
    }

    fn resolve_dataset(&self, from_config: Option<DatasetSpec>) -> Result<DatasetSpec> {
        if let Some(kind) = &self.synthetic {
            let generator = match kind.as_str() {
                "piecewise_linear" => SyntheticKind::PiecewiseLinear,
                "gaussian_bumps" => SyntheticKind::GaussianBumps,
                other => bail!("unknown synthetic generator `{other}`"),
            };
            return Ok(DatasetSpec::Synthetic {
                generator,
                samples: self.samples.unwrap_or(2000),
                attrs: self.attrs.unwrap_or(3),
                noise_std: self.noise_std.unwrap_or(0.1),
            });
        }
        if let Some(path) = &self.dataset {
            let schema_path = self
                .schema
                .as_ref()
                .context("--dataset requires --schema <toml>")?;
            let schema = SchemaFile::load(schema_path)?;
            return Ok(DatasetSpec::Csv {
                path: path.clone(),
                target: schema.target,
                features: schema.features,
                missing: schema.missing,
                name: schema.name,
            });
        }
        from_config.context("no dataset given: use --dataset/--schema, --synthetic, or a config file")
    }
}

fn cmd_train(args: &RunArgs) -> Result<ExitCode> {
    let spec = args.build_spec(1)?;
    let point = RunPoint {
        config_id: "train".into(),
        repeat: 0,
        cfg: spec.train.clone(),
        dataset: spec.dataset.clone(),
        out_dir: Some(spec.out_dir.clone()),
    };
    let (row, _) = run_single(&point)?;
    if args.save_dataset {
        let dataset = spec.dataset.load(spec.train.seed)?;
        let path = spec.out_dir.join("train_r0").join("dataset.json");
        std::fs::write(path, serde_json::to_string(&dataset)?)?;
    }
    let m = &row.metrics;
    println!(
        "dataset={} seed={} rmse={:.6} rmse_std_units={:.6} i_ov={:.6} i_fsp={:.6} rules={} attrs={}",
        row.dataset, row.seed, m.rmse, m.rmse_standardized, m.i_ov, m.i_fsp,
        m.final_rules, m.final_attributes
    );
    println!("artifacts under {}", spec.out_dir.join("train_r0").display());
    Ok(ExitCode::SUCCESS)
}

fn run_and_report(spec: &ExperimentSpec, points: Vec<RunPoint>, what: &str) -> Result<ExitCode> {
    eprintln!(
        "{what}: {} runs ({} configs x {} repeats), jobs={}",
        points.len(),
        points.len() / spec.repeats.max(1),
        spec.repeats,
        spec.jobs
    );
    let report = run_experiment(&points, spec.jobs, &spec.out_dir)?;
    for agg in &report.aggregates {
        println!(
            "{}: rmse {:.6} +/- {:.6}, i_ov {:.6}, i_fsp {:.6}, rules {:.2}, attrs {:.2}",
            agg.config_id, agg.rmse_mean, agg.rmse_std, agg.i_ov_mean, agg.i_fsp_mean,
            agg.final_rules_mean, agg.final_attributes_mean
        );
    }
    println!("report files under {}", spec.out_dir.display());
    if report.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} run(s) failed:", report.failures.len());
        for f in &report.failures {
            eprintln!("  {}_r{}: {}", f.config_id, f.repeat, f.error);
        }
        Ok(ExitCode::FAILURE)
    }
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Train(args) => cmd_train(&args),
        Command::Ablate(args) => {
            let spec = args.build_spec(5)?;
            let points = ablation_points(&spec);
            run_and_report(&spec, points, "ablate")
        }
        Command::Grid(args) => {
            let spec = args.build_spec(3)?;
            if spec.grid.is_empty() {
                bail!("grid axes are empty");
            }
            let points = grid_points(&spec);
            run_and_report(&spec, points, "grid")
        }
        Command::Report(args) => {
            let path = adar_cli::reaggregate(&args.runs, &args.out)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
