//! Command-line entry point: synthetic data generation, graph construction,
//! training, evaluation, ablation sweeps, and gradient checking.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use braingat::check::run_gradcheck_suite;
use braingat::data::{
    ablation_rows_to_csv, ablation_sweep, build_graphs, load_dataset, load_model, read_json,
    save_model, synth_generate_to_dir, write_json_atomic, SynthConfig,
};
use braingat::error::{Error, Result};
use braingat::graph::MetricMask;
use braingat::train::{
    default_ablation_grid, evaluate, train_model, AblationPoint, TrainConfig,
};
use braingat::{ModelConfig, RngStream};

#[derive(Parser)]
#[command(name = "braingat", version, about = "Sparse graph-attention brain-graph classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base random seed (overrides the seed in --config if both are given).
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config file; fields missing from it take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for generated files and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (subjects plus manifest).
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of subjects.
        #[arg(long, default_value_t = 200)]
        subjects: usize,
    },
    /// Build fused graphs from a dataset manifest and write them as JSON.
    BuildGraph {
        #[command(flatten)]
        common: Common,
        /// Path to manifest.json.
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated edge metrics: any of pearson,spearman,minkowski.
        #[arg(long, default_value = "pearson,spearman,minkowski")]
        metrics: String,
    },
    /// Train a model on every subject in a dataset and save a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Evaluate a saved checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Path to a model checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Cross-validated ablation sweep over sparsity, heads, and edge usage.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

/// Config file accepted by train/eval/ablate: both sections optional.
#[derive(Debug, Default, Serialize, Deserialize)]
struct RunConfig {
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default)]
    model: Option<ModelConfig>,
    #[serde(default)]
    ablation_grid: Option<Vec<AblationPoint>>,
}

fn load_run_config(common: &Common) -> Result<(TrainConfig, ModelConfig, Option<Vec<AblationPoint>>)> {
    let file: RunConfig = match &common.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    let mut tcfg = file.train.unwrap_or_default();
    let mcfg = file.model.unwrap_or_default();
    if let Some(seed) = common.seed {
        tcfg.seed = seed;
    }
    tcfg.validate()?;
    mcfg.validate()?;
    Ok((tcfg, mcfg, file.ablation_grid))
}

fn parse_metrics(arg: &str) -> Result<MetricMask> {
    let mut mask = MetricMask {
        pearson: false,
        spearman: false,
        minkowski: false,
    };
    for part in arg.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "pearson" => mask.pearson = true,
            "spearman" => mask.spearman = true,
            "minkowski" => mask.minkowski = true,
            other => {
                return Err(Error::config(format!(
                    "unknown metric {other}; expected pearson, spearman, or minkowski"
                )))
            }
        }
    }
    if !(mask.pearson || mask.spearman || mask.minkowski) {
        return Err(Error::config("at least one edge metric is required"));
    }
    Ok(mask)
}

fn cmd_synth(common: &Common, subjects: usize) -> Result<()> {
    let mut cfg: SynthConfig = match &common.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::new(subjects, 0),
    };
    if common.config.is_none() {
        cfg.n_subjects = subjects;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let manifest = synth_generate_to_dir(&cfg, &common.out)?;
    println!("wrote {} subjects; manifest at {}", cfg.n_subjects, manifest.display());
    Ok(())
}

fn cmd_build_graph(common: &Common, manifest: &Path, metrics: &str) -> Result<()> {
    let mask = parse_metrics(metrics)?;
    let (_, subjects) = load_dataset(manifest)?;
    let dir = common.out.join("graphs");
    let (mut lo, mut hi, mut sum, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for s in &subjects {
        let g = s.to_graph(mask)?;
        for i in 0..g.n_nodes() {
            for j in 0..g.n_nodes() {
                if i != j {
                    let e = g.e.at(i, j);
                    lo = lo.min(e);
                    hi = hi.max(e);
                    sum += e;
                    count += 1;
                }
            }
        }
        write_json_atomic(&dir.join(format!("{}.json", s.id)), &g)?;
    }
    println!(
        "wrote {} graphs ({} metrics) to {}; edge weights min {:.4} mean {:.4} max {:.4}",
        subjects.len(),
        mask.label(),
        dir.display(),
        lo,
        sum / count.max(1) as f64,
        hi
    );
    Ok(())
}

fn cmd_train(common: &Common, manifest: &Path) -> Result<()> {
    let (tcfg, mcfg, _) = load_run_config(common)?;
    let (_, subjects) = load_dataset(manifest)?;
    let graphs = build_graphs(&subjects, MetricMask::default())?;
    let mut rng = RngStream::new(tcfg.seed);
    let (model, loss_trace) = train_model(&graphs, &tcfg, &mcfg, &mut rng)?;
    let model_path = common.out.join("model.json");
    save_model(&model_path, &model)?;
    write_json_atomic(&common.out.join("loss_trace.json"), &loss_trace)?;
    let train_metrics = evaluate(&model, &graphs)?;
    write_json_atomic(&common.out.join("train_metrics.json"), &train_metrics)?;
    println!(
        "trained {} epochs (final loss {:.6}); model at {}",
        loss_trace.len(),
        loss_trace.last().copied().unwrap_or(f64::NAN),
        model_path.display()
    );
    Ok(())
}

fn cmd_eval(common: &Common, manifest: &Path, model_path: &Path) -> Result<()> {
    let (_, subjects) = load_dataset(manifest)?;
    let graphs = build_graphs(&subjects, MetricMask::default())?;
    let model = load_model(model_path)?;
    let metrics = evaluate(&model, &graphs)?;
    write_json_atomic(&common.out.join("eval_metrics.json"), &metrics)?;
    println!(
        "acc={:.4} sen={:.4} spe={:.4} f1={:.4} (n={})",
        metrics.acc,
        metrics.sen,
        metrics.spe,
        metrics.f1,
        graphs.len()
    );
    Ok(())
}

fn cmd_ablate(common: &Common, manifest: &Path) -> Result<()> {
    let (tcfg, mcfg, grid) = load_run_config(common)?;
    let (_, subjects) = load_dataset(manifest)?;
    let grid = grid.unwrap_or_else(default_ablation_grid);
    let rows = ablation_sweep(&subjects, &grid, &tcfg, &mcfg)?;
    write_json_atomic(&common.out.join("ablation.json"), &rows)?;
    let csv = ablation_rows_to_csv(&rows);
    std::fs::create_dir_all(&common.out).ok();
    std::fs::write(common.out.join("ablation.csv"), &csv).map_err(|e| Error::Io {
        path: common.out.join("ablation.csv").display().to_string(),
        source: e,
    })?;
    for r in &rows {
        println!(
            "{:<16} acc {:.4} +- {:.4}  sen {:.4}  spe {:.4}  f1 {:.4}",
            r.name, r.acc_mean, r.acc_std, r.sen_mean, r.spe_mean, r.f1_mean
        );
    }
    Ok(())
}

fn cmd_gradcheck(common: &Common) -> Result<()> {
    let seed = common.seed.unwrap_or(17);
    let reports = run_gradcheck_suite(seed)?;
    write_json_atomic(&common.out.join("gradcheck.json"), &reports)?;
    let mut all_ok = true;
    for r in &reports {
        println!(
            "{:<24} max rel err {:.3e} (tol {:.0e}) {}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "ok" } else { "FAIL" }
        );
        all_ok &= r.passed;
    }
    if !all_ok {
        return Err(Error::Eval("gradient check failed".to_string()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { common, subjects } => cmd_synth(common, *subjects),
        Command::BuildGraph {
            common,
            manifest,
            metrics,
        } => cmd_build_graph(common, manifest, metrics),
        Command::Train { common, manifest } => cmd_train(common, manifest),
        Command::Eval {
            common,
            manifest,
            model,
        } => cmd_eval(common, manifest, model),
        Command::Ablate { common, manifest } => cmd_ablate(common, manifest),
        Command::Gradcheck { common } => cmd_gradcheck(common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
