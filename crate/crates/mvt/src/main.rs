use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mvt::ablate::{ablate, mean_std, write_rows, Grid};
use mvt::checkpoint::Checkpoint;
use mvt::config::TrainConfig;
use mvt::data::{generate, save_bundle};
use mvt::invariance::invariance_check;
use mvt::pipeline::{self, evaluate_checkpoint, load_data, resolve_paths, train_to_dir, write_json, write_metrics_csv};
use mvt::Metrics;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "mvt", version, about = "Multi-view transformer for 3D visual grounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/eval dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model and keep the best checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding train.jsonl and eval.jsonl.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Independent runs with consecutive seeds.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Evaluate a checkpoint on the eval split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Test-time view count; defaults to the checkpoint's.
        #[arg(long)]
        views: Option<usize>,
    },
    /// Check that scores do not change when the scene is rotated by a
    /// multiple of the view step.
    Invariance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Train every cell of a configuration grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

/// `ablate` configuration: a base training config plus the grid axes.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct AblationFile {
    base: TrainConfig,
    grid: Grid,
}

fn load_config(common: &Common) -> anyhow::Result<TrainConfig> {
    let mut config = match &common.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn create_out(out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn print_mean_std(runs: &[Metrics]) {
    let pct = |f: fn(&Metrics) -> f64| {
        let (m, s) = mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s)
    };
    println!("over {} runs:", runs.len());
    println!("  overall    {}", pct(|m| m.overall));
    println!("  easy       {}", pct(|m| m.easy));
    println!("  hard       {}", pct(|m| m.hard));
    println!("  view-dep   {}", pct(|m| m.view_dep));
    println!("  view-indep {}", pct(|m| m.view_indep));
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let config = load_config(&common)?;
            let bundle = generate(&config.data, config.seed)?;
            save_bundle(&common.out, &bundle)?;
            let (t, e) = (bundle.metadata.train, bundle.metadata.eval);
            println!("split  total  easy  hard  view-dep  view-indep");
            for (name, s) in [("train", t), ("eval", e)] {
                println!("{name:<6} {:>5} {:>5} {:>5} {:>9} {:>11}", s.total, s.easy, s.hard, s.view_dep, s.view_indep);
            }
            println!("wrote {}", common.out.display());
        }
        Command::Train { common, data, repeats } => {
            let mut config = load_config(&common)?;
            if let Some(r) = repeats {
                config.repeats = r;
            }
            config.validate()?;
            let (train_path, eval_path) = resolve_paths(&config, data.as_deref())?;
            let loaded = load_data(&train_path, &eval_path)?;
            create_out(&common.out)?;
            config.save(&common.out.join("config.json"))?;
            let mut runs = Vec::new();
            for r in 0..config.repeats {
                let mut c = config.clone();
                c.seed = config.seed + r as u64;
                let dir = if config.repeats == 1 { common.out.clone() } else { common.out.join(format!("run{r}")) };
                println!("epoch  lr        loss     ref      text     obj      eval-acc");
                let outcome = train_to_dir(&c, &loaded, &dir, |e| {
                    println!(
                        "{:>5}  {:.2e}  {:.4}  {:.4}  {:.4}  {:.4}  {:.2}",
                        e.epoch,
                        e.lr_base,
                        e.train_loss_total,
                        e.train_loss_ref,
                        e.train_loss_text,
                        e.train_loss_obj,
                        100.0 * e.eval_overall
                    )
                })?;
                println!("best epoch {}:\n{}", outcome.best.epoch, outcome.best.metrics.table());
                runs.push(outcome.best.metrics);
            }
            if runs.len() > 1 {
                print_mean_std(&runs);
                write_metrics_csv(&common.out.join("runs.csv"), &runs)?;
            }
        }
        Command::Eval { common, checkpoint, data, views } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let config = match &common.config {
                Some(_) => load_config(&common)?,
                None => ckpt.config.clone(),
            };
            let (train_path, eval_path) = resolve_paths(&config, data.as_deref())?;
            let loaded = load_data(&train_path, &eval_path)?;
            let metrics = evaluate_checkpoint(&ckpt, &loaded.eval, &loaded.metadata, views)?;
            println!("{}", metrics.table());
            create_out(&common.out)?;
            write_json(&common.out.join("eval_metrics.json"), &metrics)?;
            write_metrics_csv(&common.out.join("eval_metrics.csv"), &[metrics])?;
        }
        Command::Invariance {
            common,
            checkpoint,
            data,
            samples,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let config = match &common.config {
                Some(_) => load_config(&common)?,
                None => ckpt.config.clone(),
            };
            let (train_path, eval_path) = resolve_paths(&config, data.as_deref())?;
            let loaded = load_data(&train_path, &eval_path)?;
            pipeline::check_vocabulary(&ckpt.model, &loaded.metadata)?;
            let n = samples.min(loaded.eval.len());
            let report = invariance_check(&ckpt.model, &loaded.eval[..n])?;
            println!("{}", report.summary());
            create_out(&common.out)?;
            write_json(&common.out.join("invariance.json"), &report)?;
            if report.pass == Some(false) {
                bail!("invariance check failed: max deviation {:.3e}", report.max);
            }
        }
        Command::Ablate { common, data, repeats } => {
            let file: AblationFile = match &common.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                None => AblationFile::default(),
            };
            let mut base = file.base;
            if let Some(seed) = common.seed {
                base.seed = seed;
            }
            if let Some(r) = repeats {
                base.repeats = r;
            }
            base.validate()?;
            let (train_path, eval_path) = resolve_paths(&base, data.as_deref())?;
            let loaded = load_data(&train_path, &eval_path)?;
            let cells = file.grid.cells(&base);
            create_out(&common.out)?;
            println!("views eval-views aggregation     stage         aug   alpha  overall  view-dep  view-indep");
            let rows = ablate(&base, &cells, &loaded.train, &loaded.eval, |r| {
                println!(
                    "{:>5} {:>10} {:<15} {:<13} {:<5} {:>5}  {:>7.2}  {:>8.2}  {:>10.2}",
                    r.views,
                    r.eval_views,
                    r.aggregation,
                    r.stage,
                    r.rotation_augmentation,
                    r.alpha,
                    100.0 * r.overall,
                    100.0 * r.view_dep,
                    100.0 * r.view_indep
                )
            })?;
            write_rows(&common.out.join("ablation.csv"), &rows)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
