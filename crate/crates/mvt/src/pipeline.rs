//! File-level operations behind the CLI subcommands.

use std::path::{Path, PathBuf};

use mvt_core::geometry::ViewSet;
use mvt_core::model::MvtModel;
use mvt_core::synth::Sample;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{self, DatasetMetadata, EVAL_FILE, TRAIN_FILE};
use crate::error::{io_err, json_err, HarnessError, Result};
use crate::eval::evaluate;
use crate::metrics::Metrics;
use crate::train::{train, write_history, EpochRecord, TrainOutcome};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS_JSON: &str = "metrics.json";

pub struct LoadedData {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
    pub metadata: DatasetMetadata,
}

/// Dataset paths from the config, or `train.jsonl` / `eval.jsonl` in `dir`.
pub fn resolve_paths(config: &TrainConfig, dir: Option<&Path>) -> Result<(PathBuf, PathBuf)> {
    match (dir, &config.train_path, &config.eval_path) {
        (Some(d), _, _) => Ok((d.join(TRAIN_FILE), d.join(EVAL_FILE))),
        (None, Some(t), Some(e)) => Ok((t.clone(), e.clone())),
        _ => Err(HarnessError::Config(
            "no dataset: set train_path and eval_path in the config or pass --data".into(),
        )),
    }
}

pub fn load_data(train_path: &Path, eval_path: &Path) -> Result<LoadedData> {
    let metadata = data::load_metadata(&data::metadata_path(eval_path))?;
    Ok(LoadedData {
        train: data::read_samples(train_path)?,
        eval: data::read_samples(eval_path)?,
        metadata,
    })
}

pub fn check_vocabulary(model: &MvtModel, metadata: &DatasetMetadata) -> Result<()> {
    if model.vocab != metadata.vocabulary {
        return Err(HarnessError::Config(format!(
            "vocabulary mismatch: checkpoint has {} tokens, dataset has {}",
            model.vocab.len(),
            metadata.vocabulary.len()
        )));
    }
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    std::fs::write(path, text).map_err(io_err(path))
}

/// Trains, writing the per-epoch CSV log, the best and last checkpoints and
/// the best checkpoint's eval metrics into `out`.
pub fn train_to_dir(
    config: &TrainConfig,
    data: &LoadedData,
    out: &Path,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let outcome = train(config, &data.train, &data.eval, on_epoch)?;
    check_vocabulary(&outcome.best.model, &data.metadata)?;
    write_history(&out.join(TRAIN_LOG), &outcome.history)?;
    Checkpoint::from_snapshot(config, &outcome.best).save(&out.join(BEST_CHECKPOINT))?;
    Checkpoint::from_snapshot(config, &outcome.last).save(&out.join(LAST_CHECKPOINT))?;
    write_json(&out.join(METRICS_JSON), &outcome.best.metrics)?;
    Ok(outcome)
}

/// Evaluates a checkpoint with `views` test views (its own view count when
/// `None`).
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    samples: &[Sample],
    metadata: &DatasetMetadata,
    views: Option<usize>,
) -> Result<Metrics> {
    check_vocabulary(&checkpoint.model, metadata)?;
    let n = views.unwrap_or(checkpoint.config.eval_view_count());
    evaluate(&checkpoint.model, samples, &ViewSet::equal_angle(n)?)
}

pub fn write_metrics_csv(path: &Path, metrics: &[Metrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for m in metrics {
        w.serialize(m)?;
    }
    w.flush().map_err(io_err(path))
}
