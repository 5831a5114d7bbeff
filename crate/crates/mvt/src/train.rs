//! Deterministic training loop.

use std::path::Path;

use mvt_core::geometry::view_angles;
use mvt_core::language::Vocabulary;
use mvt_core::model::MvtModel;
use mvt_core::optim::AdamState;
use mvt_core::synth::{rotate_scene, Sample};
use mvt_core::Graph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, run_sample, Prepared};
use crate::metrics::{LossValues, Metrics};

/// One row of the per-epoch log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr_base: f64,
    pub lr_transformer: f64,
    pub train_loss_total: f64,
    pub train_loss_ref: f64,
    pub train_loss_text: f64,
    pub train_loss_obj: f64,
    pub eval_overall: f64,
    pub eval_easy: f64,
    pub eval_hard: f64,
    pub eval_view_dep: f64,
    pub eval_view_indep: f64,
    pub eval_loss_total: f64,
}

/// Parameters and optimizer state at the end of an epoch.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub model: MvtModel,
    pub optimizer: AdamState,
    pub epoch: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Highest eval overall accuracy; ties keep the earlier epoch.
    pub best: Snapshot,
    pub last: Snapshot,
    pub history: Vec<EpochRecord>,
}

/// Dropout stream for one optimizer step.
fn step_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step
}

pub fn train(
    config: &TrainConfig,
    train_set: &[Sample],
    eval_set: &[Sample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(HarnessError::Config("train and eval splits must be nonempty".into()));
    }
    let vocab = Vocabulary::template(config.model.num_categories);
    let mut model = MvtModel::new(config.model.clone(), vocab, config.seed)?;
    let mut optimizer = AdamState::new(config.adam, model.store.values());
    let views = config.model.view_set()?;
    let eval_views = mvt_core::geometry::ViewSet::equal_angle(config.eval_view_count())?;
    let aug_angles = view_angles(4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let prepared = train_set
        .iter()
        .map(|s| Prepared::new(&model, s))
        .collect::<Result<Vec<_>>>()?;
    let groups: Vec<_> = model.store.groups().collect();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<Snapshot> = None;
    let mut step = 0u64;
    let mut last_metrics = Metrics::default();
    for epoch in 0..config.epochs {
        let rates = config.schedule.rates(epoch, groups.iter().copied());
        order.shuffle(&mut rng);
        let mut sums = LossValues::default();
        for batch in order.chunks(config.batch_size) {
            let graph = Graph::train(step_seed(config.seed, step));
            let p = model.store.bind(&graph);
            let categories = model.category_features(&p)?;
            let mut total: Option<mvt_core::Var<'_>> = None;
            for &i in batch {
                let sample = &train_set[i];
                let augmented;
                let scene = if config.model.rotation_augmentation {
                    let theta = aug_angles.angles()[rng.random_range(0..aug_angles.len())];
                    augmented = rotate_scene(&sample.scene, theta);
                    &augmented
                } else {
                    &sample.scene
                };
                let (_, losses) = run_sample(&model, &p, scene, &prepared[i], categories, &views)?;
                let value = losses.total.item();
                if !value.is_finite() {
                    return Err(HarnessError::NonFinite {
                        epoch,
                        step: step as usize,
                        value,
                    });
                }
                sums.total += value;
                sums.reference += losses.reference.item();
                sums.text += losses.text.item();
                sums.object += losses.object.item();
                total = Some(match total {
                    None => losses.total,
                    Some(acc) => acc.add(losses.total)?,
                });
            }
            let loss = total.expect("nonempty batch").scale(1.0 / batch.len() as f64);
            let grads = graph.backward(loss)?;
            let grads = p.gradients(&grads);
            drop(p);
            optimizer.step(model.store.values_mut(), &grads, &rates)?;
            step += 1;
        }
        let metrics = evaluate(&model, eval_set, &eval_views)?;
        let n = train_set.len() as f64;
        let record = EpochRecord {
            epoch,
            lr_base: config.schedule.lr(epoch, mvt_core::params::ParamGroup::Base),
            lr_transformer: config.schedule.lr(epoch, mvt_core::params::ParamGroup::Transformer),
            train_loss_total: sums.total / n,
            train_loss_ref: sums.reference / n,
            train_loss_text: sums.text / n,
            train_loss_obj: sums.object / n,
            eval_overall: metrics.overall,
            eval_easy: metrics.easy,
            eval_hard: metrics.hard,
            eval_view_dep: metrics.view_dep,
            eval_view_indep: metrics.view_indep,
            eval_loss_total: metrics.loss_total,
        };
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|b| metrics.overall > b.metrics.overall) {
            best = Some(Snapshot {
                model: model.clone(),
                optimizer: optimizer.clone(),
                epoch,
                metrics,
            });
        }
        last_metrics = metrics;
    }
    let last = Snapshot {
        metrics: last_metrics,
        epoch: config.epochs.saturating_sub(1),
        model,
        optimizer,
    };
    let best = best.unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { best, last, history })
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(crate::error::io_err(path))
}
