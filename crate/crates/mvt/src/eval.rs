//! Evaluation over ground-truth candidate objects.

use mvt_core::geometry::ViewSet;
use mvt_core::model::{compute_losses, GroundingOutput, Losses, MvtModel};
use mvt_core::params::Bound;
use mvt_core::synth::{Sample, Scene};
use mvt_core::{Graph, Var};

use crate::error::Result;
use crate::metrics::{LossValues, Metrics, Outcome};

/// Samples evaluated per tape.
const EVAL_CHUNK: usize = 32;

/// Model inputs derived from one sample.
pub struct Prepared {
    pub tokens: Vec<usize>,
    pub target: usize,
    pub target_category: usize,
    pub object_categories: Vec<usize>,
}

impl Prepared {
    pub fn new(model: &MvtModel, sample: &Sample) -> Result<Self> {
        let scene = &sample.scene;
        let target = sample.utterance.target_index;
        let target_category = scene
            .objects
            .get(target)
            .ok_or(mvt_core::Error::Index {
                index: target,
                len: scene.len(),
            })?
            .category;
        Ok(Self {
            tokens: model.tokenize(&sample.utterance.tokens)?,
            target,
            target_category,
            object_categories: scene.objects.iter().map(|o| o.category).collect(),
        })
    }
}

/// Forward pass plus the three losses for one sample.
pub fn run_sample<'g>(
    model: &MvtModel,
    p: &Bound<'g>,
    scene: &Scene,
    input: &Prepared,
    categories: Var<'g>,
    views: &ViewSet,
) -> Result<(GroundingOutput<'g>, Losses<'g>)> {
    let out = model.forward_views(p, scene, &input.tokens, categories, views)?;
    let losses = compute_losses(
        &out,
        input.target,
        input.target_category,
        &input.object_categories,
        model.config.alpha,
    )?;
    Ok((out, losses))
}

/// First index of the largest score.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-sample outcomes in input order.
pub fn evaluate_outcomes(model: &MvtModel, samples: &[Sample], views: &ViewSet) -> Result<Vec<Outcome>> {
    let mut outcomes = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let graph = Graph::eval();
        let p = model.store.bind_frozen(&graph);
        let categories = model.category_features(&p)?;
        for sample in chunk {
            let input = Prepared::new(model, sample)?;
            let (out, losses) = run_sample(model, &p, &sample.scene, &input, categories, views)?;
            let scores = out.scores.value();
            outcomes.push(Outcome {
                tags: sample.tags,
                correct: argmax(scores.data()) == input.target,
                objects: sample.scene.len(),
                losses: LossValues {
                    total: losses.total.item(),
                    reference: losses.reference.item(),
                    text: losses.text.item(),
                    object: losses.object.item(),
                },
            });
        }
    }
    Ok(outcomes)
}

/// Eval-mode grounding scores for each `(scene, sample)` pair; the sample
/// supplies the utterance.
pub fn scores(model: &MvtModel, inputs: &[(&Scene, &Sample)], views: &ViewSet) -> Result<Vec<Vec<f64>>> {
    let mut all = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_CHUNK) {
        let graph = Graph::eval();
        let p = model.store.bind_frozen(&graph);
        let categories = model.category_features(&p)?;
        for (scene, sample) in chunk {
            let tokens = model.tokenize(&sample.utterance.tokens)?;
            let out = model.forward_views(&p, scene, &tokens, categories, views)?;
            all.push(out.scores.value().into_data());
        }
    }
    Ok(all)
}

pub fn evaluate(model: &MvtModel, samples: &[Sample], views: &ViewSet) -> Result<Metrics> {
    Ok(Metrics::from_outcomes(&evaluate_outcomes(model, samples, views)?))
}
