#![allow(dead_code)]

use mvt_core::gradcheck::{gradient_check, GradCheckReport};
use mvt_core::language::Vocabulary;
use mvt_core::model::{ModelConfig, MvtModel};
use mvt_core::params::{Bound, ParamId};
use mvt_core::synth::{generate_scene, Scene, SceneConfig};
use mvt_core::{Graph, Result, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// d = 8 model small enough for exhaustive finite differences.
pub fn tiny_config(views: usize) -> ModelConfig {
    ModelConfig {
        views,
        width: 8,
        heads: 2,
        decoder_layers: 2,
        language_layers: 1,
        object_encoder_layers: 1,
        ffn_multiplier: 2,
        dropout: 0.0,
        point_hidden: 6,
        point_pooled: 6,
        num_categories: 4,
        ..ModelConfig::default()
    }
}

pub fn small_config(views: usize) -> ModelConfig {
    ModelConfig {
        views,
        width: 16,
        heads: 4,
        decoder_layers: 2,
        language_layers: 2,
        point_hidden: 16,
        point_pooled: 16,
        ..ModelConfig::default()
    }
}

pub fn model(config: ModelConfig, seed: u64) -> MvtModel {
    let vocab = Vocabulary::template(config.num_categories);
    MvtModel::new(config, vocab, seed).unwrap()
}

pub fn scene(seed: u64, objects: usize, points: usize, categories: usize) -> Scene {
    let config = SceneConfig {
        num_categories: categories,
        min_objects: objects,
        max_objects: objects,
        points_per_object: points,
        ..SceneConfig::default()
    };
    generate_scene(&mut ChaCha8Rng::seed_from_u64(seed), seed, &config).unwrap()
}

pub fn tokens(model: &MvtModel, words: &[&str]) -> Vec<usize> {
    model.tokenize(words).unwrap()
}

/// Finite-difference check over the parameters selected by `select`; the
/// remaining parameters enter as constants.
pub fn check_params<F>(model: &MvtModel, select: impl Fn(&str) -> bool, f: F) -> GradCheckReport
where
    F: for<'g> Fn(&Bound<'g>) -> Result<Var<'g>>,
{
    let store = &model.store;
    let chosen: Vec<ParamId> = store.ids().filter(|&id| select(&store.meta(id).name)).collect();
    assert!(!chosen.is_empty(), "no parameters selected");
    let inputs: Vec<_> = chosen.iter().map(|&id| store.get(id).clone()).collect();
    gradient_check(&inputs, |g: &Graph, vars: &[Var<'_>]| {
        let mut all: Vec<Var<'_>> = store.values().iter().map(|t| g.constant(t.clone())).collect();
        for (&id, &v) in chosen.iter().zip(vars) {
            all[id.index()] = v;
        }
        f(&Bound::from_vars(g, all))
    })
    .unwrap()
}
