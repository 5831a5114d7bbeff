use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::scene::{generate_scene, Scene, SceneConfig};
use super::utterance::{generate_utterance, Utterance, UtteranceConfig};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub utterance: UtteranceConfig,
    pub train_size: usize,
    pub eval_size: usize,
    /// A sample is hard when its distractor count exceeds this.
    pub hard_threshold: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            utterance: UtteranceConfig::default(),
            train_size: 2000,
            eval_size: 500,
            hard_threshold: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitTags {
    pub hard: bool,
    pub view_dependent: bool,
}

impl SplitTags {
    pub fn of(utterance: &Utterance, hard_threshold: usize) -> Self {
        Self {
            hard: utterance.distractor_count > hard_threshold,
            view_dependent: utterance.view_dependent,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene: Scene,
    pub utterance: Utterance,
    pub tags: SplitTags,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitStats {
    pub total: usize,
    pub easy: usize,
    pub hard: usize,
    pub view_dep: usize,
    pub view_indep: usize,
}

impl SplitStats {
    pub fn count(samples: &[Sample]) -> Self {
        let mut s = Self::default();
        for t in samples.iter().map(|x| x.tags) {
            s.total += 1;
            if t.hard {
                s.hard += 1;
            } else {
                s.easy += 1;
            }
            if t.view_dependent {
                s.view_dep += 1;
            } else {
                s.view_indep += 1;
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

/// Deterministic per-scene generator: the dataset seed picks the key and the
/// scene id picks the stream, so scenes can be produced independently.
pub fn scene_rng(seed: u64, scene_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene_id);
    rng
}

/// Generates one sample for `scene_id`, redrawing the scene when no
/// unambiguous utterance exists.
pub fn generate_sample(config: &DatasetConfig, seed: u64, scene_id: u64) -> Result<Sample> {
    let mut rng = scene_rng(seed, scene_id);
    for _ in 0..config.scene.max_retries {
        let scene = generate_scene(&mut rng, scene_id, &config.scene)?;
        match generate_utterance(&scene, &mut rng, &config.utterance) {
            Ok(utterance) => {
                let tags = SplitTags::of(&utterance, config.hard_threshold);
                return Ok(Sample { scene, utterance, tags });
            }
            Err(Error::Generation(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation(alloc::format!("scene {scene_id}: no usable scene/utterance pair")))
}

/// Train scenes take ids `0..train_size`, eval scenes the following
/// `eval_size` ids, so the splits never share a scene.
pub fn build_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    config.scene.validate()?;
    let n_train = config.train_size as u64;
    let n_eval = config.eval_size as u64;
    let train = (0..n_train)
        .map(|id| generate_sample(config, seed, id))
        .collect::<Result<Vec<_>>>()?;
    let eval = (n_train..n_train + n_eval)
        .map(|id| generate_sample(config, seed, id))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { train, eval })
}
