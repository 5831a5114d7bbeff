//! Synthetic referring-expression scenes.
//!
//! Scenes are sets of box-shaped objects standing on the floor of a square
//! room centered at the world origin. Each object carries a point cloud
//! sampled inside its box, colored by a per-category signature. Utterances
//! follow the `target - relation - anchor` template; directional relations
//! are resolved in a speaker view that is never written into the text.

mod dataset;
mod relation;
mod scene;
mod utterance;

pub use dataset::{build_dataset, generate_sample, scene_rng, Dataset, DatasetConfig, Sample, SplitStats, SplitTags};
pub use relation::{relation_oracle, Relation, RelationQuery, Resolution};
pub use scene::{
    category_color, generate_scene, rotate_scene, ObjectInstance, Scene, SceneConfig, CATEGORIES,
    MIN_EXTENT,
};
pub use utterance::{generate_utterance, template_tokens, Utterance, UtteranceConfig, TEMPLATE_WORDS};
