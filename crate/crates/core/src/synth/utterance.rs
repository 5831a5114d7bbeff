use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_8;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::view_angles;

use super::relation::{relation_oracle, Relation, RelationQuery, Resolution};
use super::scene::{Scene, CATEGORIES};

/// Every non-category word the templates can emit.
pub const TEMPLATE_WORDS: [&str; 16] = [
    "the", "that", "is", "left", "of", "right", "in", "front", "behind", "nearest", "to",
    "farthest", "from", "closest", "center", "room",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub relation: Relation,
    pub anchor_index: Option<usize>,
    pub view_dependent: bool,
    /// Non-target objects sharing the target's category.
    pub distractor_count: usize,
    /// View under which the relation was resolved. Not encoded in `tokens`.
    pub speaker_angle: f64,
}

impl Utterance {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct UtteranceConfig {
    /// Minimum best-vs-runner-up score gap, meters.
    pub ambiguity_margin: f64,
    /// Probability of drawing a directional relation.
    pub view_dependent_fraction: f64,
    /// Half-width of the uniform jitter added to the speaker's base view.
    pub speaker_jitter: f64,
    pub max_attempts: usize,
}

impl Default for UtteranceConfig {
    fn default() -> Self {
        Self {
            ambiguity_margin: 0.15,
            view_dependent_fraction: 0.5,
            speaker_jitter: FRAC_PI_8,
            max_attempts: 64,
        }
    }
}

/// `the <target> that is <relation words> [the <anchor>]`
pub fn template_tokens(target_category: usize, relation: Relation, anchor_category: Option<usize>) -> Vec<String> {
    let mut t: Vec<String> = ["the", CATEGORIES[target_category], "that", "is"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    t.extend(relation.words().iter().map(|s| s.to_string()));
    if let Some(a) = anchor_category {
        t.push("the".into());
        t.push(CATEGORIES[a].into());
    }
    t
}

/// Draws a relation, anchor, target category, and speaker view until the
/// relation oracle finds a unique target. Anchors are objects whose category
/// occurs once in the scene, so `the <anchor>` is itself unambiguous.
pub fn generate_utterance<R: Rng + ?Sized>(scene: &Scene, rng: &mut R, config: &UtteranceConfig) -> Result<Utterance> {
    let base_views = view_angles(4)?;
    let unique_anchors: Vec<usize> = (0..scene.len())
        .filter(|&i| scene.category_count(scene.objects[i].category) == 1)
        .collect();
    for _ in 0..config.max_attempts {
        let relation = if rng.random::<f64>() < config.view_dependent_fraction {
            Relation::VIEW_DEPENDENT[rng.random_range(0..4)]
        } else {
            Relation::VIEW_INDEPENDENT[rng.random_range(0..3)]
        };
        let base = base_views.angles()[rng.random_range(0..4)];
        let jitter = if config.speaker_jitter > 0.0 {
            rng.random_range(-config.speaker_jitter..config.speaker_jitter)
        } else {
            0.0
        };
        let speaker_angle = base + jitter;
        let anchor = if relation.needs_anchor() {
            if unique_anchors.is_empty() {
                continue;
            }
            Some(unique_anchors[rng.random_range(0..unique_anchors.len())])
        } else {
            None
        };
        let pick = rng.random_range(0..scene.len());
        if Some(pick) == anchor {
            continue;
        }
        let category = scene.objects[pick].category;
        let query = RelationQuery {
            relation,
            anchor,
            category: Some(category),
            speaker_angle,
            margin: config.ambiguity_margin,
        };
        if let Resolution::Unique(target) = relation_oracle(scene, &query)? {
            return Ok(Utterance {
                tokens: template_tokens(category, relation, anchor.map(|a| scene.objects[a].category)),
                target_index: target,
                relation,
                anchor_index: anchor,
                view_dependent: relation.is_view_dependent(),
                distractor_count: scene.category_count(category) - 1,
                speaker_angle,
            });
        }
    }
    Err(Error::Generation(alloc::format!(
        "no unambiguous relation in scene {} after {} attempts",
        scene.id,
        config.max_attempts
    )))
}
