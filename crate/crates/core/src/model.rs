//! The grounding model: shared object features, per-view fusion with the
//! utterance, view aggregation, and the prediction heads.

use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::ViewSet;
use crate::graph::{concat, stack, Var};
use crate::language::{LanguageEncoder, LanguageFeatures, TextClassifier, Vocabulary};
use crate::nn::{Init, Linear, Mlp2, TransformerDecoder, TransformerEncoder};
use crate::object_encoder::{box_rows, box_size, encode_scene, point_features, BoxSizeKind, PointSetEncoder, PositionalEncoder};
use crate::params::{Bound, ParamGroup, ParamStore};
use crate::synth::{Scene, CATEGORIES};

/// Reduction over the per-view feature blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AggregationFn {
    #[default]
    Avg,
    Max,
    /// Elementwise mean plus elementwise max.
    AvgMax,
    /// Mean and max concatenated, then projected back to the model width.
    AvgMaxConcat,
}

/// Where in the pipeline the views are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum AggregationStage {
    /// Merge the positional encodings, then a single fusion pass.
    AfterPe,
    /// Merge object features after a small self-attention encoder.
    AfterObject,
    /// Merge the fused per-view features.
    #[default]
    AfterFusion,
}

impl AggregationFn {
    pub const ALL: [Self; 4] = [Self::Avg, Self::Max, Self::AvgMax, Self::AvgMaxConcat];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Avg => "avg",
            Self::Max => "max",
            Self::AvgMax => "avg-max",
            Self::AvgMaxConcat => "avg-max-concat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl AggregationStage {
    pub const ALL: [Self; 3] = [Self::AfterPe, Self::AfterObject, Self::AfterFusion];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AfterPe => "after-pe",
            Self::AfterObject => "after-object",
            Self::AfterFusion => "after-fusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub views: usize,
    pub width: usize,
    pub heads: usize,
    pub decoder_layers: usize,
    pub language_layers: usize,
    pub object_encoder_layers: usize,
    pub ffn_multiplier: usize,
    pub dropout: f64,
    pub point_hidden: usize,
    pub point_pooled: usize,
    pub aggregation: AggregationFn,
    pub stage: AggregationStage,
    /// Weight of the two auxiliary classification losses.
    pub alpha: f64,
    pub rotation_augmentation: bool,
    pub box_size: BoxSizeKind,
    pub max_tokens: usize,
    pub num_categories: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            views: 4,
            width: 64,
            heads: 4,
            decoder_layers: 4,
            language_layers: 3,
            object_encoder_layers: 2,
            ffn_multiplier: 4,
            dropout: 0.1,
            point_hidden: 64,
            point_pooled: 64,
            aggregation: AggregationFn::Avg,
            stage: AggregationStage::AfterFusion,
            alpha: 0.5,
            rotation_augmentation: false,
            box_size: BoxSizeKind::Diagonal,
            max_tokens: 24,
            num_categories: 20,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Argument(msg));
        if self.views == 0 {
            return fail("view count must be at least 1".into());
        }
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return fail(alloc::format!("width {} must be a positive multiple of heads {}", self.width, self.heads));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return fail(alloc::format!("alpha {} must be finite and non-negative", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(alloc::format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.num_categories == 0 || self.num_categories > CATEGORIES.len() {
            return fail(alloc::format!("num_categories must be in 1..={}", CATEGORIES.len()));
        }
        if self.max_tokens < 2 || self.point_hidden == 0 || self.point_pooled == 0 || self.ffn_multiplier == 0 {
            return fail("layer sizes must be positive".into());
        }
        Ok(())
    }

    pub fn view_set(&self) -> Result<ViewSet> {
        ViewSet::equal_angle(self.views)
    }
}

/// Merges per-view `[M x d]` blocks. A single view is returned unchanged for
/// every reduction. The concatenating variant yields `[M x 2d]`, which the
/// model projects back to `d`.
pub fn aggregate<'g>(views: &[Var<'g>], function: AggregationFn) -> Result<Var<'g>> {
    match views {
        [] => Err(Error::Argument("no views to aggregate".into())),
        [single] => Ok(*single),
        _ => {
            let stacked = stack(views)?;
            match function {
                AggregationFn::Avg => stacked.mean_axis(0),
                AggregationFn::Max => stacked.max_axis(0),
                AggregationFn::AvgMax => stacked.mean_axis(0)?.add(stacked.max_axis(0)?),
                AggregationFn::AvgMaxConcat => concat(&[stacked.mean_axis(0)?, stacked.max_axis(0)?], 1),
            }
        }
    }
}

/// `p = x Cᵀ`: object features `[M x d]` against category text features `[k2 x d]`.
pub fn object_class_logits<'g>(objects: Var<'g>, categories: Var<'g>) -> Result<Var<'g>> {
    objects.matmul_nt(categories)
}

#[derive(Debug, Clone, Copy)]
pub struct GroundingOutput<'g> {
    /// `[M]`
    pub scores: Var<'g>,
    /// `[M x k2]`
    pub object_logits: Var<'g>,
    /// `[k2]`
    pub text_logits: Var<'g>,
    /// `[M x d]`
    pub aggregated: Var<'g>,
    /// `[M x d]` view-shared point features.
    pub shared: Var<'g>,
    pub point_encoder_calls: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct Losses<'g> {
    pub reference: Var<'g>,
    pub text: Var<'g>,
    pub object: Var<'g>,
    pub total: Var<'g>,
}

/// `reference + alpha * (text + object)`
pub fn combine_losses(reference: f64, text: f64, object: f64, alpha: f64) -> f64 {
    reference + alpha * (text + object)
}

/// Grounding, utterance-category and per-object category cross-entropies.
pub fn compute_losses<'g>(
    output: &GroundingOutput<'g>,
    target_index: usize,
    target_category: usize,
    object_categories: &[usize],
    alpha: f64,
) -> Result<Losses<'g>> {
    let reference = output.scores.cross_entropy(target_index)?;
    let text = output.text_logits.cross_entropy(target_category)?;
    let shape = output.object_logits.shape();
    if object_categories.len() != shape[0] {
        return Err(Error::Argument(alloc::format!(
            "{} object labels for {} objects",
            object_categories.len(),
            shape[0]
        )));
    }
    let mut object = None;
    for (i, &c) in object_categories.iter().enumerate() {
        let row = output.object_logits.narrow(0, i, 1)?.reshape(&[shape[1]])?;
        let ce = row.cross_entropy(c)?;
        object = Some(match object {
            None => ce,
            Some(acc) => ce.add(acc)?,
        });
    }
    let object = object
        .ok_or_else(|| Error::Argument("no objects".into()))?
        .scale(1.0 / object_categories.len() as f64);
    let total = reference.add(text.add(object)?.scale(alpha))?;
    Ok(Losses {
        reference,
        text,
        object,
        total,
    })
}

/// Category label texts used for the object classification targets.
pub fn category_labels(num_categories: usize) -> &'static [&'static str] {
    &CATEGORIES[..num_categories.min(CATEGORIES.len())]
}

/// Parameters and layer layout of the full model.
#[derive(Debug, Clone)]
pub struct MvtModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub points: PointSetEncoder,
    pub position: PositionalEncoder,
    pub object_encoder: Option<TransformerEncoder>,
    pub language: LanguageEncoder,
    pub text_classifier: TextClassifier,
    pub decoder: TransformerDecoder,
    pub head: Mlp2,
    pub aggregate_projection: Option<Linear>,
}

impl MvtModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
        };
        let d = config.width;
        let ffn = d * config.ffn_multiplier;
        let points = PointSetEncoder::new(&mut init, config.point_hidden, config.point_pooled, d);
        let position = PositionalEncoder::new(&mut init, d);
        let object_encoder = match config.stage {
            AggregationStage::AfterObject => Some(TransformerEncoder::new(
                &mut init,
                "object_encoder",
                config.object_encoder_layers,
                d,
                config.heads,
                ffn,
            )?),
            _ => None,
        };
        let language = LanguageEncoder::new(
            &mut init,
            vocab.len(),
            config.max_tokens,
            d,
            config.language_layers,
            config.heads,
            ffn,
        )?;
        let text_classifier = TextClassifier::new(&mut init, d, config.num_categories);
        let decoder = TransformerDecoder::new(&mut init, "decoder", config.decoder_layers, d, config.heads, ffn)?;
        let head = Mlp2::new(&mut init, "grounding_head", (d, d, 1), ParamGroup::Base);
        let aggregate_projection = (config.aggregation == AggregationFn::AvgMaxConcat)
            .then(|| Linear::new(&mut init, "aggregate_projection", 2 * d, d, true, ParamGroup::Base));
        Ok(Self {
            config,
            vocab,
            store,
            points,
            position,
            object_encoder,
            language,
            text_classifier,
            decoder,
            head,
            aggregate_projection,
        })
    }

    /// `[k2 x d]` category text features, recomputed through the trainable
    /// language encoder.
    pub fn category_features<'g>(&self, p: &Bound<'g>) -> Result<Var<'g>> {
        self.language
            .encode_categories(p, &self.vocab, category_labels(self.config.num_categories), self.config.dropout)
    }

    pub fn tokenize<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        self.vocab.tokenize(words)
    }

    /// `F = Decoder(O, L)` with the word features as keys and values.
    pub fn fuse<'g>(&self, p: &Bound<'g>, objects: Var<'g>, language: &LanguageFeatures<'g>) -> Result<Var<'g>> {
        self.decoder.forward(p, objects, language.words, self.config.dropout)
    }

    /// `[M x d]` to `[M]` logits.
    pub fn grounding_scores<'g>(&self, p: &Bound<'g>, g: Var<'g>) -> Result<Var<'g>> {
        let out = self.head.forward(p, g)?;
        let m = out.shape()[0];
        out.reshape(&[m])
    }

    fn merge<'g>(&self, p: &Bound<'g>, views: &[Var<'g>]) -> Result<Var<'g>> {
        let merged = aggregate(views, self.config.aggregation)?;
        match &self.aggregate_projection {
            Some(linear) if views.len() > 1 => linear.forward(p, merged),
            _ => Ok(merged),
        }
    }

    /// Forward pass over the configured view set.
    pub fn forward<'g>(&self, p: &Bound<'g>, scene: &Scene, tokens: &[usize], categories: Var<'g>) -> Result<GroundingOutput<'g>> {
        self.forward_views(p, scene, tokens, categories, &self.config.view_set()?)
    }

    /// Forward pass over an explicit view set, e.g. fewer views at test time.
    pub fn forward_views<'g>(
        &self,
        p: &Bound<'g>,
        scene: &Scene,
        tokens: &[usize],
        categories: Var<'g>,
        views: &ViewSet,
    ) -> Result<GroundingOutput<'g>> {
        let language = self.language.encode(p, tokens, self.config.dropout)?;
        let objects = encode_scene(&self.points, &self.position, p, scene, views, self.config.box_size)?;
        let aggregated = match self.config.stage {
            AggregationStage::AfterFusion => {
                let fused = objects
                    .per_view
                    .iter()
                    .map(|&o| self.fuse(p, o, &language))
                    .collect::<Result<Vec<_>>>()?;
                self.merge(p, &fused)?
            }
            AggregationStage::AfterPe => {
                let pe = self.merge(p, &objects.positional)?;
                self.fuse(p, objects.shared.add(pe)?, &language)?
            }
            AggregationStage::AfterObject => {
                let encoder = self
                    .object_encoder
                    .as_ref()
                    .ok_or_else(|| Error::Argument("model built without an object encoder".into()))?;
                let encoded = objects
                    .per_view
                    .iter()
                    .map(|&o| encoder.forward(p, o, self.config.dropout))
                    .collect::<Result<Vec<_>>>()?;
                let merged = self.merge(p, &encoded)?;
                self.fuse(p, merged, &language)?
            }
        };
        Ok(GroundingOutput {
            scores: self.grounding_scores(p, aggregated)?,
            object_logits: object_class_logits(objects.shared, categories)?,
            text_logits: self.text_classifier.logits(p, language.sentence)?,
            aggregated,
            shared: objects.shared,
            point_encoder_calls: objects.point_encoder_calls,
        })
    }

    /// Single-view pipeline with no rotation and no aggregation step, used as
    /// the reference for the one-view configuration.
    pub fn forward_single_view<'g>(
        &self,
        p: &Bound<'g>,
        scene: &Scene,
        tokens: &[usize],
        categories: Var<'g>,
    ) -> Result<GroundingOutput<'g>> {
        let graph = p.graph();
        let language = self.language.encode(p, tokens, self.config.dropout)?;
        let rows = scene
            .objects
            .iter()
            .map(|o| self.points.encode_points(p, graph.constant(point_features(o)?)))
            .collect::<Result<Vec<_>>>()?;
        let shared = concat(&rows, 0)?;
        let sizes = scene
            .objects
            .iter()
            .map(|o| box_size(o.extent, self.config.box_size))
            .collect::<Result<Vec<_>>>()?;
        let pe = self.position.encode(p, graph.constant(box_rows(&scene.centers(), &sizes)))?;
        let objects = shared.add(pe)?;
        let fused = match (&self.config.stage, &self.object_encoder) {
            (AggregationStage::AfterObject, Some(enc)) => {
                let encoded = enc.forward(p, objects, self.config.dropout)?;
                self.fuse(p, encoded, &language)?
            }
            _ => self.fuse(p, objects, &language)?,
        };
        Ok(GroundingOutput {
            scores: self.grounding_scores(p, fused)?,
            object_logits: object_class_logits(shared, categories)?,
            text_logits: self.text_classifier.logits(p, language.sentence)?,
            aggregated: fused,
            shared,
            point_encoder_calls: rows.len(),
        })
    }

    /// Eval-mode scores for one sample, with a fresh tape.
    pub fn predict_scores<S: AsRef<str>>(&self, scene: &Scene, words: &[S], views: &ViewSet) -> Result<Vec<f64>> {
        let graph = crate::graph::Graph::eval();
        let p = self.store.bind_frozen(&graph);
        let categories = self.category_features(&p)?;
        let tokens = self.tokenize(words)?;
        let out = self.forward_views(&p, scene, &tokens, categories, views)?;
        Ok(out.scores.value().into_data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tensor::Tensor;

    #[test]
    fn loss_composition_substitution() {
        assert_eq!(combine_losses(1.0, 0.4, 0.6, 0.5), 1.5);
        assert_eq!(combine_losses(0.8, 0.4, 0.6, 0.0), 0.8);
    }

    #[test]
    fn aggregation_single_view_is_identity() {
        let g = Graph::eval();
        let v = g.constant(Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]).unwrap());
        for f in [AggregationFn::Avg, AggregationFn::Max, AggregationFn::AvgMax] {
            let out = aggregate(&[v], f).unwrap();
            assert_eq!(out.value(), v.value());
        }
        assert!(aggregate(&[], AggregationFn::Avg).is_err());
    }

    #[test]
    fn aggregation_of_identical_views() {
        let g = Graph::eval();
        let v = g.constant(Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]).unwrap());
        let avg = aggregate(&[v, v, v], AggregationFn::Avg).unwrap();
        let max = aggregate(&[v, v, v], AggregationFn::Max).unwrap();
        assert_eq!(avg.value(), v.value());
        assert_eq!(max.value(), v.value());
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.validate().unwrap();
        c.views = 0;
        assert!(c.validate().is_err());
        c.views = 2;
        c.heads = 5;
        assert!(c.validate().is_err());
        c.heads = 4;
        c.alpha = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn names_parse_back() {
        for f in AggregationFn::ALL {
            assert_eq!(AggregationFn::parse(f.as_str()), Some(f));
        }
        for s in AggregationStage::ALL {
            assert_eq!(AggregationStage::parse(s.as_str()), Some(s));
        }
    }
}
