//! Layers shared by the encoders and the fusion decoder.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{concat, Var};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// Parameters are created with a deterministic name prefix so checkpoints can
/// address them.
pub(crate) struct Init<'a, R: Rng + ?Sized> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub(crate) fn new<R: Rng + ?Sized>(
        init: &mut Init<'_, R>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        group: ParamGroup,
    ) -> Self {
        let weight = init.store.add_weight(init.rng, format!("{name}.weight"), fan_in, fan_out, group);
        let bias = bias.then(|| init.store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]), group));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let y = x.matmul(p.get(self.weight))?;
        match self.bias {
            Some(b) => y.add_row(p.get(b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub(crate) fn new<R: Rng + ?Sized>(init: &mut Init<'_, R>, name: &str, width: usize, group: ParamGroup) -> Self {
        Self {
            gain: init.store.add(format!("{name}.gain"), Tensor::full(&[width], 1.0), group),
            bias: init.store.add(format!("{name}.bias"), Tensor::zeros(&[width]), group),
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        x.layer_norm(p.get(self.gain), p.get(self.bias), LN_EPS)
    }
}

/// Multi-head scaled dot-product attention without positional terms.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub(crate) fn new<R: Rng + ?Sized>(init: &mut Init<'_, R>, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Argument(format!("width {width} is not divisible by {heads} heads")));
        }
        let g = ParamGroup::Transformer;
        Ok(Self {
            query: Linear::new(init, &format!("{name}.query"), width, width, true, g),
            key: Linear::new(init, &format!("{name}.key"), width, width, true, g),
            value: Linear::new(init, &format!("{name}.value"), width, width, true, g),
            output: Linear::new(init, &format!("{name}.output"), width, width, true, g),
            heads,
        })
    }

    /// `queries [m x d]` attend over `context [k x d]`.
    pub fn forward<'g>(&self, p: &Bound<'g>, queries: Var<'g>, context: Var<'g>) -> Result<Var<'g>> {
        let q = self.query.forward(p, queries)?;
        let k = self.key.forward(p, context)?;
        let v = self.value.forward(p, context)?;
        let width = self.query.fan_out;
        let head_width = width / self.heads;
        let scale = 1.0 / libm::sqrt(head_width as f64);
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let start = h * head_width;
            let qh = q.narrow(1, start, head_width)?;
            let kh = k.narrow(1, start, head_width)?;
            let vh = v.narrow(1, start, head_width)?;
            let att = qh.matmul_nt(kh)?.scale(scale).softmax(1)?;
            outs.push(att.matmul(vh)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { concat(&outs, 1)? };
        self.output.forward(p, merged)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub expand: Linear,
    pub contract: Linear,
}

impl FeedForward {
    pub(crate) fn new<R: Rng + ?Sized>(init: &mut Init<'_, R>, name: &str, width: usize, hidden: usize) -> Self {
        let g = ParamGroup::Transformer;
        Self {
            expand: Linear::new(init, &format!("{name}.expand"), width, hidden, true, g),
            contract: Linear::new(init, &format!("{name}.contract"), hidden, width, true, g),
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, dropout: f64) -> Result<Var<'g>> {
        let h = self.expand.forward(p, x)?.gelu().dropout(dropout)?;
        self.contract.forward(p, h)
    }
}

/// Pre-norm self-attention block.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub(crate) fn new<R: Rng + ?Sized>(
        init: &mut Init<'_, R>,
        name: &str,
        width: usize,
        heads: usize,
        ffn_hidden: usize,
    ) -> Result<Self> {
        let g = ParamGroup::Transformer;
        Ok(Self {
            norm_attn: LayerNorm::new(init, &format!("{name}.norm_attn"), width, g),
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), width, heads)?,
            norm_ffn: LayerNorm::new(init, &format!("{name}.norm_ffn"), width, g),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), width, ffn_hidden),
        })
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, dropout: f64) -> Result<Var<'g>> {
        let h = self.norm_attn.forward(p, x)?;
        let x = x.add(self.attn.forward(p, h, h)?.dropout(dropout)?)?;
        let h = self.norm_ffn.forward(p, x)?;
        x.add(self.ffn.forward(p, h, dropout)?.dropout(dropout)?)
    }
}

/// Pre-norm decoder block: self-attention over the queries, cross-attention
/// into the context, then the feed-forward block.
#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub norm_self: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub norm_cross: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub(crate) fn new<R: Rng + ?Sized>(
        init: &mut Init<'_, R>,
        name: &str,
        width: usize,
        heads: usize,
        ffn_hidden: usize,
    ) -> Result<Self> {
        let g = ParamGroup::Transformer;
        Ok(Self {
            norm_self: LayerNorm::new(init, &format!("{name}.norm_self"), width, g),
            self_attn: MultiHeadAttention::new(init, &format!("{name}.self_attn"), width, heads)?,
            norm_cross: LayerNorm::new(init, &format!("{name}.norm_cross"), width, g),
            cross_attn: MultiHeadAttention::new(init, &format!("{name}.cross_attn"), width, heads)?,
            norm_ffn: LayerNorm::new(init, &format!("{name}.norm_ffn"), width, g),
            ffn: FeedForward::new(init, &format!("{name}.ffn"), width, ffn_hidden),
        })
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>, context: Var<'g>, dropout: f64) -> Result<Var<'g>> {
        let h = self.norm_self.forward(p, x)?;
        let x = x.add(self.self_attn.forward(p, h, h)?.dropout(dropout)?)?;
        let h = self.norm_cross.forward(p, x)?;
        let x = x.add(self.cross_attn.forward(p, h, context)?.dropout(dropout)?)?;
        let h = self.norm_ffn.forward(p, x)?;
        x.add(self.ffn.forward(p, h, dropout)?.dropout(dropout)?)
    }
}

/// Stack of [`EncoderLayer`]s followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub layers: Vec<EncoderLayer>,
    pub norm: LayerNorm,
}

impl TransformerEncoder {
    pub(crate) fn new<R: Rng + ?Sized>(
        init: &mut Init<'_, R>,
        name: &str,
        depth: usize,
        width: usize,
        heads: usize,
        ffn_hidden: usize,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| EncoderLayer::new(init, &format!("{name}.layer{i}"), width, heads, ffn_hidden))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            norm: LayerNorm::new(init, &format!("{name}.norm"), width, ParamGroup::Transformer),
        })
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, mut x: Var<'g>, dropout: f64) -> Result<Var<'g>> {
        for layer in &self.layers {
            x = layer.forward(p, x, dropout)?;
        }
        self.norm.forward(p, x)
    }
}

/// Stack of [`DecoderLayer`]s followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerDecoder {
    pub layers: Vec<DecoderLayer>,
    pub norm: LayerNorm,
}

impl TransformerDecoder {
    pub(crate) fn new<R: Rng + ?Sized>(
        init: &mut Init<'_, R>,
        name: &str,
        depth: usize,
        width: usize,
        heads: usize,
        ffn_hidden: usize,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| DecoderLayer::new(init, &format!("{name}.layer{i}"), width, heads, ffn_hidden))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers,
            norm: LayerNorm::new(init, &format!("{name}.norm"), width, ParamGroup::Transformer),
        })
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, mut x: Var<'g>, context: Var<'g>, dropout: f64) -> Result<Var<'g>> {
        for layer in &self.layers {
            x = layer.forward(p, x, context, dropout)?;
        }
        self.norm.forward(p, x)
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub(crate) fn new<R: Rng + ?Sized>(
        init: &mut Init<'_, R>,
        name: &str,
        dims: (usize, usize, usize),
        group: ParamGroup,
    ) -> Self {
        Self {
            first: Linear::new(init, &format!("{name}.fc1"), dims.0, dims.1, true, group),
            second: Linear::new(init, &format!("{name}.fc2"), dims.1, dims.2, true, group),
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Result<Var<'g>> {
        let h = self.first.forward(p, x)?.relu();
        self.second.forward(p, h)
    }
}
