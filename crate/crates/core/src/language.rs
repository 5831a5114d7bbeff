//! Template vocabulary and the trainable sentence encoder.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{Init, Mlp2, TransformerEncoder};
use crate::params::{Bound, ParamGroup, ParamId};
use crate::synth::{CATEGORIES, TEMPLATE_WORDS};
use crate::tensor::Tensor;

pub const SENTENCE_TOKEN: &str = "<s>";
pub const UNKNOWN_TOKEN: &str = "<unk>";
pub const SENTENCE_INDEX: usize = 0;
pub const UNKNOWN_INDEX: usize = 1;

/// Bijective token/index map; indices 0 and 1 are the sentence marker and
/// the unknown token.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<String>", into = "Vec<String>"))]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens: Vec<String> = alloc::vec![SENTENCE_TOKEN.into(), UNKNOWN_TOKEN.into()];
        let mut index = BTreeMap::new();
        index.insert(SENTENCE_TOKEN.to_string(), SENTENCE_INDEX);
        index.insert(UNKNOWN_TOKEN.to_string(), UNKNOWN_INDEX);
        for w in words {
            if index.contains_key(&w) {
                continue;
            }
            index.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        Ok(Self { tokens, index })
    }

    /// Template words followed by the category nouns.
    pub fn template(num_categories: usize) -> Self {
        let words = TEMPLATE_WORDS
            .iter()
            .chain(CATEGORIES.iter().take(num_categories))
            .map(|s| s.to_string());
        Self::from_tokens(words).expect("template vocabulary")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNKNOWN_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Sentence marker followed by one index per (lowercased) token.
    pub fn tokenize<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        if words.is_empty() {
            return Err(Error::Argument("cannot tokenize an empty utterance".into()));
        }
        let mut out = Vec::with_capacity(words.len() + 1);
        out.push(SENTENCE_INDEX);
        out.extend(words.iter().map(|w| self.index_of(&w.as_ref().to_lowercase())));
        Ok(out)
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != SENTENCE_TOKEN || tokens[1] != UNKNOWN_TOKEN {
            return Err(Error::Argument("vocabulary must start with <s>, <unk>".into()));
        }
        let n = tokens.len();
        let v = Self::from_tokens(tokens.into_iter().skip(2))?;
        if v.len() != n {
            return Err(Error::Argument("vocabulary has duplicate tokens".into()));
        }
        Ok(v)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Sentence-level feature and per-word features of one utterance.
#[derive(Debug, Clone, Copy)]
pub struct LanguageFeatures<'g> {
    /// `[1 x d]`
    pub sentence: Var<'g>,
    /// `[k1 x d]`
    pub words: Var<'g>,
}

/// Token plus learned position embeddings into a pre-norm transformer encoder.
#[derive(Debug, Clone)]
pub struct LanguageEncoder {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub encoder: TransformerEncoder,
    pub max_tokens: usize,
}

impl LanguageEncoder {
    pub(crate) fn new<R: Rng + ?Sized>(
        init: &mut Init<'_, R>,
        vocab_size: usize,
        max_tokens: usize,
        width: usize,
        depth: usize,
        heads: usize,
        ffn_hidden: usize,
    ) -> Result<Self> {
        let embed = |init: &mut Init<'_, R>, name: &str, rows: usize| {
            let data = (0..rows * width).map(|_| init.rng.random_range(-0.1..0.1)).collect();
            let t = Tensor::new(alloc::vec![rows, width], data).expect("embedding shape");
            init.store.add(name, t, ParamGroup::Transformer)
        };
        let token_embedding = embed(init, "language.token_embedding", vocab_size);
        let position_embedding = embed(init, "language.position_embedding", max_tokens);
        let encoder = TransformerEncoder::new(init, "language.encoder", depth, width, heads, ffn_hidden)?;
        Ok(Self {
            token_embedding,
            position_embedding,
            encoder,
            max_tokens,
        })
    }

    /// Encodes a tokenized utterance (sentence marker first). Row 0 of the
    /// encoder output is the sentence feature, the rest are word features.
    pub fn encode<'g>(&self, p: &Bound<'g>, indices: &[usize], dropout: f64) -> Result<LanguageFeatures<'g>> {
        let n = indices.len();
        if n < 2 {
            return Err(Error::Argument("need the sentence marker and at least one word".into()));
        }
        if n > self.max_tokens {
            return Err(Error::Argument(alloc::format!(
                "{n} tokens exceed the maximum of {}",
                self.max_tokens
            )));
        }
        let positions: Vec<usize> = (0..n).collect();
        let tokens = p.get(self.token_embedding).embedding(indices)?;
        let pos = p.get(self.position_embedding).embedding(&positions)?;
        let h = tokens.add(pos)?.dropout(dropout)?;
        let out = self.encoder.forward(p, h, dropout)?;
        Ok(LanguageFeatures {
            sentence: out.narrow(0, 0, 1)?,
            words: out.narrow(0, 1, n - 1)?,
        })
    }

    /// `[k2 x d]` sentence features of the category label texts.
    pub fn encode_categories<'g, S: AsRef<str>>(
        &self,
        p: &Bound<'g>,
        vocab: &Vocabulary,
        labels: &[S],
        dropout: f64,
    ) -> Result<Var<'g>> {
        if labels.is_empty() {
            return Err(Error::Argument("no category labels".into()));
        }
        let rows = labels
            .iter()
            .map(|label| {
                let words: Vec<&str> = label.as_ref().split_whitespace().collect();
                let idx = vocab.tokenize(&words)?;
                Ok(self.encode(p, &idx, dropout)?.sentence)
            })
            .collect::<Result<Vec<_>>>()?;
        crate::graph::concat(&rows, 0)
    }
}

/// Two fully connected layers on the sentence feature predicting the
/// category the utterance describes.
#[derive(Debug, Clone)]
pub struct TextClassifier {
    pub mlp: Mlp2,
}

impl TextClassifier {
    pub(crate) fn new<R: Rng + ?Sized>(init: &mut Init<'_, R>, width: usize, classes: usize) -> Self {
        Self {
            mlp: Mlp2::new(init, "text_classifier", (width, width, classes), ParamGroup::Base),
        }
    }

    /// `[1 x d]` sentence feature to `[k2]` logits.
    pub fn logits<'g>(&self, p: &Bound<'g>, sentence: Var<'g>) -> Result<Var<'g>> {
        let out = self.mlp.forward(p, sentence)?;
        let k = out.shape()[1];
        out.reshape(&[k])
    }
}
