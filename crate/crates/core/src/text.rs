//! Pluggable text conditioning.
//!
//! The toy encoder averages learned word embeddings. Words seen in the
//! training captions get their own rows; anything else falls into one of a
//! fixed number of hashed buckets. Captions can also arrive pre-encoded as
//! raw vectors, and the unconditional branch uses a dedicated learned vector.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Embedding, ParamId, ParamStore};
use crate::rng::{normal_vec, DetRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum TextCondition {
    Caption(String),
    /// A caption encoded offline; must have the model's text width.
    Vector(Vec<f64>),
    Null,
}

impl TextCondition {
    pub fn caption(s: &str) -> Self {
        TextCondition::Caption(s.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoding {
    pub vector: Vec<f64>,
    pub null_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextEncoderConfig {
    pub width: usize,
    pub hash_buckets: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            hash_buckets: 64,
        }
    }
}

/// Lowercased alphanumeric words.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct ToyTextEncoder {
    pub config: TextEncoderConfig,
    vocab: Vec<String>,
    table: Embedding,
    null: ParamId,
}

impl ToyTextEncoder {
    /// Builds the vocabulary from `captions` and registers its parameters.
    pub fn new<'a>(
        store: &mut ParamStore,
        config: TextEncoderConfig,
        captions: impl IntoIterator<Item = &'a str>,
        rng: &mut DetRng,
    ) -> Self {
        let mut vocab: Vec<String> = captions.into_iter().flat_map(tokenize).collect();
        vocab.sort_unstable();
        vocab.dedup();
        Self::with_vocab(store, config, vocab, rng)
    }

    /// Registers parameters for a sorted, deduplicated vocabulary.
    pub fn with_vocab(store: &mut ParamStore, config: TextEncoderConfig, vocab: Vec<String>, rng: &mut DetRng) -> Self {
        let rows = vocab.len() + config.hash_buckets.max(1);
        let table = Embedding::new(store, "text.embed", rows, config.width, 1.0, rng);
        let null = store.add(
            "text.null",
            Tensor::from_vec(1, config.width, normal_vec(rng, config.width)).expect("shape"),
        );
        Self {
            config,
            vocab,
            table,
            null,
        }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn token_ids(&self, caption: &str) -> Vec<usize> {
        let buckets = self.config.hash_buckets.max(1) as u64;
        tokenize(caption)
            .iter()
            .map(|w| match self.vocab.binary_search(w) {
                Ok(i) => i,
                Err(_) => self.vocab.len() + (fnv1a(w) % buckets) as usize,
            })
            .collect()
    }

    /// `1 x width` encoding. An empty caption is treated as the null condition.
    pub fn encode_graph(&self, g: &mut Graph, cond: &TextCondition) -> Result<Var> {
        match cond {
            TextCondition::Caption(s) => {
                let ids = self.token_ids(s);
                if ids.is_empty() {
                    return Ok(g.param(self.null));
                }
                let rows = self.table.lookup(g, &ids);
                Ok(g.mean_rows(rows))
            }
            TextCondition::Vector(v) => {
                if v.len() != self.width() {
                    return Err(Error::DimensionMismatch {
                        expected: self.width(),
                        found: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite("text vector"));
                }
                Ok(g.constant(Tensor::row_vector(v)))
            }
            TextCondition::Null => Ok(g.param(self.null)),
        }
    }

    pub fn encode(&self, params: &ParamStore, cond: &TextCondition) -> Result<TextEncoding> {
        let mut g = Graph::with_params(params);
        let v = self.encode_graph(&mut g, cond)?;
        let null_flag = match cond {
            TextCondition::Null => true,
            TextCondition::Caption(s) => tokenize(s).is_empty(),
            TextCondition::Vector(_) => false,
        };
        Ok(TextEncoding {
            vector: g.value(v).data().into(),
            null_flag,
        })
    }
}
