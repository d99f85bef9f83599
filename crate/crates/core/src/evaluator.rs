//! Toy text-motion evaluator.
//!
//! A small temporal-conv encoder with attention pooling embeds motions, and
//! a word-embedding encoder with an MLP embeds captions, both into an
//! `f`-dimensional space. Outputs are unit-normalized and scaled by `sqrt(f)`
//! so Euclidean distances are comparable across runs. Training uses a
//! symmetric contrastive loss in which other items sharing the same caption
//! are not counted as negatives.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::motion::{normalize, MotionSequence, NormStats};
use crate::nn::{Conv1d, Linear, ParamStore};
use crate::rng::{index, stream, Stream};
use crate::tensor::Tensor;
use crate::text::{TextCondition, TextEncoderConfig, ToyTextEncoder};
use crate::training::{clip_grad_norm, Adam, LrSchedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluatorConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub text: TextEncoderConfig,
    pub temperature: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub seed: u64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            feature_dim: 64,
            hidden: 64,
            text: TextEncoderConfig::default(),
            temperature: 0.1,
            iterations: 1500,
            batch_size: 64,
            lr: LrSchedule {
                base: 1e-3,
                warmup_iters: 50,
                decay_iter: Some(1200),
                decay_factor: 0.1,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluatorModel {
    pub config: EvaluatorConfig,
    pub params: ParamStore,
    pub stats: NormStats,
    conv1: Conv1d,
    conv2: Conv1d,
    conv3: Conv1d,
    attn: Linear,
    m_out: Linear,
    text: ToyTextEncoder,
    t_fc1: Linear,
    t_fc2: Linear,
}

/// Minimum clip length the motion encoder accepts.
pub const MIN_EVAL_FRAMES: usize = 4;

impl EvaluatorModel {
    pub fn new(config: EvaluatorConfig, vocab: Vec<String>, stats: NormStats, seed: u64) -> Result<Self> {
        if config.feature_dim == 0 || config.hidden == 0 || config.temperature <= 0.0 {
            return Err(Error::InvalidConfig("evaluator widths and temperature must be positive".into()));
        }
        let mut rng = stream(seed, Stream::Evaluator, 0, 0);
        let mut p = ParamStore::default();
        let (d, h, f) = (stats.d(), config.hidden, config.feature_dim);
        let conv1 = Conv1d::new(&mut p, "eval.conv1", d, h, 3, 1, 1, &mut rng);
        let conv2 = Conv1d::new(&mut p, "eval.conv2", h, h, 4, 2, 1, &mut rng);
        let conv3 = Conv1d::new(&mut p, "eval.conv3", h, h, 3, 1, 1, &mut rng);
        let attn = Linear::new(&mut p, "eval.attn", h, 1, &mut rng);
        let m_out = Linear::new(&mut p, "eval.motion_out", h, f, &mut rng);
        let text = ToyTextEncoder::with_vocab(&mut p, config.text, vocab, &mut rng);
        let t_fc1 = Linear::new(&mut p, "eval.text_fc1", config.text.width, h, &mut rng);
        let t_fc2 = Linear::new(&mut p, "eval.text_fc2", h, f, &mut rng);
        Ok(Self {
            config,
            params: p,
            stats,
            conv1,
            conv2,
            conv3,
            attn,
            m_out,
            text,
            t_fc1,
            t_fc2,
        })
    }

    fn scale_features(&self, g: &mut Graph, x: Var) -> Var {
        let unit = g.l2_normalize_rows(x);
        g.scale(unit, libm::sqrt(self.config.feature_dim as f64))
    }

    /// Features of normalized clips, one row per clip in input order.
    pub fn motion_graph(&self, g: &mut Graph, clips: &[&Tensor]) -> Result<Var> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, c) in clips.iter().enumerate() {
            if c.rows() < MIN_EVAL_FRAMES {
                return Err(Error::SequenceTooShort {
                    frames: c.rows(),
                    factor: MIN_EVAL_FRAMES,
                });
            }
            if c.cols() != self.stats.d() {
                return Err(Error::DimensionMismatch {
                    expected: self.stats.d(),
                    found: c.cols(),
                });
            }
            groups.entry(c.rows()).or_default().push(k);
        }
        let mut pooled = Vec::with_capacity(clips.len());
        let mut order = Vec::with_capacity(clips.len());
        for (&len, members) in &groups {
            let parts: Vec<&Tensor> = members.iter().map(|&k| clips[k]).collect();
            let b = members.len();
            let x = g.constant(Tensor::concat_rows(&parts)?);
            let (h, l1) = self.conv1.forward(g, x, b, len);
            let h = g.silu(h);
            let (h, l2) = self.conv2.forward(g, h, b, l1);
            let h = g.silu(h);
            let (h, _) = self.conv3.forward(g, h, b, l2);
            let h = g.silu(h);
            let scores = self.attn.forward(g, h);
            for (i, &k) in members.iter().enumerate() {
                let s = g.slice_rows(scores, i * l2, (i + 1) * l2);
                let s = g.transpose(s);
                let w = g.softmax_rows(s);
                let hi = g.slice_rows(h, i * l2, (i + 1) * l2);
                pooled.push(g.matmul(w, hi));
                order.push(k);
            }
        }
        let stacked = g.concat_rows(&pooled);
        let mut inverse = alloc::vec![0; order.len()];
        for (pos, &k) in order.iter().enumerate() {
            inverse[k] = pos;
        }
        let stacked = g.select_rows(stacked, &inverse);
        let out = self.m_out.forward(g, stacked);
        Ok(self.scale_features(g, out))
    }

    pub fn text_graph(&self, g: &mut Graph, captions: &[&str]) -> Result<Var> {
        let mut rows = Vec::with_capacity(captions.len());
        for c in captions {
            rows.push(self.text.encode_graph(g, &TextCondition::caption(c))?);
        }
        let x = g.concat_rows(&rows);
        let h = self.t_fc1.forward(g, x);
        let h = g.silu(h);
        let out = self.t_fc2.forward(g, h);
        Ok(self.scale_features(g, out))
    }

    /// Features of un-normalized motions.
    pub fn motion_features(&self, motions: &[MotionSequence]) -> Result<Tensor> {
        let normed = motions
            .iter()
            .map(|m| Ok(normalize(m, &self.stats)?.frames))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = normed.iter().collect();
        let mut g = Graph::with_params(&self.params);
        let v = self.motion_graph(&mut g, &refs)?;
        Ok(g.value(v).clone())
    }

    pub fn text_features(&self, captions: &[String]) -> Result<Tensor> {
        let refs: Vec<&str> = captions.iter().map(String::as_str).collect();
        let mut g = Graph::with_params(&self.params);
        let v = self.text_graph(&mut g, &refs)?;
        Ok(g.value(v).clone())
    }

    /// Symmetric contrastive loss for a batch of normalized clips and captions.
    pub fn contrastive_graph(&self, g: &mut Graph, clips: &[&Tensor], captions: &[&str]) -> Result<Var> {
        let b = clips.len();
        if b != captions.len() || b == 0 {
            return Err(Error::DimensionMismatch {
                expected: b,
                found: captions.len(),
            });
        }
        let m = self.motion_graph(g, clips)?;
        let t = self.text_graph(g, captions)?;
        let sims = g.matmul_nt(m, t);
        let logits = g.scale(sims, 1.0 / (self.config.feature_dim as f64 * self.config.temperature));
        let mut blocked = Tensor::zeros(b, b);
        let mut eye = Tensor::zeros(b, b);
        for i in 0..b {
            eye.set(i, i, 1.0);
            for j in 0..b {
                if i != j && captions[i] == captions[j] {
                    blocked.set(i, j, -1e9);
                }
            }
        }
        let blocked = g.constant(blocked);
        let eye = g.constant(eye);
        let logits = g.add(logits, blocked);
        let mut total = None;
        for l in [logits, g.transpose(logits)] {
            let lp = g.log_softmax_rows(l);
            let diag = g.mul(lp, eye);
            let s = g.sum(diag);
            total = Some(match total {
                None => s,
                Some(acc) => g.add(acc, s),
            });
        }
        Ok(g.scale(total.expect("two terms"), -0.5 / b as f64))
    }
}

/// Trains the evaluator on motions and their captions.
pub fn train_toy_evaluator(
    motions: &[MotionSequence],
    captions: &[String],
    stats: NormStats,
    config: EvaluatorConfig,
    log: &mut dyn FnMut(usize, f64),
) -> Result<EvaluatorModel> {
    if motions.len() != captions.len() {
        return Err(Error::DimensionMismatch {
            expected: motions.len(),
            found: captions.len(),
        });
    }
    if motions.len() < 2 {
        return Err(Error::InsufficientSamples {
            have: motions.len(),
            need: 2,
        });
    }
    let mut vocab: Vec<String> = captions.iter().flat_map(|c| crate::text::tokenize(c)).collect();
    vocab.sort_unstable();
    vocab.dedup();
    let mut model = EvaluatorModel::new(config, vocab, stats, config.seed)?;
    let normed = motions
        .iter()
        .map(|m| Ok(normalize(m, &model.stats)?.frames))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(&model.params);
    for it in 0..config.iterations {
        let mut rng = stream(config.seed, Stream::TrainBatch, it as u64, 1);
        let pick: Vec<usize> = (0..config.batch_size).map(|_| index(&mut rng, motions.len())).collect();
        let clips: Vec<&Tensor> = pick.iter().map(|&k| &normed[k]).collect();
        let caps: Vec<&str> = pick.iter().map(|&k| captions[k].as_str()).collect();
        let (loss, mut grads) = {
            let mut g = Graph::with_params(&model.params);
            let loss = model.contrastive_graph(&mut g, &clips, &caps)?;
            (g.value(loss).item(), g.backward(loss).into_param_grads())
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite("evaluator loss"));
        }
        clip_grad_norm(&mut grads, 1.0);
        adam.step(&mut model.params, &grads, config.lr.at(it))?;
        log(it, loss);
    }
    Ok(model)
}
