//! Bidirectional latent transformer.
//!
//! Input sequence is `[text, z_1, ..., z_N]`. Masked positions are replaced
//! by a learned continuous `[MASK]` vector in latent space before the input
//! projection, so whatever the caller left at a masked slot is never read.
//! The output drops the text slot and yields one condition token per latent
//! position.

use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, ParamId, ParamStore};
use crate::rng::{normal_vec, DetRng};
use crate::tensor::Tensor;
use crate::text::TextEncoding;

/// Per-position transformer output, `N x c_cond`.
pub type ConditionTokens = Tensor;

/// `true` marks a masked (unresolved) position.
pub type MaskFlags = Vec<bool>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub c_cond: usize,
    /// Latent positions plus the text slot.
    pub max_positions: usize,
    pub latent_width: usize,
    pub text_width: usize,
    pub ffn_mult: usize,
}

impl TransformerConfig {
    pub fn full_scale(latent_width: usize, text_width: usize) -> Self {
        Self {
            layers: 16,
            heads: 8,
            hidden: 1024,
            c_cond: 512,
            max_positions: 49 + 1,
            latent_width,
            text_width,
            ffn_mult: 4,
        }
    }

    pub fn toy(latent_width: usize, text_width: usize, max_tokens: usize) -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 64,
            c_cond: 64,
            max_positions: max_tokens + 1,
            ..Self::full_scale(latent_width, text_width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig("hidden width must be divisible by heads".into()));
        }
        if self.max_positions < 2 || self.c_cond == 0 || self.latent_width == 0 || self.text_width == 0 {
            return Err(Error::InvalidConfig("transformer widths and positions must be positive".into()));
        }
        Ok(())
    }
}

/// One sequence in a batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TransformerItem<'a> {
    pub latents: &'a Tensor,
    pub mask: &'a [bool],
    /// `1 x text_width` encoding.
    pub text: Var,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    proj: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone)]
pub struct LatentTransformer {
    pub config: TransformerConfig,
    text_proj: Linear,
    in_proj: Linear,
    mask_token: ParamId,
    positions: ParamId,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    out: Linear,
}

impl LatentTransformer {
    pub fn new(store: &mut ParamStore, config: TransformerConfig, rng: &mut DetRng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let text_proj = Linear::new(store, "tf.text_proj", config.text_width, h, rng);
        let in_proj = Linear::new(store, "tf.in_proj", config.latent_width, h, rng);
        let mask_token = store.add(
            "tf.mask_token",
            Tensor::from_vec(1, config.latent_width, normal_vec(rng, config.latent_width)).expect("shape"),
        );
        let pos: Vec<f64> = normal_vec(rng, config.max_positions * h).into_iter().map(|v| 0.02 * v).collect();
        let positions = store.add("tf.positions", Tensor::from_vec(config.max_positions, h, pos).expect("shape"));
        let blocks = (0..config.layers)
            .map(|i| {
                let n = |s: &str| alloc::format!("tf.block{i}.{s}");
                Block {
                    ln1: LayerNorm::new(store, &n("ln1"), h),
                    qkv: Linear::new(store, &n("qkv"), h, 3 * h, rng),
                    proj: Linear::new(store, &n("proj"), h, h, rng),
                    ln2: LayerNorm::new(store, &n("ln2"), h),
                    ff1: Linear::new(store, &n("ff1"), h, config.ffn_mult * h, rng),
                    ff2: Linear::new(store, &n("ff2"), config.ffn_mult * h, h, rng),
                }
            })
            .collect();
        let ln_f = LayerNorm::new(store, "tf.ln_f", h);
        let out = Linear::new(store, "tf.out", h, config.c_cond, rng);
        Ok(Self {
            config,
            text_proj,
            in_proj,
            mask_token,
            positions,
            blocks,
            ln_f,
            out,
        })
    }

    pub fn mask_token_id(&self) -> ParamId {
        self.mask_token
    }

    fn check_item(&self, latents: &Tensor, mask: &[bool]) -> Result<()> {
        let n = latents.rows();
        if n == 0 {
            return Err(Error::SequenceTooShort { frames: 0, factor: 1 });
        }
        if latents.cols() != self.config.latent_width {
            return Err(Error::DimensionMismatch {
                expected: self.config.latent_width,
                found: latents.cols(),
            });
        }
        if mask.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: mask.len(),
            });
        }
        if n + 1 > self.config.max_positions {
            return Err(Error::TooManyPositions {
                positions: n,
                max: self.config.max_positions - 1,
            });
        }
        Ok(())
    }

    /// Condition tokens for every latent position of every item, stacked in
    /// item order (`sum N_b x c_cond`).
    pub fn forward_graph(&self, g: &mut Graph, items: &[TransformerItem]) -> Result<Var> {
        let batch = items.len();
        if batch == 0 {
            return Err(Error::InvalidConfig("empty transformer batch".into()));
        }
        for it in items {
            self.check_item(it.latents, it.mask)?;
        }
        let total: usize = items.iter().map(|it| it.latents.rows()).sum();
        let parts: Vec<&Tensor> = items.iter().map(|it| it.latents).collect();
        let z = g.constant(Tensor::concat_rows(&parts)?);
        let mask_tok = g.param(self.mask_token);
        let pool = g.concat_rows(&[z, mask_tok]);
        let mut pick = Vec::with_capacity(total);
        let mut row = 0;
        for it in items {
            for &m in it.mask {
                pick.push(Some(if m { total } else { row }));
                row += 1;
            }
        }
        let z_in = g.gather_rows(pool, pick);
        let z_h = self.in_proj.forward(g, z_in);

        let texts: Vec<Var> = items.iter().map(|it| it.text).collect();
        let texts = g.concat_rows(&texts);
        let t_h = self.text_proj.forward(g, texts);

        // Interleave into per-item [text, z_1..z_N] blocks.
        let both = g.concat_rows(&[t_h, z_h]);
        let mut order = Vec::with_capacity(batch + total);
        let mut pos_idx = Vec::with_capacity(batch + total);
        let mut spans = Vec::with_capacity(batch);
        let mut offset = 0;
        for (b, it) in items.iter().enumerate() {
            let n = it.latents.rows();
            spans.push((order.len(), order.len() + n + 1));
            order.push(Some(b));
            pos_idx.push(0);
            for p in 0..n {
                order.push(Some(batch + offset + p));
                pos_idx.push(p + 1);
            }
            offset += n;
        }
        let x = g.gather_rows(both, order);
        let pos = g.param(self.positions);
        let pos = g.select_rows(pos, &pos_idx);
        let mut x = g.add(x, pos);

        for block in &self.blocks {
            let h = block.ln1.forward(g, x);
            let a = self.attention(g, block, h, &spans);
            x = g.add(x, a);
            let h = block.ln2.forward(g, x);
            let h = block.ff1.forward(g, h);
            let h = g.gelu(h);
            let h = block.ff2.forward(g, h);
            x = g.add(x, h);
        }
        let x = self.ln_f.forward(g, x);
        let y = self.out.forward(g, x);
        let keep: Vec<usize> = spans.iter().flat_map(|&(s, e)| s + 1..e).collect();
        Ok(g.select_rows(y, &keep))
    }

    fn attention(&self, g: &mut Graph, block: &Block, h: Var, spans: &[(usize, usize)]) -> Var {
        let hidden = self.config.hidden;
        let heads = self.config.heads;
        let dh = hidden / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let qkv = block.qkv.forward(g, h);
        let mut outs = Vec::with_capacity(spans.len());
        for &(s, e) in spans {
            let item = g.slice_rows(qkv, s, e);
            let mut head_out = Vec::with_capacity(heads);
            for k in 0..heads {
                let q = g.slice_cols(item, k * dh, (k + 1) * dh);
                let kk = g.slice_cols(item, hidden + k * dh, hidden + (k + 1) * dh);
                let v = g.slice_cols(item, 2 * hidden + k * dh, 2 * hidden + (k + 1) * dh);
                let scores = g.matmul_nt(q, kk);
                let scores = g.scale(scores, scale);
                let p = g.softmax_rows(scores);
                head_out.push(g.matmul(p, v));
            }
            outs.push(g.concat_cols(&head_out));
        }
        let a = g.concat_rows(&outs);
        block.proj.forward(g, a)
    }

    /// Condition tokens for one sequence.
    pub fn forward(&self, params: &ParamStore, latents: &Tensor, mask: &[bool], text: &TextEncoding) -> Result<ConditionTokens> {
        if text.vector.len() != self.config.text_width {
            return Err(Error::DimensionMismatch {
                expected: self.config.text_width,
                found: text.vector.len(),
            });
        }
        let mut g = Graph::with_params(params);
        let t = g.constant(Tensor::row_vector(&text.vector));
        let out = self.forward_graph(&mut g, &[TransformerItem { latents, mask, text: t }])?;
        Ok(g.value(out).clone())
    }
}

/// `uncond + s * (cond - uncond)`; `s = 1` and `s = 0` return the operands unchanged.
pub fn cfg_combine(cond: &ConditionTokens, uncond: &ConditionTokens, s: f64) -> Result<ConditionTokens> {
    if cond.shape() != uncond.shape() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "guidance operands {:?} vs {:?}",
            cond.shape(),
            uncond.shape()
        )));
    }
    if s == 1.0 {
        return Ok(cond.clone());
    }
    if s == 0.0 {
        return Ok(uncond.clone());
    }
    Ok(uncond.zip_map(cond, |u, c| u + s * (c - u)))
}
