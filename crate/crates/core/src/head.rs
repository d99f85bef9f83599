//! Per-position MLP denoiser with AdaLN conditioning.
//!
//! The timestep embedding and the projected condition token are summed,
//! passed through SiLU, and mapped to shift/scale/gate triples for each
//! residual block plus a shift/scale pair for the output layer. There is no
//! attention, so every position is denoised independently.

use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::noise::{q_sample, NoiseSchedule, X0Predictor};
use crate::nn::{Linear, ParamStore};
use crate::rng::DetRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    pub blocks: usize,
    pub width: usize,
    pub time_embed_dim: usize,
    pub latent_width: usize,
    pub cond_width: usize,
}

impl HeadConfig {
    /// Four blocks, internal width `4 * latent_width`.
    pub fn new(latent_width: usize, cond_width: usize) -> Self {
        Self {
            blocks: 4,
            width: 4 * latent_width,
            time_embed_dim: 4 * latent_width,
            latent_width,
            cond_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::InvalidConfig("diffusion head needs at least one block".into()));
        }
        if self.width == 0 || self.time_embed_dim < 2 || self.latent_width == 0 || self.cond_width == 0 {
            return Err(Error::InvalidConfig("diffusion head widths must be positive".into()));
        }
        Ok(())
    }
}

/// Squared error (default) or unsquared per-position L2 distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiffusionLossKind {
    #[default]
    Mse,
    L2,
}

/// Sinusoidal features `[cos(t w_k), sin(t w_k)]`, `w_k = 10000^(-k/half)`.
pub fn sinusoidal(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = alloc::vec![0.0; dim];
    for k in 0..half {
        let w = libm::exp(-libm::log(10_000.0) * k as f64 / half as f64);
        out[k] = libm::cos(t as f64 * w);
        out[half + k] = libm::sin(t as f64 * w);
    }
    out
}

#[derive(Debug, Clone)]
struct AdaBlock {
    ada: Linear,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct DiffusionHead {
    pub config: HeadConfig,
    t_fc1: Linear,
    t_fc2: Linear,
    cond_proj: Linear,
    in_proj: Linear,
    blocks: Vec<AdaBlock>,
    final_ada: Linear,
    out: Linear,
}

/// Zeroes the gate third of an AdaLN projection.
fn zero_gate(store: &mut ParamStore, lin: &Linear, width: usize) {
    let w = store.get_mut(lin.weight);
    for r in 0..w.rows() {
        w.row_mut(r)[2 * width..].iter_mut().for_each(|v| *v = 0.0);
    }
    if let Some(b) = lin.bias {
        store.get_mut(b).row_mut(0)[2 * width..].iter_mut().for_each(|v| *v = 0.0);
    }
}

impl DiffusionHead {
    pub fn new(store: &mut ParamStore, config: HeadConfig, rng: &mut DetRng) -> Result<Self> {
        config.validate()?;
        let (w, e) = (config.width, config.time_embed_dim);
        let t_fc1 = Linear::new(store, "head.t_fc1", e, e, rng);
        let t_fc2 = Linear::new(store, "head.t_fc2", e, e, rng);
        let cond_proj = Linear::new(store, "head.cond_proj", config.cond_width, e, rng);
        let in_proj = Linear::new(store, "head.in_proj", config.latent_width, w, rng);
        let blocks = (0..config.blocks)
            .map(|i| {
                let ada = Linear::new(store, &alloc::format!("head.block{i}.ada"), e, 3 * w, rng);
                zero_gate(store, &ada, w);
                AdaBlock {
                    ada,
                    fc1: Linear::new(store, &alloc::format!("head.block{i}.fc1"), w, w, rng),
                    fc2: Linear::new(store, &alloc::format!("head.block{i}.fc2"), w, w, rng),
                }
            })
            .collect();
        let final_ada = Linear::new(store, "head.final.ada", e, 2 * w, rng);
        let out = Linear::new(store, "head.final.out", w, config.latent_width, rng);
        Ok(Self {
            config,
            t_fc1,
            t_fc2,
            cond_proj,
            in_proj,
            blocks,
            final_ada,
            out,
        })
    }

    /// Timestep embeddings for each row, `t.len() x time_embed_dim`.
    pub fn timestep_embed_graph(&self, g: &mut Graph, t: &[usize]) -> Var {
        let dim = self.config.time_embed_dim;
        let data = t.iter().flat_map(|&s| sinusoidal(s, dim)).collect();
        let feats = g.constant(Tensor::from_vec(t.len(), dim, data).expect("shape"));
        let h = self.t_fc1.forward(g, feats);
        let h = g.silu(h);
        self.t_fc2.forward(g, h)
    }

    pub fn timestep_embed(&self, params: &ParamStore, t: usize, t_diff: usize) -> Result<Vec<f64>> {
        if t >= t_diff {
            return Err(Error::TimestepOutOfRange { t, steps: t_diff });
        }
        let mut g = Graph::with_params(params);
        let v = self.timestep_embed_graph(&mut g, &[t]);
        Ok(g.value(v).data().into())
    }

    /// `x0` predictions for `P` rows of noisy latents, steps, and condition tokens.
    pub fn forward_graph(&self, g: &mut Graph, z_t: Var, t: &[usize], cond: Var) -> Var {
        let w = self.config.width;
        let te = self.timestep_embed_graph(g, t);
        let ce = self.cond_proj.forward(g, cond);
        let c = g.add(te, ce);
        let c = g.silu(c);
        let mut x = self.in_proj.forward(g, z_t);
        for block in &self.blocks {
            let m = block.ada.forward(g, c);
            let shift = g.slice_cols(m, 0, w);
            let scale = g.slice_cols(m, w, 2 * w);
            let gate = g.slice_cols(m, 2 * w, 3 * w);
            let h = modulate(g, x, shift, scale);
            let h = block.fc1.forward(g, h);
            let h = g.silu(h);
            let h = block.fc2.forward(g, h);
            let h = g.mul(gate, h);
            x = g.add(x, h);
        }
        let m = self.final_ada.forward(g, c);
        let shift = g.slice_cols(m, 0, w);
        let scale = g.slice_cols(m, w, 2 * w);
        let h = modulate(g, x, shift, scale);
        self.out.forward(g, h)
    }

    pub fn predict(&self, params: &ParamStore, z_t: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor> {
        if z_t.rows() != cond.rows() || z_t.rows() != t.len() {
            return Err(Error::ShapeMismatch("head inputs disagree on row count".into()));
        }
        if z_t.cols() != self.config.latent_width || cond.cols() != self.config.cond_width {
            return Err(Error::ShapeMismatch("head input widths".into()));
        }
        let mut g = Graph::with_params(params);
        let z = g.constant(z_t.clone());
        let c = g.constant(cond.clone());
        let out = self.forward_graph(&mut g, z, t, c);
        Ok(g.value(out).clone())
    }
}

/// `LN(x) * (1 + scale) + shift`, LayerNorm without affine.
fn modulate(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Var {
    let h = g.layer_norm_rows(x);
    let s = g.mul(h, scale);
    let h = g.add(h, s);
    g.add(h, shift)
}

/// Loss between predictions and clean targets over the given rows.
pub fn diffusion_loss_graph(g: &mut Graph, pred: Var, z0: Var, kind: DiffusionLossKind) -> Var {
    let d = g.sub(pred, z0);
    match kind {
        DiffusionLossKind::Mse => {
            let sq = g.square(d);
            g.mean(sq)
        }
        DiffusionLossKind::L2 => {
            let unit = g.l2_normalize_rows(d);
            let prod = g.mul(d, unit);
            let norms = g.sum_cols(prod);
            g.mean(norms)
        }
    }
}

/// Adapter exposing a head and its parameters to the samplers.
pub struct HeadPredictor<'a> {
    pub head: &'a DiffusionHead,
    pub params: &'a ParamStore,
}

impl X0Predictor for HeadPredictor<'_> {
    fn latent_width(&self) -> usize {
        self.head.config.latent_width
    }

    fn predict_x0(&self, z_t: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor> {
        self.head.predict(self.params, z_t, &alloc::vec![t; z_t.rows()], cond)
    }
}

/// Diffusion loss for clean latents `z0` at masked positions with their
/// condition tokens, per-row steps `t`, and noise `eps`.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_loss(
    head: &DiffusionHead,
    params: &ParamStore,
    z0: &Tensor,
    t: &[usize],
    eps: &Tensor,
    cond: &Tensor,
    sched: &NoiseSchedule,
    kind: DiffusionLossKind,
) -> Result<f64> {
    if z0.rows() == 0 {
        return Err(Error::NoMaskedPositions);
    }
    let zt = q_sample(z0, t, eps, sched)?;
    let pred = head.predict(params, &zt, t, cond)?;
    let mut g = Graph::new();
    let (p, z) = (g.constant(pred), g.constant(z0.clone()));
    let l = diffusion_loss_graph(&mut g, p, z, kind);
    Ok(g.value(l).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{make_schedule, ScheduleKind};
    use crate::rng::{normal_tensor, stream, Stream};

    fn head() -> (ParamStore, DiffusionHead) {
        let mut store = ParamStore::default();
        let mut rng = stream(1, Stream::Init, 0, 0);
        let h = DiffusionHead::new(&mut store, HeadConfig::new(4, 6), &mut rng).unwrap();
        (store, h)
    }

    #[test]
    fn timestep_embedding_properties() {
        let (store, h) = head();
        let a = h.timestep_embed(&store, 0, 50).unwrap();
        assert_eq!(a, h.timestep_embed(&store, 0, 50).unwrap());
        assert_eq!(a.len(), 16);
        assert_ne!(a, h.timestep_embed(&store, 1, 50).unwrap());
        assert!(h.timestep_embed(&store, 50, 50).is_err());
    }

    #[test]
    fn prediction_is_deterministic_and_condition_sensitive() {
        let (store, h) = head();
        let mut rng = stream(2, Stream::Init, 0, 0);
        let z = normal_tensor(&mut rng, 3, 4);
        let c = normal_tensor(&mut rng, 3, 6);
        let t = [3, 7, 0];
        let a = h.predict(&store, &z, &t, &c).unwrap();
        assert_eq!(a.shape(), (3, 4));
        assert_eq!(a, h.predict(&store, &z, &t, &c).unwrap());
        let mut c2 = c.clone();
        c2.set(1, 2, c.get(1, 2) + 1e-3);
        let b = h.predict(&store, &z, &t, &c2).unwrap();
        assert!(b.row(1).iter().zip(a.row(1)).any(|(x, y)| x != y));
        assert_eq!(a.row(0), b.row(0));
    }

    #[test]
    fn positions_are_independent_bit_exactly() {
        let (store, h) = head();
        let mut rng = stream(3, Stream::Init, 0, 0);
        let z = normal_tensor(&mut rng, 5, 4);
        let c = normal_tensor(&mut rng, 5, 6);
        let t = [1, 2, 3, 4, 5];
        let all = h.predict(&store, &z, &t, &c).unwrap();
        for r in 0..5 {
            let one = h
                .predict(&store, &z.slice_rows(r, r + 1), &t[r..r + 1], &c.slice_rows(r, r + 1))
                .unwrap();
            assert_eq!(one.row(0), all.row(r));
        }
    }

    #[test]
    fn loss_zero_for_exact_prediction() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, -4.0]]).unwrap());
        for kind in [DiffusionLossKind::Mse, DiffusionLossKind::L2] {
            let l = diffusion_loss_graph(&mut g, z, z, kind);
            assert_eq!(g.value(l).item(), 0.0);
        }
        let p = g.constant(Tensor::from_rows(&[[4.0, 6.0], [3.0, -4.0]]).unwrap());
        let l2 = diffusion_loss_graph(&mut g, p, z, DiffusionLossKind::L2);
        assert!((g.value(l2).item() - 2.5).abs() < 1e-12);
        let mse = diffusion_loss_graph(&mut g, p, z, DiffusionLossKind::Mse);
        assert!((g.value(mse).item() - 25.0 / 4.0).abs() < 1e-12);
    }

    struct Identity;

    impl X0Predictor for Identity {
        fn latent_width(&self) -> usize {
            2
        }
        fn predict_x0(&self, z_t: &Tensor, _: usize, _: &Tensor) -> Result<Tensor> {
            Ok(z_t.clone())
        }
    }

    #[test]
    fn identity_stub_near_clean_step_has_tiny_loss() {
        let s = make_schedule(1000, ScheduleKind::Cosine).unwrap();
        let mut rng = stream(4, Stream::Init, 0, 0);
        let z0 = normal_tensor(&mut rng, 8, 2);
        let eps = normal_tensor(&mut rng, 8, 2);
        let zt = q_sample(&z0, &[0; 8], &eps, &s).unwrap();
        let pred = Identity.predict_x0(&zt, 0, &Tensor::zeros(8, 1)).unwrap();
        let mse = pred.zip_map(&z0, |a, b| (a - b) * (a - b)).mean();
        assert!(mse < 1e-4, "{mse}");
    }

    #[test]
    fn loss_requires_masked_positions() {
        let (store, h) = head();
        let s = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let e = Tensor::zeros(0, 4);
        assert_eq!(
            diffusion_loss(&h, &store, &e, &[], &e, &Tensor::zeros(0, 6), &s, DiffusionLossKind::Mse),
            Err(Error::NoMaskedPositions)
        );
    }
}
