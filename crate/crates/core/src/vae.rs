//! Frame-level continuous motion VAE.
//!
//! The encoder maps `T` normalized frames to `T / l` Gaussian latent tokens
//! through temporal-strided convolutions and residual blocks; the decoder
//! mirrors it with nearest-neighbour upsampling. Training minimizes
//! `L_nll + w_kl * L_kl + w_vel * L_vel` with a single learnable
//! log-variance inside the NLL term.

use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::motion::LayoutDescriptor;
use crate::nn::{upsample2, Conv1d, Linear, ParamId, ParamStore};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

/// Clamp applied to predicted log-variances.
pub const LOG_VAR_RANGE: (f64, f64) = (-30.0, 20.0);

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    /// Frame feature width.
    pub d: usize,
    /// Latent channels per token.
    pub latent_width: usize,
    /// Convolution channel width.
    pub width: usize,
    /// Residual blocks per down/up stage.
    pub res_layers: usize,
    /// Temporal stride-2 stages; the downsampling factor is `2^down_layers`.
    pub down_layers: usize,
    pub w_kl: f64,
    pub w_vel: f64,
    pub velocity_range: (usize, usize),
}

impl VaeConfig {
    /// Full-scale configuration (512-wide latents, factor 4, three residual blocks).
    pub fn full_scale(layout: &LayoutDescriptor) -> Self {
        Self {
            d: layout.d,
            latent_width: 512,
            width: 512,
            res_layers: 3,
            down_layers: 2,
            w_kl: 1e-6,
            w_vel: 0.5,
            velocity_range: layout.velocity_range,
        }
    }

    /// Desk-scale configuration used for the toy corpus.
    pub fn toy(layout: &LayoutDescriptor) -> Self {
        Self {
            latent_width: 16,
            width: 128,
            res_layers: 1,
            ..Self::full_scale(layout)
        }
    }

    pub fn downsample_factor(&self) -> usize {
        1 << self.down_layers
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.velocity_range;
        if self.d == 0 || self.latent_width == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("VAE widths must be positive".into()));
        }
        if lo >= hi || hi > self.d {
            return Err(Error::InvalidConfig("VAE velocity range outside frame".into()));
        }
        if self.w_kl < 0.0 || self.w_vel < 0.0 {
            return Err(Error::InvalidConfig("VAE loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-token Gaussian posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl LatentPosterior {
    pub fn len(&self) -> usize {
        self.mu.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.rows() == 0
    }
}

/// `N x c` continuous latent tokens, each covering `downsample_factor` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub tokens: Tensor,
    pub downsample_factor: usize,
}

impl LatentSequence {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }
}

/// `mu + exp(log_var / 2) * noise`.
pub fn reparameterize(p: &LatentPosterior, noise: &Tensor, downsample_factor: usize) -> Result<LatentSequence> {
    if p.mu.shape() != p.log_var.shape() || p.mu.shape() != noise.shape() {
        return Err(Error::ShapeMismatch("posterior and noise shapes differ".into()));
    }
    let mut tokens = p.mu.clone();
    for ((z, lv), n) in tokens.data_mut().iter_mut().zip(p.log_var.data()).zip(noise.data()) {
        *z += libm::exp(0.5 * lv) * n;
    }
    Ok(LatentSequence {
        tokens,
        downsample_factor,
    })
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv1d,
    conv2: Conv1d,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, width: usize, rng: &mut crate::rng::DetRng) -> Self {
        Self {
            conv1: Conv1d::new(store, &alloc::format!("{name}.conv1"), width, width, 3, 1, 1, rng),
            conv2: Conv1d::new(store, &alloc::format!("{name}.conv2"), width, width, 3, 1, 1, rng),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var, batch: usize, len: usize) -> Var {
        let h = g.silu(x);
        let (h, _) = self.conv1.forward(g, h, batch, len);
        let h = g.silu(h);
        let (h, _) = self.conv2.forward(g, h, batch, len);
        g.add(x, h)
    }
}

/// Graph handles of one training forward pass.
#[derive(Debug, Clone, Copy)]
pub struct VaeLossTerms {
    pub total: Var,
    pub nll: Var,
    pub kl: Var,
    pub velocity: Var,
    pub recon: Var,
}

#[derive(Debug, Clone)]
pub struct MotionVae {
    pub config: VaeConfig,
    pub params: ParamStore,
    conv_in: Conv1d,
    enc_down: Vec<Conv1d>,
    enc_res: Vec<Vec<ResBlock>>,
    mu_head: Linear,
    log_var_head: Linear,
    dec_in: Linear,
    dec_res: Vec<Vec<ResBlock>>,
    dec_up: Vec<Conv1d>,
    conv_out: Conv1d,
    nll_log_var: ParamId,
}

impl MotionVae {
    pub fn new(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Init, 0x0FAE, 0);
        let mut p = ParamStore::default();
        let w = config.width;
        let conv_in = Conv1d::new(&mut p, "enc.conv_in", config.d, w, 3, 1, 1, &mut rng);
        let mut enc_down = Vec::new();
        let mut enc_res = Vec::new();
        for s in 0..config.down_layers {
            enc_down.push(Conv1d::new(&mut p, &alloc::format!("enc.down{s}"), w, w, 4, 2, 1, &mut rng));
            enc_res.push(
                (0..config.res_layers)
                    .map(|r| ResBlock::new(&mut p, &alloc::format!("enc.res{s}.{r}"), w, &mut rng))
                    .collect(),
            );
        }
        let mu_head = Linear::new(&mut p, "enc.mu", w, config.latent_width, &mut rng);
        let log_var_head = Linear::new(&mut p, "enc.log_var", w, config.latent_width, &mut rng);
        let dec_in = Linear::new(&mut p, "dec.in", config.latent_width, w, &mut rng);
        let mut dec_res = Vec::new();
        let mut dec_up = Vec::new();
        for s in 0..config.down_layers {
            dec_res.push(
                (0..config.res_layers)
                    .map(|r| ResBlock::new(&mut p, &alloc::format!("dec.res{s}.{r}"), w, &mut rng))
                    .collect(),
            );
            dec_up.push(Conv1d::new(&mut p, &alloc::format!("dec.up{s}"), w, w, 3, 1, 1, &mut rng));
        }
        let conv_out = Conv1d::new(&mut p, "dec.conv_out", w, config.d, 3, 1, 1, &mut rng);
        let nll_log_var = p.add("nll.log_var", Tensor::scalar(0.0));
        Ok(Self {
            config,
            params: p,
            conv_in,
            enc_down,
            enc_res,
            mu_head,
            log_var_head,
            dec_in,
            dec_res,
            dec_up,
            conv_out,
            nll_log_var,
        })
    }

    pub fn downsample_factor(&self) -> usize {
        self.config.downsample_factor()
    }

    pub fn latent_width(&self) -> usize {
        self.config.latent_width
    }

    pub fn nll_log_var_id(&self) -> ParamId {
        self.nll_log_var
    }

    /// Encodes `batch` stacked sequences of `len` frames (`len` a multiple of
    /// the downsampling factor). Returns `(mu, log_var)`, each `batch * len / l` rows.
    pub fn encode_graph(&self, g: &mut Graph, x: Var, batch: usize, len: usize) -> (Var, Var) {
        debug_assert_eq!(len % self.downsample_factor(), 0);
        let (mut h, mut cur) = self.conv_in.forward(g, x, batch, len);
        for (down, res) in self.enc_down.iter().zip(&self.enc_res) {
            let (d, l) = down.forward(g, h, batch, cur);
            h = d;
            cur = l;
            for block in res {
                h = block.forward(g, h, batch, cur);
            }
        }
        let h = g.silu(h);
        let mu = self.mu_head.forward(g, h);
        let lv = self.log_var_head.forward(g, h);
        let lv = g.clamp(lv, LOG_VAR_RANGE.0, LOG_VAR_RANGE.1);
        (mu, lv)
    }

    /// Decodes `batch` stacked latent sequences of `tokens` rows each into
    /// `batch * tokens * l` frames.
    pub fn decode_graph(&self, g: &mut Graph, z: Var, batch: usize, tokens: usize) -> Var {
        let mut h = self.dec_in.forward(g, z);
        let mut cur = tokens;
        for (res, up) in self.dec_res.iter().zip(&self.dec_up) {
            for block in res {
                h = block.forward(g, h, batch, cur);
            }
            h = upsample2(g, h, batch, cur);
            cur *= 2;
            let (u, _) = up.forward(g, h, batch, cur);
            h = u;
        }
        let h = g.silu(h);
        self.conv_out.forward(g, h, batch, cur).0
    }

    /// Number of whole latent tokens covering `frames` frames.
    pub fn tokens_for(&self, frames: usize) -> Result<usize> {
        let l = self.downsample_factor();
        if frames < l {
            return Err(Error::SequenceTooShort { frames, factor: l });
        }
        Ok(frames / l)
    }

    /// Posterior of a normalized `T x d` clip; trailing `T mod l` frames are dropped.
    pub fn encode(&self, frames: &Tensor) -> Result<LatentPosterior> {
        if frames.cols() != self.config.d {
            return Err(Error::DimensionMismatch {
                expected: self.config.d,
                found: frames.cols(),
            });
        }
        let n = self.tokens_for(frames.rows())?;
        let len = n * self.downsample_factor();
        let mut g = Graph::with_params(&self.params);
        let x = g.constant(frames.slice_rows(0, len));
        let (mu, lv) = self.encode_graph(&mut g, x, 1, len);
        Ok(LatentPosterior {
            mu: g.value(mu).clone(),
            log_var: g.value(lv).clone(),
        })
    }

    /// Normalized frames (`N * l` rows) for a latent sequence.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        if z.rows() == 0 {
            return Err(Error::SequenceTooShort { frames: 0, factor: 1 });
        }
        if z.cols() != self.latent_width() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_width(),
                found: z.cols(),
            });
        }
        let mut g = Graph::with_params(&self.params);
        let zv = g.constant(z.clone());
        let out = self.decode_graph(&mut g, zv, 1, z.rows());
        Ok(g.value(out).clone())
    }

    /// Builds the full training objective for `batch` stacked clips of `len`
    /// frames with reparameterization noise `noise` (`batch * len / l` rows).
    pub fn loss_graph(&self, g: &mut Graph, x: &Tensor, batch: usize, len: usize, noise: &Tensor) -> VaeLossTerms {
        let xv = g.constant(x.clone());
        let (mu, lv) = self.encode_graph(g, xv, batch, len);
        let half = g.scale(lv, 0.5);
        let sigma = g.exp(half);
        let eps = g.constant(noise.clone());
        let scaled = g.mul(sigma, eps);
        let z = g.add(mu, scaled);
        let tokens = len / self.downsample_factor();
        let recon = self.decode_graph(g, z, batch, tokens);
        let s = g.param(self.nll_log_var);
        let nll = nll_graph(g, recon, xv, s);
        let kl = kl_graph(g, mu, lv);
        let velocity = velocity_graph(g, recon, xv, self.config.velocity_range);
        let total = total_graph(g, nll, kl, velocity, self.config.w_kl, self.config.w_vel);
        VaeLossTerms {
            total,
            nll,
            kl,
            velocity,
            recon,
        }
    }
}

/// `mean|recon - target| / exp(s) + s`.
pub fn nll_graph(g: &mut Graph, recon: Var, target: Var, log_sigma_sq: Var) -> Var {
    let diff = g.sub(recon, target);
    let l1 = g.abs(diff);
    let l1 = g.mean(l1);
    let neg = g.scale(log_sigma_sq, -1.0);
    let inv = g.exp(neg);
    let scaled = g.mul_scalar(l1, inv);
    g.add(scaled, log_sigma_sq)
}

/// `-0.5 * mean(1 + log_var - mu^2 - exp(log_var))`.
pub fn kl_graph(g: &mut Graph, mu: Var, log_var: Var) -> Var {
    let mu2 = g.square(mu);
    let var = g.exp(log_var);
    let a = g.add_scalar(log_var, 1.0);
    let a = g.sub(a, mu2);
    let a = g.sub(a, var);
    let m = g.mean(a);
    g.scale(m, -0.5)
}

/// Mean L1 over the velocity block.
pub fn velocity_graph(g: &mut Graph, recon: Var, target: Var, range: (usize, usize)) -> Var {
    let a = g.slice_cols(recon, range.0, range.1);
    let b = g.slice_cols(target, range.0, range.1);
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean(d)
}

pub fn total_graph(g: &mut Graph, nll: Var, kl: Var, velocity: Var, w_kl: f64, w_vel: f64) -> Var {
    let k = g.scale(kl, w_kl);
    let v = g.scale(velocity, w_vel);
    let t = g.add(nll, k);
    g.add(t, v)
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(alloc::format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Reconstruction NLL with a scalar log-variance.
pub fn loss_nll(recon: &Tensor, target: &Tensor, log_sigma_sq: f64) -> Result<f64> {
    check_same(recon, target)?;
    let mut g = Graph::new();
    let (r, t) = (g.constant(recon.clone()), g.constant(target.clone()));
    let s = g.constant(Tensor::scalar(log_sigma_sq));
    let out = nll_graph(&mut g, r, t, s);
    Ok(g.value(out).item())
}

/// KL divergence of the posterior from `N(0, I)`, averaged over elements.
pub fn loss_kl(p: &LatentPosterior) -> Result<f64> {
    check_same(&p.mu, &p.log_var)?;
    let mut g = Graph::new();
    let (mu, lv) = (g.constant(p.mu.clone()), g.constant(p.log_var.clone()));
    let out = kl_graph(&mut g, mu, lv);
    Ok(g.value(out).item())
}

pub fn loss_velocity(recon: &Tensor, target: &Tensor, range: (usize, usize)) -> Result<f64> {
    check_same(recon, target)?;
    if range.0 >= range.1 || range.1 > recon.cols() {
        return Err(Error::InvalidConfig("velocity range outside frame".into()));
    }
    let mut g = Graph::new();
    let (r, t) = (g.constant(recon.clone()), g.constant(target.clone()));
    let out = velocity_graph(&mut g, r, t, range);
    Ok(g.value(out).item())
}

pub fn vae_total_loss(nll: f64, kl: f64, velocity: f64, w_kl: f64, w_vel: f64) -> f64 {
    nll + w_kl * kl + w_vel * velocity
}
