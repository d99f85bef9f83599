//! Optimizer, EMA, and the two training stages.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::autograd::Graph;
use crate::codec::MotionCodec;
use crate::error::{Error, Result};
use crate::head::diffusion_loss_graph;
use crate::model::{CondRequest, Denoiser, MadModel};
use crate::motion::{normalize, MotionSequence, NormStats};
use crate::nn::ParamStore;
use crate::noise::q_sample;
use crate::rng::{index, normal_tensor, sample_without_replacement, stream, uniform, DetRng, Stream};
use crate::tensor::Tensor;
use crate::text::TextCondition;
use crate::vae::{reparameterize, LatentPosterior, MotionVae};

/// Adam with `(beta1, beta2)` moments and bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.values().iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                found: grads.len(),
            });
        }
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (k, p) in params.values_mut().iter_mut().enumerate() {
            let Some(g) = &grads[k] else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / (libm::sqrt(*v / c2) + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup, then a step decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_iters: usize,
    pub decay_iter: Option<usize>,
    pub decay_factor: f64,
}

impl LrSchedule {
    pub fn at(&self, iter: usize) -> f64 {
        let mut lr = self.base;
        if iter < self.warmup_iters {
            lr *= (iter + 1) as f64 / self.warmup_iters as f64;
        }
        if self.decay_iter.is_some_and(|d| iter >= d) {
            lr *= self.decay_factor;
        }
        lr
    }
}

/// Exponential moving average of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: Vec<Tensor>,
    pub decay: f64,
}

impl EmaState {
    pub fn new(params: &ParamStore, decay: f64) -> Self {
        Self {
            shadow: params.values().to_vec(),
            decay,
        }
    }

    /// Copies the averaged values into `params`.
    pub fn apply(&self, params: &mut ParamStore) {
        for (p, s) in params.values_mut().iter_mut().zip(&self.shadow) {
            *p = s.clone();
        }
    }
}

/// `shadow <- decay * shadow + (1 - decay) * param`.
pub fn ema_update(params: &ParamStore, ema: &mut EmaState) -> Result<()> {
    if params.len() != ema.shadow.len() {
        return Err(Error::DimensionMismatch {
            expected: ema.shadow.len(),
            found: params.len(),
        });
    }
    let d = ema.decay;
    for (s, p) in ema.shadow.iter_mut().zip(params.values()) {
        if s.shape() != p.shape() {
            return Err(Error::ShapeMismatch("EMA shadow shape".into()));
        }
        for (s, p) in s.data_mut().iter_mut().zip(p.data()) {
            *s = d * *s + (1.0 - d) * p;
        }
    }
    Ok(())
}

/// Number of masked positions for a draw `u` in `[0, 1)`.
pub fn train_mask_count(n: usize, u: f64) -> usize {
    let r = libm::cos(FRAC_PI_2 * u);
    (libm::ceil(r * n as f64) as usize).clamp(1, n)
}

/// Random training mask with ratio `cos(pi/2 * u)`, `u ~ U(0, 1)`.
pub fn sample_train_mask(n: usize, rng: &mut DetRng) -> Vec<bool> {
    let k = train_mask_count(n, uniform(rng));
    let mut mask = alloc::vec![false; n];
    for p in sample_without_replacement(rng, n, k) {
        mask[p] = true;
    }
    mask
}

fn global_norm(grads: &[Option<Tensor>]) -> f64 {
    libm::sqrt(grads.iter().flatten().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum())
}

/// Rescales gradients so their global norm is at most `max`.
pub fn clip_grad_norm(grads: &mut [Option<Tensor>], max: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max && norm > 0.0 {
        let k = max / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Training crop length; a multiple of the downsampling factor.
    pub crop_frames: usize,
    pub lr: LrSchedule,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl VaeTrainConfig {
    pub fn full_scale() -> Self {
        Self {
            iterations: 300_000,
            batch_size: 256,
            crop_frames: 64,
            lr: LrSchedule {
                base: 5e-5,
                warmup_iters: 0,
                decay_iter: None,
                decay_factor: 1.0,
            },
            grad_clip: None,
            seed: 0,
        }
    }

    pub fn toy() -> Self {
        Self {
            iterations: 4000,
            batch_size: 32,
            crop_frames: 24,
            lr: LrSchedule {
                base: 2e-3,
                warmup_iters: 100,
                decay_iter: Some(3200),
                decay_factor: 0.1,
            },
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeStepStats {
    pub total: f64,
    pub nll: f64,
    pub kl: f64,
    pub velocity: f64,
    /// Mean L1 reconstruction error on the batch.
    pub recon_l1: f64,
    pub grad_norm: f64,
}

/// One optimizer step on `batch` stacked normalized crops of `len` frames.
#[allow(clippy::too_many_arguments)]
pub fn vae_train_step(
    vae: &mut MotionVae,
    adam: &mut Adam,
    x: &Tensor,
    batch: usize,
    len: usize,
    noise: &Tensor,
    lr: f64,
    grad_clip: Option<f64>,
) -> Result<VaeStepStats> {
    let (stats, mut grads) = {
        let mut g = Graph::with_params(&vae.params);
        let terms = vae.loss_graph(&mut g, x, batch, len, noise);
        let recon_l1 = g.value(terms.recon).zip_map(x, |a, b| (a - b).abs()).mean();
        let stats = VaeStepStats {
            total: g.value(terms.total).item(),
            nll: g.value(terms.nll).item(),
            kl: g.value(terms.kl).item(),
            velocity: g.value(terms.velocity).item(),
            recon_l1,
            grad_norm: 0.0,
        };
        (stats, g.backward(terms.total).into_param_grads())
    };
    if !stats.total.is_finite() {
        return Err(Error::NonFinite("VAE loss"));
    }
    let grad_norm = match grad_clip {
        Some(m) => clip_grad_norm(&mut grads, m),
        None => global_norm(&grads),
    };
    adam.step(&mut vae.params, &grads, lr)?;
    Ok(VaeStepStats { grad_norm, ..stats })
}

/// Random fixed-length crops from normalized clips, stacked row-wise.
pub fn sample_crops(clips: &[Tensor], batch: usize, len: usize, rng: &mut DetRng) -> Result<Tensor> {
    let eligible: Vec<&Tensor> = clips.iter().filter(|c| c.rows() >= len).collect();
    if eligible.is_empty() {
        return Err(Error::ClipTooShort {
            frames: clips.iter().map(Tensor::rows).max().unwrap_or(0),
            required: len,
        });
    }
    let parts: Vec<Tensor> = (0..batch)
        .map(|_| {
            let c = eligible[index(rng, eligible.len())];
            let s = index(rng, c.rows() - len + 1);
            c.slice_rows(s, s + len)
        })
        .collect();
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat_rows(&refs)
}

/// Trains the VAE on normalized clips; `log` sees every step's statistics.
pub fn train_vae(
    vae: &mut MotionVae,
    clips: &[Tensor],
    cfg: &VaeTrainConfig,
    log: &mut dyn FnMut(usize, &VaeStepStats),
) -> Result<()> {
    let l = vae.downsample_factor();
    if cfg.crop_frames == 0 || !cfg.crop_frames.is_multiple_of(l) {
        return Err(Error::InvalidConfig(alloc::format!("crop length must be a positive multiple of {l}")));
    }
    let mut adam = Adam::new(&vae.params);
    let tokens = cfg.crop_frames / l;
    for it in 0..cfg.iterations {
        let x = sample_crops(clips, cfg.batch_size, cfg.crop_frames, &mut stream(cfg.seed, Stream::TrainBatch, it as u64, 0))?;
        let noise = normal_tensor(
            &mut stream(cfg.seed, Stream::Reparam, it as u64, 0),
            cfg.batch_size * tokens,
            vae.latent_width(),
        );
        let stats = vae_train_step(vae, &mut adam, &x, cfg.batch_size, cfg.crop_frames, &noise, cfg.lr.at(it), cfg.grad_clip)?;
        log(it, &stats);
    }
    Ok(())
}

/// Posteriors of every clip, for stage-two training.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCache {
    pub entries: Vec<LatentPosterior>,
    pub captions: Vec<String>,
    pub downsample_factor: usize,
}

impl LatentCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A fresh reparameterized sample of entry `k`.
    pub fn draw(&self, k: usize, rng: &mut DetRng) -> Result<Tensor> {
        let p = &self.entries[k];
        let noise = normal_tensor(rng, p.mu.rows(), p.mu.cols());
        Ok(reparameterize(p, &noise, self.downsample_factor)?.tokens)
    }
}

/// Encodes every clip (un-normalized) through the codec.
pub fn latent_cache_build(
    clips: &[MotionSequence],
    captions: &[String],
    codec: &MotionCodec,
    stats: &NormStats,
) -> Result<LatentCache> {
    if clips.len() != captions.len() {
        return Err(Error::DimensionMismatch {
            expected: clips.len(),
            found: captions.len(),
        });
    }
    if clips.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let entries = clips
        .iter()
        .map(|c| codec.posterior(&normalize(c, stats)?.frames))
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentCache {
        entries,
        captions: captions.to_vec(),
        downsample_factor: codec.downsample_factor(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MadTrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub ema_decay: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl MadTrainConfig {
    pub fn full_scale() -> Self {
        Self {
            iterations: 600 * 100,
            batch_size: 64,
            lr: LrSchedule {
                base: 1e-4,
                warmup_iters: 2000,
                decay_iter: Some(400 * 100),
                decay_factor: 0.1,
            },
            ema_decay: 0.999,
            grad_clip: None,
            seed: 0,
        }
    }

    pub fn toy() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 64,
            lr: LrSchedule {
                base: 1e-3,
                warmup_iters: 200,
                decay_iter: Some(8000),
                decay_factor: 0.1,
            },
            ema_decay: 0.995,
            grad_clip: Some(1.0),
            seed: 0,
        }
    }
}

/// One training item: clean tokens and their caption.
#[derive(Debug, Clone, PartialEq)]
pub struct MadSample {
    pub latents: Tensor,
    pub text: TextCondition,
}

/// Randomness consumed by one item of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemDraws {
    pub mask: Vec<bool>,
    pub drop_text: bool,
    /// One step per masked position, in position order.
    pub t: Vec<usize>,
    pub eps: Tensor,
}

/// Mask, condition dropout, steps, and noise for item `item` at `iter`.
pub fn item_draws(seed: u64, iter: usize, item: usize, n: usize, width: usize, t_diff: usize, p_drop: f64) -> ItemDraws {
    let (a, b) = (iter as u64, item as u64);
    let mask = sample_train_mask(n, &mut stream(seed, Stream::TrainMask, a, b));
    let drop_text = uniform(&mut stream(seed, Stream::Dropout, a, b)) < p_drop;
    let m = mask.iter().filter(|x| **x).count();
    let mut rng = stream(seed, Stream::DiffusionStep, a, b);
    let t = (0..m).map(|_| index(&mut rng, t_diff)).collect();
    let eps = normal_tensor(&mut rng, m, width);
    ItemDraws {
        mask,
        drop_text,
        t,
        eps,
    }
}

/// Joint transformer + denoiser loss over masked positions of the batch and
/// its parameter gradients.
pub fn mad_loss_and_grads(model: &MadModel, batch: &[MadSample], draws: &[ItemDraws]) -> Result<(f64, Vec<Option<Tensor>>)> {
    if batch.len() != draws.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            found: draws.len(),
        });
    }
    let null = TextCondition::Null;
    let requests: Vec<CondRequest> = batch
        .iter()
        .zip(draws)
        .map(|(s, d)| CondRequest {
            latents: &s.latents,
            mask: &d.mask,
            text: if d.drop_text { &null } else { &s.text },
        })
        .collect();
    let mut rows = Vec::new();
    let mut z0 = Vec::new();
    let mut ts = Vec::new();
    let mut eps = Vec::new();
    let mut offset = 0;
    for (s, d) in batch.iter().zip(draws) {
        let mut k = 0;
        for (p, &m) in d.mask.iter().enumerate() {
            if m {
                rows.push(offset + p);
                z0.push(s.latents.row(p).to_vec());
                eps.push(d.eps.row(k).to_vec());
                ts.push(d.t[k]);
                k += 1;
            }
        }
        offset += s.latents.rows();
    }
    if rows.is_empty() {
        return Err(Error::NoMaskedPositions);
    }
    let z0 = Tensor::from_rows(&z0)?;
    let mut g = Graph::with_params(&model.params);
    let cond = model.condition_graph(&mut g, &requests)?;
    let cond = g.select_rows(cond, &rows);
    let target = g.constant(z0.clone());
    let pred = match &model.denoiser {
        Denoiser::Diffusion(head) => {
            let zt = q_sample(&z0, &ts, &Tensor::from_rows(&eps)?, &model.schedule)?;
            let zt = g.constant(zt);
            head.forward_graph(&mut g, zt, &ts, cond)
        }
        Denoiser::Regression(lin) => lin.forward(&mut g, cond),
    };
    let loss = diffusion_loss_graph(&mut g, pred, target, model.config.loss);
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite("diffusion loss"));
    }
    Ok((value, g.backward(loss).into_param_grads()))
}

/// State carried across stage-two steps.
#[derive(Debug, Clone)]
pub struct MadTrainer {
    pub config: MadTrainConfig,
    pub adam: Adam,
    pub ema: EmaState,
    pub iter: usize,
}

impl MadTrainer {
    pub fn new(model: &MadModel, config: MadTrainConfig) -> Self {
        Self {
            config,
            adam: Adam::new(&model.params),
            ema: EmaState::new(&model.params, config.ema_decay),
            iter: 0,
        }
    }

    /// Samples masks/dropout/noise, backpropagates through both networks,
    /// steps the optimizer, and updates the EMA.
    pub fn step(&mut self, model: &mut MadModel, batch: &[MadSample]) -> Result<f64> {
        let cfg = &model.config;
        let draws: Vec<ItemDraws> = batch
            .iter()
            .enumerate()
            .map(|(k, s)| {
                item_draws(
                    self.config.seed,
                    self.iter,
                    k,
                    s.latents.rows(),
                    s.latents.cols(),
                    cfg.t_diff,
                    cfg.cond_dropout,
                )
            })
            .collect();
        let (loss, mut grads) = mad_loss_and_grads(model, batch, &draws)?;
        if let Some(m) = self.config.grad_clip {
            clip_grad_norm(&mut grads, m);
        }
        self.adam.step(&mut model.params, &grads, self.config.lr.at(self.iter))?;
        ema_update(&model.params, &mut self.ema)?;
        self.iter += 1;
        Ok(loss)
    }
}

/// Trains on fresh samples from the cache and leaves the EMA weights in `model`.
pub fn train_mad(
    model: &mut MadModel,
    cache: &LatentCache,
    cfg: &MadTrainConfig,
    log: &mut dyn FnMut(usize, f64),
) -> Result<MadTrainer> {
    if cache.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut trainer = MadTrainer::new(model, *cfg);
    for it in 0..cfg.iterations {
        let mut pick = stream(cfg.seed, Stream::TrainBatch, it as u64, 0);
        let batch = (0..cfg.batch_size)
            .map(|k| {
                let e = index(&mut pick, cache.len());
                let latents = cache.draw(e, &mut stream(cfg.seed, Stream::Reparam, it as u64, k as u64))?;
                Ok(MadSample {
                    latents,
                    text: TextCondition::Caption(cache.captions[e].clone()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = trainer.step(model, &batch)?;
        log(it, loss);
    }
    trainer.ema.apply(&mut model.params);
    Ok(trainer)
}
