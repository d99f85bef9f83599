//! Masked autoregressive generation over latent tokens.
//!
//! Every job starts with all positions masked, except positions pinned by
//! keyframes or preserved source windows. Each of the `R` steps runs the
//! transformer (twice under guidance), picks a set of positions to resolve,
//! samples their tokens with the denoiser, and feeds them back as clean
//! inputs for the next step.
//!
//! Randomness per job comes from its own seed: position selection is keyed
//! by step, initial and step noise by latent position. Turning guidance on or
//! off therefore never changes which noise a position sees.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::codec::MotionCodec;
use crate::error::{Error, Result};
use crate::model::{CondRequest, MadModel};
use crate::motion::{denormalize, normalize, LayoutDescriptor, MotionSequence, NormStats, MAX_FRAMES};
use crate::noise::{sample_tokens, RowNoise, SamplerParams};
use crate::rng::{sample_without_replacement, stream, DetRng, Stream};
use crate::tensor::Tensor;
use crate::text::TextCondition;
use crate::transformer::cfg_combine;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    /// Cosine schedule, random positions: sparse keyframes first.
    Keyframe,
    /// Linear schedule, left to right.
    Linear,
    /// Linear schedule, from both ends inwards.
    Bilinear,
}

impl InferenceMode {
    pub const ALL: [InferenceMode; 3] = [InferenceMode::Keyframe, InferenceMode::Linear, InferenceMode::Bilinear];

    pub fn name(self) -> &'static str {
        match self {
            InferenceMode::Keyframe => "keyframe",
            InferenceMode::Linear => "linear",
            InferenceMode::Bilinear => "bilinear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Fraction of positions still masked after step `i` of `r`.
pub fn mask_ratio(mode: InferenceMode, i: usize, r: usize) -> f64 {
    if i == 0 {
        return 1.0;
    }
    if i >= r {
        return 0.0;
    }
    let x = i as f64 / r as f64;
    match mode {
        InferenceMode::Keyframe => libm::cos(FRAC_PI_2 * x),
        InferenceMode::Linear | InferenceMode::Bilinear => 1.0 - x,
    }
}

/// Positions to resolve at step `i`, ascending.
///
/// The step leaves `ceil(mask_ratio(i + 1) * N)` positions masked, resolving
/// at least one while any remain.
pub fn select_positions(mode: InferenceMode, i: usize, r: usize, resolved: &[bool], rng: &mut DetRng) -> Vec<usize> {
    let open: Vec<usize> = (0..resolved.len()).filter(|&p| !resolved[p]).collect();
    let u = open.len();
    if u == 0 {
        return Vec::new();
    }
    // Guard against ratio * N landing a hair above an integer.
    let keep = libm::ceil(mask_ratio(mode, i + 1, r) * resolved.len() as f64 - 1e-9).max(0.0) as usize;
    let count = u.saturating_sub(keep).clamp(1, u);
    let mut picked: Vec<usize> = match mode {
        InferenceMode::Keyframe => sample_without_replacement(rng, u, count)
            .into_iter()
            .map(|k| open[k])
            .collect(),
        InferenceMode::Linear => open[..count].to_vec(),
        InferenceMode::Bilinear => {
            let (mut lo, mut hi) = (0, u);
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                if out.len() % 2 == 0 {
                    out.push(open[lo]);
                    lo += 1;
                } else {
                    hi -= 1;
                    out.push(open[hi]);
                }
            }
            out
        }
    };
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceParams {
    /// Autoregressive step count `R`.
    pub steps: usize,
    /// Guidance scale `s_c`.
    pub cfg_scale: f64,
    /// When false only the conditional pass runs (no unconditional branch).
    pub guidance: bool,
    pub mode: InferenceMode,
    pub sampler: SamplerParams,
    pub target_frames: usize,
}

impl Default for InferenceParams {
    fn default() -> Self {
        Self {
            steps: 9,
            cfg_scale: 3.0,
            guidance: true,
            mode: InferenceMode::Keyframe,
            sampler: SamplerParams::ddpm(),
            target_frames: MAX_FRAMES,
        }
    }
}

impl InferenceParams {
    pub fn validate(&self, l: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("autoregressive steps must be at least 1".into()));
        }
        if self.target_frames < l {
            return Err(Error::SequenceTooShort {
                frames: self.target_frames,
                factor: l,
            });
        }
        if self.target_frames > MAX_FRAMES {
            return Err(Error::InvalidConfig(alloc::format!(
                "target length {} exceeds {MAX_FRAMES} frames",
                self.target_frames
            )));
        }
        if !self.cfg_scale.is_finite() {
            return Err(Error::NonFinite("guidance scale"));
        }
        Ok(())
    }
}

/// User poses keyed by frame index, in un-normalized motion space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyframeSet {
    pub entries: BTreeMap<usize, Vec<f64>>,
}

impl KeyframeSet {
    pub fn insert(&mut self, frame: usize, pose: Vec<f64>) {
        self.entries.insert(frame, pose);
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationState {
    pub latents: Tensor,
    pub resolved: Vec<bool>,
    pub pinned: Vec<bool>,
    /// Step at which each position was resolved; `None` for pinned ones.
    pub resolved_at: Vec<Option<usize>>,
}

impl GenerationState {
    pub fn new(tokens: usize, width: usize) -> Self {
        Self {
            latents: Tensor::zeros(tokens, width),
            resolved: alloc::vec![false; tokens],
            pinned: alloc::vec![false; tokens],
            resolved_at: alloc::vec![None; tokens],
        }
    }

    pub fn len(&self) -> usize {
        self.resolved.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resolved.is_empty()
    }

    pub fn unresolved(&self) -> usize {
        self.resolved.iter().filter(|r| !**r).count()
    }

    pub fn pin(&mut self, pos: usize, token: &[f64]) {
        self.latents.row_mut(pos).copy_from_slice(token);
        self.resolved[pos] = true;
        self.pinned[pos] = true;
    }
}

/// Encodes each keyframe (replicated over its token window) and pins it.
pub fn inject_keyframes(
    state: &mut GenerationState,
    keyframes: &KeyframeSet,
    codec: &MotionCodec,
    stats: &NormStats,
    layout: LayoutDescriptor,
    fps: f32,
) -> Result<()> {
    let l = codec.downsample_factor();
    let n = state.len();
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    for (&frame, pose) in &keyframes.entries {
        if pose.len() != layout.d {
            return Err(Error::DimensionMismatch {
                expected: layout.d,
                found: pose.len(),
            });
        }
        let pos = frame / l;
        if pos >= n {
            return Err(Error::KeyframeOutOfRange { frame, frames: n * l });
        }
        if let Some(&first) = owner.get(&pos) {
            return Err(Error::KeyframeCollision {
                first,
                second: frame,
                position: pos,
            });
        }
        owner.insert(pos, frame);
    }
    for (&frame, pose) in &keyframes.entries {
        let window: Vec<f64> = (0..l).flat_map(|_| pose.iter().copied()).collect();
        let seq = MotionSequence::new(Tensor::from_vec(l, layout.d, window)?, fps, layout)?;
        let token = codec.encode_mean(&normalize(&seq, stats)?.frames)?;
        state.pin(frame / l, token.row(0));
    }
    Ok(())
}

/// Trained components plus the data conventions needed to decode.
#[derive(Debug, Clone, Copy)]
pub struct Pipeline<'a> {
    pub codec: &'a MotionCodec,
    pub model: &'a MadModel,
    pub stats: &'a NormStats,
    pub layout: LayoutDescriptor,
    pub fps: f32,
}

/// A generation in progress.
#[derive(Debug, Clone)]
pub struct Job {
    pub state: GenerationState,
    pub text: TextCondition,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateRequest {
    pub text: TextCondition,
    pub keyframes: Option<KeyframeSet>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub motion: MotionSequence,
    pub state: GenerationState,
}

impl Pipeline<'_> {
    fn check(&self) -> Result<()> {
        if self.codec.latent_width() != self.model.latent_width() {
            return Err(Error::DimensionMismatch {
                expected: self.model.latent_width(),
                found: self.codec.latent_width(),
            });
        }
        if self.codec.d() != self.layout.d || self.stats.d() != self.layout.d {
            return Err(Error::DimensionMismatch {
                expected: self.layout.d,
                found: self.codec.d(),
            });
        }
        Ok(())
    }

    /// Resolves every open position of every job.
    pub fn resolve(&self, jobs: &mut [Job], params: &InferenceParams) -> Result<()> {
        self.check()?;
        if params.steps == 0 {
            return Err(Error::InvalidConfig("autoregressive steps must be at least 1".into()));
        }
        let null = TextCondition::Null;
        for i in 0..params.steps {
            let active: Vec<usize> = (0..jobs.len()).filter(|&j| jobs[j].state.unresolved() > 0).collect();
            if active.is_empty() {
                break;
            }
            let masks: Vec<Vec<bool>> = active
                .iter()
                .map(|&j| jobs[j].state.resolved.iter().map(|r| !r).collect())
                .collect();
            let mut requests = Vec::with_capacity(2 * active.len());
            for (k, &j) in active.iter().enumerate() {
                let st = &jobs[j].state;
                requests.push(CondRequest {
                    latents: &st.latents,
                    mask: &masks[k],
                    text: &jobs[j].text,
                });
                if params.guidance {
                    requests.push(CondRequest {
                        latents: &st.latents,
                        mask: &masks[k],
                        text: &null,
                    });
                }
            }
            let tokens = self.model.condition_tokens(&requests)?;
            let mut cond_rows = Vec::new();
            let mut streams = Vec::new();
            let mut targets = Vec::new();
            for (k, &j) in active.iter().enumerate() {
                let cond = if params.guidance {
                    cfg_combine(&tokens[2 * k], &tokens[2 * k + 1], params.cfg_scale)?
                } else {
                    tokens[k].clone()
                };
                let job = &jobs[j];
                let mut rng = stream(job.seed, Stream::Selection, i as u64, 0);
                let picked = select_positions(params.mode, i, params.steps, &job.state.resolved, &mut rng);
                for p in picked {
                    cond_rows.push(cond.row(p).to_vec());
                    streams.push(RowNoise {
                        init: stream(job.seed, Stream::InitialNoise, p as u64, 0),
                        step: stream(job.seed, Stream::SamplerNoise, p as u64, 0),
                    });
                    targets.push((j, p));
                }
            }
            let cond = Tensor::from_rows(&cond_rows)?;
            let sampled = match self.model.head_predictor() {
                Some(pred) => sample_tokens(&cond, &params.sampler, &self.model.schedule, &pred, &mut streams)?,
                None => self.model.regress(&cond)?,
            };
            for (r, &(j, p)) in targets.iter().enumerate() {
                let st = &mut jobs[j].state;
                st.latents.row_mut(p).copy_from_slice(sampled.row(r));
                st.resolved[p] = true;
                st.resolved_at[p] = Some(i);
            }
        }
        Ok(())
    }

    /// Decodes latents and maps them back to motion space.
    pub fn decode(&self, latents: &Tensor) -> Result<MotionSequence> {
        let frames = self.codec.decode(latents)?;
        denormalize(&MotionSequence::new(frames, self.fps, self.layout)?, self.stats)
    }

    pub fn encode_mean(&self, motion: &MotionSequence) -> Result<Tensor> {
        self.codec.encode_mean(&normalize(motion, self.stats)?.frames)
    }

    fn new_job(&self, req: &GenerateRequest, params: &InferenceParams) -> Result<Job> {
        let n = self.codec.tokens_for(params.target_frames)?;
        let mut state = GenerationState::new(n, self.codec.latent_width());
        if let Some(kf) = &req.keyframes {
            inject_keyframes(&mut state, kf, self.codec, self.stats, self.layout, self.fps)?;
        }
        Ok(Job {
            state,
            text: req.text.clone(),
            seed: req.seed,
        })
    }

    /// Generates several motions with shared inference settings. Each result
    /// equals what a single-request call would produce.
    pub fn generate_batch(&self, requests: &[GenerateRequest], params: &InferenceParams) -> Result<Vec<Generated>> {
        params.validate(self.codec.downsample_factor())?;
        let mut jobs = requests
            .iter()
            .map(|r| self.new_job(r, params))
            .collect::<Result<Vec<_>>>()?;
        self.resolve(&mut jobs, params)?;
        jobs.into_iter()
            .map(|job| {
                Ok(Generated {
                    motion: self.decode(&job.state.latents)?,
                    state: job.state,
                })
            })
            .collect()
    }

    pub fn generate(&self, request: &GenerateRequest, params: &InferenceParams) -> Result<Generated> {
        Ok(self
            .generate_batch(core::slice::from_ref(request), params)?
            .pop()
            .expect("one result"))
    }

    /// Regenerates the windows not marked in `preserve` (one flag per source
    /// frame, constant within each token window).
    pub fn edit(
        &self,
        source: &MotionSequence,
        preserve: &[bool],
        text: &TextCondition,
        params: &InferenceParams,
        seed: u64,
    ) -> Result<Generated> {
        if preserve.len() != source.len() {
            return Err(Error::DimensionMismatch {
                expected: source.len(),
                found: preserve.len(),
            });
        }
        let l = self.codec.downsample_factor();
        let n = self.codec.tokens_for(source.len())?;
        for w in 0..n {
            let win = &preserve[w * l..(w + 1) * l];
            if win.iter().any(|&p| p != win[0]) {
                return Err(Error::MixedEditWindow { window: w });
            }
        }
        let mu = self.encode_mean(source)?;
        let mut state = GenerationState::new(n, self.codec.latent_width());
        for w in 0..n {
            if preserve[w * l] {
                state.pin(w, mu.row(w));
            }
        }
        let mut jobs = [Job {
            state,
            text: text.clone(),
            seed,
        }];
        self.resolve(&mut jobs, params)?;
        let [job] = jobs;
        Ok(Generated {
            motion: self.decode(&job.state.latents)?,
            state: job.state,
        })
    }

    /// Joins two clips with `transition_frames` generated frames, conditioned
    /// on the last and first `context_frames` of the clips.
    #[allow(clippy::too_many_arguments)]
    pub fn stitch(
        &self,
        a: &MotionSequence,
        b: &MotionSequence,
        transition_frames: usize,
        context_frames: usize,
        text: &TextCondition,
        params: &InferenceParams,
        seed: u64,
    ) -> Result<(MotionSequence, Option<GenerationState>)> {
        let l = self.codec.downsample_factor();
        if !transition_frames.is_multiple_of(l) || !context_frames.is_multiple_of(l) {
            return Err(Error::InvalidConfig(alloc::format!(
                "transition and context lengths must be multiples of {l}"
            )));
        }
        if transition_frames == 0 {
            return Ok((MotionSequence::concat(&[a, b])?, None));
        }
        for clip in [a, b] {
            if clip.len() < context_frames {
                return Err(Error::ClipTooShort {
                    frames: clip.len(),
                    required: context_frames,
                });
            }
        }
        let (ctx, gap) = (context_frames / l, transition_frames / l);
        let mut state = GenerationState::new(2 * ctx + gap, self.codec.latent_width());
        if ctx > 0 {
            let tail = self.encode_mean(&a.slice(a.len() - context_frames, a.len()))?;
            let head = self.encode_mean(&b.slice(0, context_frames))?;
            for p in 0..ctx {
                state.pin(p, tail.row(p));
                state.pin(ctx + gap + p, head.row(p));
            }
        }
        let mut jobs = [Job {
            state,
            text: text.clone(),
            seed,
        }];
        self.resolve(&mut jobs, params)?;
        let [job] = jobs;
        let decoded = self.decode(&job.state.latents)?;
        let transition = decoded.slice(context_frames, context_frames + transition_frames);
        Ok((MotionSequence::concat(&[a, &transition, b])?, Some(job.state)))
    }
}
