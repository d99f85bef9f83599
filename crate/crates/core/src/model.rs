//! The masked autoregressive model: text encoder, latent transformer, and a
//! per-position denoiser sharing one parameter store.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::head::{DiffusionHead, DiffusionLossKind, HeadConfig, HeadPredictor};
use crate::nn::{Linear, ParamStore};
use crate::noise::{make_schedule, NoiseSchedule, ScheduleKind};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;
use crate::text::{TextCondition, TextEncoderConfig, ToyTextEncoder};
use crate::transformer::{LatentTransformer, TransformerConfig, TransformerItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserKind {
    /// Diffusion head trained with the x0 diffusion loss.
    Diffusion,
    /// A linear read-out regressing the clean token directly.
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MadConfig {
    pub transformer: TransformerConfig,
    pub head: HeadConfig,
    pub text: TextEncoderConfig,
    pub denoiser: DenoiserKind,
    pub t_diff: usize,
    pub loss: DiffusionLossKind,
    pub cond_dropout: f64,
}

impl MadConfig {
    pub fn full_scale(latent_width: usize) -> Self {
        let text = TextEncoderConfig {
            width: 512,
            hash_buckets: 64,
        };
        let transformer = TransformerConfig::full_scale(latent_width, text.width);
        Self {
            transformer,
            head: HeadConfig::new(latent_width, transformer.c_cond),
            text,
            denoiser: DenoiserKind::Diffusion,
            t_diff: 50,
            loss: DiffusionLossKind::Mse,
            cond_dropout: 0.1,
        }
    }

    pub fn toy(latent_width: usize, max_tokens: usize) -> Self {
        let text = TextEncoderConfig::default();
        let transformer = TransformerConfig::toy(latent_width, text.width, max_tokens);
        Self {
            transformer,
            head: HeadConfig::new(latent_width, transformer.c_cond),
            text,
            ..Self::full_scale(latent_width)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        self.head.validate()?;
        if self.head.latent_width != self.transformer.latent_width || self.head.cond_width != self.transformer.c_cond {
            return Err(Error::InvalidConfig("head and transformer widths disagree".into()));
        }
        if self.text.width != self.transformer.text_width {
            return Err(Error::InvalidConfig("text width disagrees with transformer".into()));
        }
        if self.t_diff == 0 {
            return Err(Error::InvalidConfig("diffusion steps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.cond_dropout) {
            return Err(Error::InvalidConfig("condition dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Denoiser {
    Diffusion(DiffusionHead),
    Regression(Linear),
}

#[derive(Debug, Clone)]
pub struct MadModel {
    pub config: MadConfig,
    pub params: ParamStore,
    pub text: ToyTextEncoder,
    pub transformer: LatentTransformer,
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
}

/// One sequence's transformer input.
#[derive(Debug, Clone, Copy)]
pub struct CondRequest<'a> {
    pub latents: &'a Tensor,
    pub mask: &'a [bool],
    pub text: &'a TextCondition,
}

impl MadModel {
    /// `vocab` must be sorted and deduplicated (see [`crate::text::tokenize`]).
    pub fn new(config: MadConfig, vocab: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Init, 0x3AD, 0);
        let mut params = ParamStore::default();
        let text = ToyTextEncoder::with_vocab(&mut params, config.text, vocab, &mut rng);
        let transformer = LatentTransformer::new(&mut params, config.transformer, &mut rng)?;
        let denoiser = match config.denoiser {
            DenoiserKind::Diffusion => Denoiser::Diffusion(DiffusionHead::new(&mut params, config.head, &mut rng)?),
            DenoiserKind::Regression => Denoiser::Regression(Linear::new(
                &mut params,
                "regress.out",
                config.transformer.c_cond,
                config.transformer.latent_width,
                &mut rng,
            )),
        };
        let schedule = make_schedule(config.t_diff, ScheduleKind::Cosine)?;
        Ok(Self {
            config,
            params,
            text,
            transformer,
            denoiser,
            schedule,
        })
    }

    pub fn latent_width(&self) -> usize {
        self.config.transformer.latent_width
    }

    pub fn max_tokens(&self) -> usize {
        self.config.transformer.max_positions - 1
    }

    /// Stacked condition tokens for every position of every request.
    pub fn condition_graph(&self, g: &mut Graph, requests: &[CondRequest]) -> Result<Var> {
        let mut items = Vec::with_capacity(requests.len());
        for r in requests {
            let text = self.text.encode_graph(g, r.text)?;
            items.push(TransformerItem {
                latents: r.latents,
                mask: r.mask,
                text,
            });
        }
        self.transformer.forward_graph(g, &items)
    }

    /// Per-request condition tokens.
    pub fn condition_tokens(&self, requests: &[CondRequest]) -> Result<Vec<Tensor>> {
        let mut g = Graph::with_params(&self.params);
        let out = self.condition_graph(&mut g, requests)?;
        let all = g.value(out);
        let mut start = 0;
        Ok(requests
            .iter()
            .map(|r| {
                let n = r.latents.rows();
                start += n;
                all.slice_rows(start - n, start)
            })
            .collect())
    }

    pub fn head_predictor(&self) -> Option<HeadPredictor<'_>> {
        match &self.denoiser {
            Denoiser::Diffusion(head) => Some(HeadPredictor {
                head,
                params: &self.params,
            }),
            Denoiser::Regression(_) => None,
        }
    }

    /// Direct read-out for the regression denoiser.
    pub fn regress(&self, cond: &Tensor) -> Result<Tensor> {
        match &self.denoiser {
            Denoiser::Regression(lin) => {
                let mut g = Graph::with_params(&self.params);
                let c = g.constant(cond.clone());
                let out = lin.forward(&mut g, c);
                Ok(g.value(out).clone())
            }
            Denoiser::Diffusion(_) => Err(Error::InvalidConfig("model uses a diffusion head".into())),
        }
    }
}
