//! Flat `key = value` run configuration.
//!
//! Every hyperparameter has a key and a default. A config file may override
//! defaults and command-line flags override both. Unknown keys and values of
//! the wrong type are rejected when they are set, so a resolved config is
//! always complete and valid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use momadiff_core::evaluator::EvaluatorConfig;
use momadiff_core::head::{DiffusionLossKind, HeadConfig};
use momadiff_core::inference::{InferenceMode, InferenceParams};
use momadiff_core::model::{DenoiserKind, MadConfig};
use momadiff_core::motion::{LayoutDescriptor, ToyCorpusSpec, MAX_FRAMES};
use momadiff_core::noise::{SamplerKind, SamplerParams};
use momadiff_core::text::TextEncoderConfig;
use momadiff_core::training::{LrSchedule, MadTrainConfig, VaeTrainConfig};
use momadiff_core::transformer::TransformerConfig;
use momadiff_core::vae::VaeConfig;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
enum Kind {
    Int,
    /// Integer or `none`.
    OptInt,
    /// Integer or `auto`.
    AutoInt,
    Real,
    /// Real or `none`.
    OptReal,
    Bool,
    Choice(&'static [&'static str]),
}

const KEYS: &[(&str, &str, Kind)] = &[
    ("seed", "0", Kind::Int),
    ("threads", "1", Kind::Int),
    ("data.n_classes", "8", Kind::Int),
    ("data.n_per_class", "250", Kind::Int),
    ("data.joint_count", "8", Kind::Int),
    ("data.min_frames", "24", Kind::Int),
    ("data.max_frames", "64", Kind::Int),
    ("data.fps", "20", Kind::Real),
    ("data.seed", "1", Kind::Int),
    ("data.test_fraction", "0.2", Kind::Real),
    ("vae.latent_width", "16", Kind::Int),
    ("vae.width", "128", Kind::Int),
    ("vae.res_layers", "1", Kind::Int),
    ("vae.down_layers", "2", Kind::Int),
    ("vae.w_kl", "1e-6", Kind::Real),
    ("vae.w_vel", "0.5", Kind::Real),
    ("vae.iterations", "4000", Kind::Int),
    ("vae.batch_size", "32", Kind::Int),
    ("vae.crop_frames", "24", Kind::Int),
    ("vae.lr", "2e-3", Kind::Real),
    ("vae.warmup_iters", "100", Kind::Int),
    ("vae.decay_iter", "3200", Kind::OptInt),
    ("vae.decay_factor", "0.1", Kind::Real),
    ("vae.grad_clip", "1.0", Kind::OptReal),
    ("mad.codec", "vae", Kind::Choice(&["vae", "windows"])),
    ("mad.window_frames", "4", Kind::Int),
    ("mad.denoiser", "diffusion", Kind::Choice(&["diffusion", "regression"])),
    ("mad.layers", "2", Kind::Int),
    ("mad.heads", "4", Kind::Int),
    ("mad.hidden", "64", Kind::Int),
    ("mad.c_cond", "64", Kind::Int),
    ("mad.ffn_mult", "4", Kind::Int),
    ("mad.text_width", "64", Kind::Int),
    ("mad.hash_buckets", "64", Kind::Int),
    ("mad.head_blocks", "4", Kind::Int),
    ("mad.head_width", "auto", Kind::AutoInt),
    ("mad.time_embed_dim", "auto", Kind::AutoInt),
    ("mad.t_diff", "50", Kind::Int),
    ("mad.loss", "mse", Kind::Choice(&["mse", "l2"])),
    ("mad.cond_dropout", "0.1", Kind::Real),
    ("mad.iterations", "10000", Kind::Int),
    ("mad.batch_size", "64", Kind::Int),
    ("mad.lr", "1e-3", Kind::Real),
    ("mad.warmup_iters", "200", Kind::Int),
    ("mad.decay_iter", "8000", Kind::OptInt),
    ("mad.decay_factor", "0.1", Kind::Real),
    ("mad.ema_decay", "0.995", Kind::Real),
    ("mad.grad_clip", "1.0", Kind::OptReal),
    ("infer.steps", "9", Kind::Int),
    ("infer.cfg", "3.0", Kind::Real),
    ("infer.guidance", "true", Kind::Bool),
    ("infer.mode", "keyframe", Kind::Choice(&["keyframe", "linear", "bilinear"])),
    ("infer.sampler", "ddpm", Kind::Choice(&["ddpm", "ddim"])),
    ("infer.ddim_steps", "50", Kind::Int),
    ("infer.eta", "0", Kind::Real),
    ("infer.length", "196", Kind::Int),
    ("eval.reps", "20", Kind::Int),
    ("eval.bootstrap", "1000", Kind::Int),
    ("eval.feature_dim", "64", Kind::Int),
    ("eval.hidden", "64", Kind::Int),
    ("eval.temperature", "0.1", Kind::Real),
    ("eval.iterations", "1500", Kind::Int),
    ("eval.batch_size", "64", Kind::Int),
    ("eval.lr", "1e-3", Kind::Real),
];

fn lookup(key: &str) -> Option<(&'static str, Kind)> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, kind)| (*d, *kind))
}

fn check(key: &str, value: &str, kind: Kind) -> Result<()> {
    let bad = || Error::Config(format!("{key}: invalid value {value:?}"));
    let int = |v: &str| v.parse::<u64>().map(|_| ()).map_err(|_| bad());
    let real = |v: &str| match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(()),
        _ => Err(bad()),
    };
    match kind {
        Kind::Int => int(value),
        Kind::OptInt if value == "none" => Ok(()),
        Kind::OptInt => int(value),
        Kind::AutoInt if value == "auto" => Ok(()),
        Kind::AutoInt => int(value),
        Kind::Real => real(value),
        Kind::OptReal if value == "none" => Ok(()),
        Kind::OptReal => real(value),
        Kind::Bool => value.parse::<bool>().map(|_| ()).map_err(|_| bad()),
        Kind::Choice(opts) if opts.contains(&value) => Ok(()),
        Kind::Choice(opts) => Err(Error::Config(format!("{key}: {value:?} is not one of {}", opts.join("|")))),
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect(),
        }
    }
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _, _)| *k)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (_, kind) = lookup(key).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        let value = value.trim();
        check(key, value, kind)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults, then `file`, then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = file {
            cfg.apply_file(p)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        out
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key {key} is not registered"))
    }

    pub fn usize(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated integer")
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.get(key).parse().expect("validated integer")
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated real")
    }

    pub fn bool(&self, key: &str) -> bool {
        self.get(key).parse().expect("validated bool")
    }

    fn opt_usize(&self, key: &str) -> Option<usize> {
        match self.get(key) {
            "none" | "auto" => None,
            v => Some(v.parse().expect("validated integer")),
        }
    }

    fn opt_f64(&self, key: &str) -> Option<f64> {
        match self.get(key) {
            "none" => None,
            v => Some(v.parse().expect("validated real")),
        }
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed")
    }

    pub fn corpus_spec(&self) -> ToyCorpusSpec {
        ToyCorpusSpec {
            n_classes: self.usize("data.n_classes"),
            n_per_class: self.usize("data.n_per_class"),
            joint_count: self.usize("data.joint_count"),
            length_range: (self.usize("data.min_frames"), self.usize("data.max_frames")),
            fps: self.f64("data.fps") as f32,
            seed: self.u64("data.seed"),
        }
    }

    pub fn vae_config(&self, layout: &LayoutDescriptor) -> VaeConfig {
        VaeConfig {
            latent_width: self.usize("vae.latent_width"),
            width: self.usize("vae.width"),
            res_layers: self.usize("vae.res_layers"),
            down_layers: self.usize("vae.down_layers"),
            w_kl: self.f64("vae.w_kl"),
            w_vel: self.f64("vae.w_vel"),
            ..VaeConfig::full_scale(layout)
        }
    }

    pub fn vae_train(&self) -> VaeTrainConfig {
        VaeTrainConfig {
            iterations: self.usize("vae.iterations"),
            batch_size: self.usize("vae.batch_size"),
            crop_frames: self.usize("vae.crop_frames"),
            lr: LrSchedule {
                base: self.f64("vae.lr"),
                warmup_iters: self.usize("vae.warmup_iters"),
                decay_iter: self.opt_usize("vae.decay_iter"),
                decay_factor: self.f64("vae.decay_factor"),
            },
            grad_clip: self.opt_f64("vae.grad_clip"),
            seed: self.seed(),
        }
    }

    pub fn denoiser(&self) -> DenoiserKind {
        match self.get("mad.denoiser") {
            "regression" => DenoiserKind::Regression,
            _ => DenoiserKind::Diffusion,
        }
    }

    pub fn uses_vae(&self) -> bool {
        self.get("mad.codec") == "vae"
    }

    /// Transformer capacity covers the longest supported clip.
    pub fn mad_config(&self, latent_width: usize, frames_per_token: usize) -> Result<MadConfig> {
        let text = TextEncoderConfig {
            width: self.usize("mad.text_width"),
            hash_buckets: self.usize("mad.hash_buckets"),
        };
        let transformer = TransformerConfig {
            layers: self.usize("mad.layers"),
            heads: self.usize("mad.heads"),
            hidden: self.usize("mad.hidden"),
            c_cond: self.usize("mad.c_cond"),
            ffn_mult: self.usize("mad.ffn_mult"),
            max_positions: MAX_FRAMES / frames_per_token + 1,
            latent_width,
            text_width: text.width,
        };
        let mut head = HeadConfig::new(latent_width, transformer.c_cond);
        head.blocks = self.usize("mad.head_blocks");
        if let Some(w) = self.opt_usize("mad.head_width") {
            head.width = w;
        }
        if let Some(w) = self.opt_usize("mad.time_embed_dim") {
            head.time_embed_dim = w;
        }
        let cfg = MadConfig {
            transformer,
            head,
            text,
            denoiser: self.denoiser(),
            t_diff: self.usize("mad.t_diff"),
            loss: match self.get("mad.loss") {
                "l2" => DiffusionLossKind::L2,
                _ => DiffusionLossKind::Mse,
            },
            cond_dropout: self.f64("mad.cond_dropout"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mad_train(&self) -> MadTrainConfig {
        MadTrainConfig {
            iterations: self.usize("mad.iterations"),
            batch_size: self.usize("mad.batch_size"),
            lr: LrSchedule {
                base: self.f64("mad.lr"),
                warmup_iters: self.usize("mad.warmup_iters"),
                decay_iter: self.opt_usize("mad.decay_iter"),
                decay_factor: self.f64("mad.decay_factor"),
            },
            ema_decay: self.f64("mad.ema_decay"),
            grad_clip: self.opt_f64("mad.grad_clip"),
            seed: self.seed(),
        }
    }

    pub fn inference(&self) -> InferenceParams {
        let sampler = match self.get("infer.sampler") {
            "ddim" => SamplerParams {
                sampler: SamplerKind::Ddim,
                inference_steps: self.usize("infer.ddim_steps"),
                eta: self.f64("infer.eta"),
            },
            _ => SamplerParams::ddpm(),
        };
        InferenceParams {
            steps: self.usize("infer.steps"),
            cfg_scale: self.f64("infer.cfg"),
            guidance: self.bool("infer.guidance"),
            mode: InferenceMode::parse(self.get("infer.mode")).expect("validated mode"),
            sampler,
            target_frames: self.usize("infer.length"),
        }
    }

    pub fn evaluator(&self) -> EvaluatorConfig {
        let d = EvaluatorConfig::default();
        EvaluatorConfig {
            feature_dim: self.usize("eval.feature_dim"),
            hidden: self.usize("eval.hidden"),
            temperature: self.f64("eval.temperature"),
            iterations: self.usize("eval.iterations"),
            batch_size: self.usize("eval.batch_size"),
            lr: LrSchedule {
                base: self.f64("eval.lr"),
                ..d.lr
            },
            seed: self.seed(),
            ..d
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_shipped_toy_settings() {
        let c = RunConfig::default();
        assert_eq!(c.vae_train(), VaeTrainConfig::toy());
        assert_eq!(c.mad_train(), MadTrainConfig::toy());
        assert_eq!(c.inference(), InferenceParams::default());
        assert_eq!(c.corpus_spec(), ToyCorpusSpec::default());
        let layout = LayoutDescriptor::toy(8);
        assert_eq!(c.vae_config(&layout), VaeConfig::toy(&layout));
    }

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        fs::write(&file, "infer.cfg = 2.0\ninfer.steps = 5 # comment\n").unwrap();
        let c = RunConfig::resolve(Some(&file), &[("infer.steps".into(), "3".into())]).unwrap();
        assert_eq!(c.f64("infer.cfg"), 2.0);
        assert_eq!(c.usize("infer.steps"), 3);
        assert_eq!(c.get("infer.mode"), "keyframe");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut c = RunConfig::default();
        assert!(c.set("infer.colour", "red").is_err());
        assert!(c.set("infer.steps", "-1").is_err());
        assert!(c.set("infer.mode", "spiral").is_err());
        assert!(c.set("mad.grad_clip", "none").is_ok());
        assert!(c.apply_text("just words").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("mad.loss", "l2").unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
    }
}
