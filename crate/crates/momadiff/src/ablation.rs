//! Toy-scale ablations over inference settings and model components.

use std::fmt::Write as _;
use std::sync::OnceLock;

use momadiff_core::codec::MotionCodec;
use momadiff_core::inference::{InferenceMode, InferenceParams, Pipeline};
use momadiff_core::model::MadModel;
use momadiff_core::noise::SamplerParams;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::stats::{bootstrap_mean, Interval};
use crate::toy::{generate_for_test, train_toy_mad, train_toy_vae, EvalSuite, GenMetrics, ToyData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    Modes,
    Steps,
    CfgR,
    HeadDepth,
    Components,
}

impl AblationKind {
    pub const ALL: [AblationKind; 5] = [
        AblationKind::Modes,
        AblationKind::Steps,
        AblationKind::CfgR,
        AblationKind::HeadDepth,
        AblationKind::Components,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::Modes => "modes",
            AblationKind::Steps => "steps",
            AblationKind::CfgR => "cfg_r",
            AblationKind::HeadDepth => "head_depth",
            AblationKind::Components => "components",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown ablation {s:?}")))
    }
}

pub const CFG_GRID: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
pub const R_GRID: [usize; 5] = [1, 3, 5, 9, 15];
/// `(training diffusion steps, inference steps)`.
pub const STEP_PAIRS: [(usize, usize); 3] = [(50, 50), (1000, 50), (1000, 100)];
pub const HEAD_DEPTHS: [usize; 3] = [1, 2, 4];

/// One table row: a label and per-repetition metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub runs: Vec<GenMetrics>,
}

impl Row {
    pub fn interval(&self, metric: impl Fn(&GenMetrics) -> f64, resamples: usize, seed: u64) -> Interval {
        let v: Vec<f64> = self.runs.iter().map(metric).collect();
        bootstrap_mean(&v, resamples, seed)
    }

    pub fn fid(&self, resamples: usize, seed: u64) -> Interval {
        self.interval(|m| m.fid, resamples, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub rows: Vec<Row>,
}

const COLUMNS: [&str; 6] = ["fid", "top1", "top2", "top3", "mm_dist", "diversity"];

fn column(m: &GenMetrics, c: usize) -> f64 {
    match c {
        0 => m.fid,
        1..=3 => m.r_precision[c - 1],
        4 => m.mm_dist,
        _ => m.diversity,
    }
}

impl Table {
    pub fn row(&self, label: &str) -> Option<&Row> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_markdown(&self, resamples: usize, seed: u64) -> String {
        let mut out = format!("### {}\n\n| variant | FID | Top-1 | Top-2 | Top-3 | MM-Dist | Diversity |\n", self.name);
        out.push_str("|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            write!(out, "| {} |", r.label).expect("write");
            for c in 0..COLUMNS.len() {
                let i = r.interval(|m| column(m, c), resamples, seed);
                write!(out, " {:.4} ± {:.4} |", i.mean, i.half_width()).expect("write");
            }
            out.push('\n');
        }
        out
    }

    /// `ablation.variant.metric = mean` and `..._hw = half-width` lines.
    pub fn to_kv(&self, resamples: usize, seed: u64) -> String {
        let mut out = String::new();
        for r in &self.rows {
            for (c, name) in COLUMNS.iter().enumerate() {
                let i = r.interval(|m| column(m, c), resamples, seed);
                writeln!(out, "{}.{}.{name} = {:.6}", self.name, r.label, i.mean).expect("write");
                writeln!(out, "{}.{}.{name}_hw = {:.6}", self.name, r.label, i.half_width()).expect("write");
            }
        }
        out
    }
}

/// Shared data, evaluator and first stage for a family of ablations.
pub struct Lab {
    pub config: RunConfig,
    pub data: ToyData,
    pub suite: EvalSuite,
    pub vae: MotionCodec,
    pub reps: usize,
    full: OnceLock<MadModel>,
}

impl Lab {
    pub fn prepare(config: RunConfig, reps: usize) -> Result<Self> {
        let data = ToyData::from_config(&config)?;
        let suite = EvalSuite::train(&data, config.evaluator())?;
        let vae = MotionCodec::Vae(train_toy_vae(&data, &config, &mut |_, _| {})?);
        Ok(Self {
            config,
            data,
            suite,
            vae,
            reps: reps.max(1),
            full: OnceLock::new(),
        })
    }

    pub fn windows(&self) -> MotionCodec {
        MotionCodec::Windows {
            d: self.data.layout.d,
            frames_per_token: self.config.usize("mad.window_frames"),
        }
    }

    pub fn variant(&self, overrides: &[(&str, &str)]) -> Result<RunConfig> {
        let mut c = self.config.clone();
        for (k, v) in overrides {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn train(&self, codec: &MotionCodec, cfg: &RunConfig) -> Result<MadModel> {
        train_toy_mad(&self.data, codec, cfg, &mut |_, _| {})
    }

    /// The default model on the trained VAE, trained once.
    pub fn full_model(&self) -> Result<&MadModel> {
        if let Some(m) = self.full.get() {
            return Ok(m);
        }
        let m = self.train(&self.vae, &self.variant(&[("mad.codec", "vae"), ("mad.denoiser", "diffusion")])?)?;
        Ok(self.full.get_or_init(|| m))
    }

    pub fn pipeline<'a>(&'a self, codec: &'a MotionCodec, model: &'a MadModel) -> Pipeline<'a> {
        Pipeline {
            codec,
            model,
            stats: &self.data.stats,
            layout: self.data.layout,
            fps: self.data.fps,
        }
    }

    /// Generates the test set `reps` times with distinct seeds and scores each.
    pub fn measure(&self, label: &str, codec: &MotionCodec, model: &MadModel, params: &InferenceParams) -> Result<Row> {
        let pipe = self.pipeline(codec, model);
        let runs = (0..self.reps)
            .map(|rep| {
                let seed = self.config.seed().wrapping_add(1000 * (rep as u64 + 1));
                let motions = generate_for_test(&pipe, &self.data, params, seed)?;
                self.suite.score(&motions, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Row {
            label: label.to_string(),
            runs,
        })
    }

    pub fn run(&self, kind: AblationKind) -> Result<Table> {
        let base = self.config.inference();
        let rows = match kind {
            AblationKind::Modes => {
                let model = self.full_model()?;
                InferenceMode::ALL
                    .into_iter()
                    .map(|mode| self.measure(mode.name(), &self.vae, model, &InferenceParams { mode, ..base }))
                    .collect::<Result<Vec<_>>>()?
            }
            AblationKind::CfgR => {
                let model = self.full_model()?;
                let mut rows = Vec::new();
                for s in CFG_GRID {
                    for r in R_GRID {
                        let p = InferenceParams {
                            cfg_scale: s,
                            steps: r,
                            ..base
                        };
                        rows.push(self.measure(&format!("s{s}_r{r}"), &self.vae, model, &p)?);
                    }
                }
                rows
            }
            AblationKind::Steps => STEP_PAIRS
                .iter()
                .map(|&(train, infer)| {
                    let cfg = self.variant(&[("mad.t_diff", &train.to_string())])?;
                    let model = self.train(&self.vae, &cfg)?;
                    let sampler = if infer == train {
                        SamplerParams::ddpm()
                    } else {
                        SamplerParams::ddim(infer)
                    };
                    self.measure(&format!("t{train}_i{infer}"), &self.vae, &model, &InferenceParams { sampler, ..base })
                })
                .collect::<Result<Vec<_>>>()?,
            AblationKind::HeadDepth => HEAD_DEPTHS
                .iter()
                .map(|&depth| {
                    let cfg = self.variant(&[("mad.head_blocks", &depth.to_string())])?;
                    let model = self.train(&self.vae, &cfg)?;
                    self.measure(&format!("blocks{depth}"), &self.vae, &model, &base)
                })
                .collect::<Result<Vec<_>>>()?,
            AblationKind::Components => self.components()?,
        };
        Ok(Table {
            name: kind.name().to_string(),
            rows,
        })
    }

    /// The full model and the three component-removed variants.
    pub fn components(&self) -> Result<Vec<Row>> {
        let base = self.config.inference();
        let full = self.full_model()?;
        let windows = self.windows();
        let mut rows = vec![self.measure("full", &self.vae, full, &base)?];
        for (label, codec, denoiser) in [
            ("no_vae", &windows, "diffusion"),
            ("no_head", &self.vae, "regression"),
            ("transformer_only", &windows, "regression"),
        ] {
            let codec_key = if matches!(codec, MotionCodec::Vae(_)) { "vae" } else { "windows" };
            // Head size follows the full model so raw windows do not get a wider head.
            let cfg = self.variant(&[
                ("mad.codec", codec_key),
                ("mad.denoiser", denoiser),
                ("mad.head_width", &full.config.head.width.to_string()),
                ("mad.time_embed_dim", &full.config.head.time_embed_dim.to_string()),
            ])?;
            let model = self.train(codec, &cfg)?;
            rows.push(self.measure(label, codec, &model, &base)?);
        }
        Ok(rows)
    }
}
