//! Command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use momadiff_core::codec::MotionCodec;
use momadiff_core::inference::{GenerateRequest, Pipeline};
use momadiff_core::metrics::{accl, mpjpe, pa_mpjpe};
use momadiff_core::motion::{compute_stats, denormalize, normalize, recover_joints, MotionSequence};
use momadiff_core::text::{tokenize, TextCondition};
use momadiff_core::training::{latent_cache_build, train_mad, train_vae};
use momadiff_core::vae::MotionVae;
use momadiff_core::evaluator::train_toy_evaluator;

use crate::ablation::{AblationKind, Lab};
use crate::checkpoint::{build_codec, Container, MadBundle, VaeBundle};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{load_edit_mask, load_keyframes};
use crate::motion_file::{load_manifest, load_motion, save_motion, write_manifest};
use crate::plot::render_svg;
use crate::run_manifest::RunManifest;
use crate::stats::bootstrap_mean;
use crate::toy::{GenMetrics, ToyData, DIVERSITY_PAIRS, R_PRECISION_POOL};

#[derive(Debug, Parser)]
#[command(name = "momadiff", version, about = "Masked autoregressive latent diffusion for text-to-motion")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override, repeatable; beats the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferFlags {
    /// Guidance scale s_c.
    #[arg(long)]
    pub cfg: Option<f64>,
    /// Autoregressive steps R.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub sampler: Option<String>,
    /// DDIM inference steps T_i.
    #[arg(long = "ddim-steps")]
    pub ddim_steps: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// Disable the unconditional branch.
    #[arg(long = "no-guidance")]
    pub no_guidance: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the procedural toy corpus and its train/test manifests.
    MakeToyData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the motion VAE.
    TrainVae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the masked transformer and diffusion head.
    TrainMad {
        #[arg(long)]
        data: PathBuf,
        /// VAE checkpoint; required unless mad.codec = windows.
        #[arg(long)]
        vae: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode and decode a motion through the codec and report the error.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        text: Option<String>,
        /// Whitespace-separated pre-encoded text vector.
        #[arg(long = "text-vector")]
        text_vector: Option<PathBuf>,
        /// Target length in frames.
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        keyframes: Option<PathBuf>,
        #[command(flatten)]
        infer: InferFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate the frames outside the preserved ranges.
    Edit {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        text: Option<String>,
        #[command(flatten)]
        infer: InferFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join two clips with a generated transition.
    Stitch {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 16)]
        transition: usize,
        #[arg(long, default_value_t = 8)]
        context: usize,
        #[arg(long)]
        text: Option<String>,
        #[command(flatten)]
        infer: InferFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score generations for a test manifest with a toy evaluator trained on
    /// the train manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        infer: InferFlags,
        /// Report path; a `.kv` twin is written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render key poses of a motion file to SVG.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        stride: usize,
    },
    /// Run a toy ablation end to end.
    Ablate {
        /// modes | steps | cfg_r | head_depth | components
        #[arg(long)]
        name: String,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::MakeToyData { .. } => "make-toy-data",
            Command::TrainVae { .. } => "train-vae",
            Command::TrainMad { .. } => "train-mad",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Generate { .. } => "generate",
            Command::Edit { .. } => "edit",
            Command::Stitch { .. } => "stitch",
            Command::Eval { .. } => "eval",
            Command::Plot { .. } => "plot",
            Command::Ablate { .. } => "ablate",
        }
    }
}

fn split_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {s:?}")))
}

fn infer_overrides(f: &InferFlags, out: &mut Vec<(String, String)>) {
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    put("infer.cfg", f.cfg.map(|v| v.to_string()));
    put("infer.steps", f.steps.map(|v| v.to_string()));
    put("infer.mode", f.mode.clone());
    put("infer.sampler", f.sampler.clone());
    put("infer.ddim_steps", f.ddim_steps.map(|v| v.to_string()));
    put("infer.eta", f.eta.map(|v| v.to_string()));
    if f.no_guidance {
        put("infer.guidance", Some("false".into()));
    }
}

/// Flags beat the config file, which beats defaults. Commands that load a
/// checkpoint start from the checkpoint's config instead of the defaults.
fn resolve_config(common: &Common, command: &Command, base: Option<RunConfig>) -> Result<RunConfig> {
    let mut cfg = base.unwrap_or_default();
    if let Some(p) = &common.config {
        cfg.apply_file(p)?;
    }
    let mut overrides = common
        .overrides
        .iter()
        .map(|s| split_override(s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = common.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(t) = common.threads {
        overrides.push(("threads".into(), t.to_string()));
    }
    match command {
        Command::Generate { infer, length, .. } => {
            infer_overrides(infer, &mut overrides);
            if let Some(l) = length {
                overrides.push(("infer.length".into(), l.to_string()));
            }
        }
        Command::Edit { infer, .. } | Command::Stitch { infer, .. } => infer_overrides(infer, &mut overrides),
        Command::Eval { infer, reps, .. } => {
            infer_overrides(infer, &mut overrides);
            if let Some(r) = reps {
                overrides.push(("eval.reps".into(), r.to_string()));
            }
        }
        _ => {}
    }
    for (k, v) in &overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn checkpoint_config(command: &Command) -> Result<Option<RunConfig>> {
    let ckpt = match command {
        Command::Reconstruct { ckpt, .. }
        | Command::Generate { ckpt, .. }
        | Command::Edit { ckpt, .. }
        | Command::Stitch { ckpt, .. }
        | Command::Eval { ckpt, .. } => ckpt,
        _ => return Ok(None),
    };
    Ok(Some(RunConfig::from_map(&Container::load(ckpt)?.config)?))
}

fn caption(text: &Option<String>) -> TextCondition {
    match text {
        Some(t) => TextCondition::caption(t),
        None => TextCondition::Null,
    }
}

fn pipeline(b: &MadBundle) -> Pipeline<'_> {
    Pipeline {
        codec: &b.codec,
        model: &b.model,
        stats: &b.stats,
        layout: b.layout,
        fps: b.fps,
    }
}

/// Runs the tool and returns its exit code; errors print one line to stderr.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let mut cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return 1;
        }
    };
    // clap keeps only one level's values for a repeated global flag.
    cli.common.overrides = set_flags(&argv);
    let args: Vec<String> = std::env::args().collect();
    match execute(&cli, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

/// Every `--set` value in command-line order, before or after the subcommand.
fn set_flags(argv: &[std::ffi::OsString]) -> Vec<String> {
    let mut out = Vec::new();
    let mut it = argv.iter().skip(1).map(|a| a.to_string_lossy());
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--set" {
            if let Some(v) = it.next() {
                out.push(v.into_owned());
            }
        } else if let Some(v) = a.strip_prefix("--set=") {
            out.push(v.to_string());
        }
    }
    out
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    pool.install(f)
}

pub fn execute(cli: &Cli, args: &[String]) -> Result<()> {
    let base = checkpoint_config(&cli.command)?;
    let cfg = resolve_config(&cli.common, &cli.command, base)?;
    let mut manifest = RunManifest::new(cli.command.name(), args, &cfg);
    let out = with_threads(cfg.usize("threads"), || dispatch(&cli.command, &cfg, &mut manifest))?;
    manifest.write(&RunManifest::path_for(&out))
}

fn dispatch(command: &Command, cfg: &RunConfig, m: &mut RunManifest) -> Result<PathBuf> {
    match command {
        Command::MakeToyData { out } => make_toy_data(cfg, out, m),
        Command::TrainVae { data, out } => {
            m.input(data)?;
            let corpus = load_manifest(data)?;
            let motions: Vec<MotionSequence> = corpus.iter().map(|(x, _)| x.clone()).collect();
            let stats = compute_stats(&motions)?;
            let layout = motions[0].layout;
            let clips = motions
                .iter()
                .map(|x| Ok(normalize(x, &stats)?.frames))
                .collect::<Result<Vec<_>>>()?;
            let mut vae = MotionVae::new(cfg.vae_config(&layout), cfg.seed())?;
            let tc = cfg.vae_train();
            let mut last = None;
            train_vae(&mut vae, &clips, &tc, &mut |it, s| {
                if (it + 1) % 500 == 0 || it + 1 == tc.iterations {
                    println!("iter {} loss {:.6} recon_l1 {:.6}", it + 1, s.total, s.recon_l1);
                }
                last = Some(*s);
            })?;
            VaeBundle {
                config: cfg.clone(),
                layout,
                fps: motions[0].fps,
                stats,
                vae,
                step: tc.iterations as u64,
            }
            .save(out)?;
            m.output(out)?;
            Ok(out.clone())
        }
        Command::TrainMad { data, vae, out } => {
            m.input(data)?;
            let corpus = load_manifest(data)?;
            let motions: Vec<MotionSequence> = corpus.iter().map(|(x, _)| x.clone()).collect();
            let captions: Vec<String> = corpus.iter().map(|(_, c)| c.clone()).collect();
            let layout = motions[0].layout;
            // The first stage's structure comes from its checkpoint.
            let mut config = cfg.clone();
            let (codec, stats) = match vae {
                Some(p) => {
                    m.input(p)?;
                    let b = VaeBundle::load(p)?;
                    for key in RunConfig::keys().filter(|k| k.starts_with("vae.")) {
                        config.set(key, b.config.get(key))?;
                    }
                    (build_codec(&config, &layout, Some(&b.vae.params.to_named()))?, b.stats)
                }
                None if cfg.uses_vae() => {
                    return Err(Error::Usage("--vae is required when mad.codec = vae".into()));
                }
                None => (build_codec(cfg, &layout, None)?, compute_stats(&motions)?),
            };
            let mut vocab: Vec<String> = captions.iter().flat_map(|c| tokenize(c)).collect();
            vocab.sort_unstable();
            vocab.dedup();
            let mut model = momadiff_core::model::MadModel::new(
                cfg.mad_config(codec.latent_width(), codec.downsample_factor())?,
                vocab,
                cfg.seed(),
            )?;
            let cache = latent_cache_build(&motions, &captions, &codec, &stats)?;
            let tc = cfg.mad_train();
            train_mad(&mut model, &cache, &tc, &mut |it, loss| {
                if (it + 1) % 500 == 0 || it + 1 == tc.iterations {
                    println!("iter {} loss {loss:.6}", it + 1);
                }
            })?;
            MadBundle {
                config,
                layout,
                fps: motions[0].fps,
                stats,
                codec,
                model,
                step: tc.iterations as u64,
            }
            .save(out)?;
            m.output(out)?;
            Ok(out.clone())
        }
        Command::Reconstruct { ckpt, input, out } => {
            m.input(ckpt)?;
            m.input(input)?;
            let x = load_motion(input)?;
            let (codec, stats) = match Container::load(ckpt)?.kind.as_str() {
                "vae" => {
                    let b = VaeBundle::load(ckpt)?;
                    (MotionCodec::Vae(b.vae), b.stats)
                }
                _ => {
                    let b = MadBundle::load(ckpt)?;
                    (b.codec, b.stats)
                }
            };
            let frames = normalize(&x, &stats)?.frames;
            let rec = codec.decode(&codec.encode_mean(&frames)?)?;
            let rec = denormalize(&MotionSequence::new(rec, x.fps, x.layout)?, &stats)?;
            let gt = x.slice(0, rec.len());
            let (pj, gj) = (recover_joints(&rec)?, recover_joints(&gt)?);
            println!("mpjpe {:.6}", mpjpe(&pj, &gj)?);
            println!("pa_mpjpe {:.6}", pa_mpjpe(&pj, &gj)?);
            if rec.len() >= 3 {
                println!("accl {:.6}", accl(&pj, &gj)?);
            }
            save_motion(&rec, out)?;
            m.output(out)?;
            Ok(out.clone())
        }
        Command::Generate {
            ckpt,
            text,
            text_vector,
            keyframes,
            out,
            ..
        } => {
            m.input(ckpt)?;
            let b = MadBundle::load(ckpt)?;
            let cond = match text_vector {
                Some(p) => {
                    m.input(p)?;
                    let s = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    let v = s
                        .split_whitespace()
                        .map(|t| t.parse::<f64>().map_err(|_| Error::format(p, format!("bad value {t:?}"))))
                        .collect::<Result<Vec<_>>>()?;
                    TextCondition::Vector(v)
                }
                None => caption(text),
            };
            let kf = match keyframes {
                Some(p) => {
                    m.input(p)?;
                    Some(load_keyframes(p, b.layout.d)?)
                }
                None => None,
            };
            let g = pipeline(&b).generate(
                &GenerateRequest {
                    text: cond,
                    keyframes: kf,
                    seed: cfg.seed(),
                },
                &cfg.inference(),
            )?;
            save_motion(&g.motion, out)?;
            m.output(out)?;
            Ok(out.clone())
        }
        Command::Edit {
            ckpt,
            input,
            mask,
            text,
            out,
            ..
        } => {
            for p in [ckpt, input, mask] {
                m.input(p)?;
            }
            let b = MadBundle::load(ckpt)?;
            let x = load_motion(input)?;
            let keep = load_edit_mask(mask, x.len())?;
            let l = b.codec.downsample_factor();
            let n = x.len() / l;
            let x = x.slice(0, n * l);
            let g = pipeline(&b).edit(&x, &keep[..n * l], &caption(text), &cfg.inference(), cfg.seed())?;
            save_motion(&g.motion, out)?;
            m.output(out)?;
            Ok(out.clone())
        }
        Command::Stitch {
            ckpt,
            a,
            b: clip_b,
            transition,
            context,
            text,
            out,
            ..
        } => {
            for p in [ckpt, a, clip_b] {
                m.input(p)?;
            }
            let bundle = MadBundle::load(ckpt)?;
            let (x, _) = pipeline(&bundle).stitch(
                &load_motion(a)?,
                &load_motion(clip_b)?,
                *transition,
                *context,
                &caption(text),
                &cfg.inference(),
                cfg.seed(),
            )?;
            save_motion(&x, out)?;
            m.output(out)?;
            Ok(out.clone())
        }
        Command::Eval {
            ckpt, train, test, out, ..
        } => {
            for p in [ckpt, train, test] {
                m.input(p)?;
            }
            let report = evaluate(cfg, ckpt, train, test)?;
            fs::write(out, &report.0).map_err(|e| Error::io(out, e))?;
            let kv = out.with_extension("kv");
            fs::write(&kv, &report.1).map_err(|e| Error::io(&kv, e))?;
            print!("{}", report.0);
            m.output(out)?;
            m.output(&kv)?;
            Ok(out.clone())
        }
        Command::Plot { input, out, stride } => {
            m.input(input)?;
            let svg = render_svg(&load_motion(input)?, *stride)?;
            fs::write(out, svg).map_err(|e| Error::io(out, e))?;
            m.output(out)?;
            Ok(out.clone())
        }
        Command::Ablate { name, reps, out } => {
            let kind = AblationKind::parse(name)?;
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let lab = Lab::prepare(cfg.clone(), reps.unwrap_or(cfg.usize("eval.reps")))?;
            let table = lab.run(kind)?;
            let resamples = cfg.usize("eval.bootstrap");
            let md = out.join(format!("{name}.md"));
            let kv = out.join(format!("{name}.kv"));
            let text = table.to_markdown(resamples, cfg.seed());
            fs::write(&md, &text).map_err(|e| Error::io(&md, e))?;
            fs::write(&kv, table.to_kv(resamples, cfg.seed())).map_err(|e| Error::io(&kv, e))?;
            print!("{text}");
            m.output(&md)?;
            m.output(&kv)?;
            Ok(out.clone())
        }
    }
}

fn make_toy_data(cfg: &RunConfig, out: &Path, m: &mut RunManifest) -> Result<PathBuf> {
    let data = ToyData::from_config(cfg)?;
    let dir = out.join("motions");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::with_capacity(data.corpus.len());
    for (k, x) in data.corpus.motions.iter().enumerate() {
        let rel = format!("motions/{k:05}.moma");
        save_motion(x, &out.join(&rel))?;
        entries.push((rel, data.corpus.captions[k].clone()));
    }
    for (name, idx) in [("train.tsv", &data.train), ("test.tsv", &data.test)] {
        let subset: Vec<(String, String)> = idx.iter().map(|&k| entries[k].clone()).collect();
        let p = out.join(name);
        write_manifest(&p, &subset)?;
        m.output(&p)?;
    }
    let all = out.join("all.tsv");
    write_manifest(&all, &entries)?;
    m.output(&all)?;
    println!("{} motions ({} train, {} test)", data.corpus.len(), data.train.len(), data.test.len());
    Ok(out.to_path_buf())
}

/// Report text and key-value text.
fn evaluate(cfg: &RunConfig, ckpt: &Path, train: &Path, test: &Path) -> Result<(String, String)> {
    let b = MadBundle::load(ckpt)?;
    let train_set = load_manifest(train)?;
    let test_set = load_manifest(test)?;
    let (tm, tc): (Vec<_>, Vec<_>) = train_set.into_iter().unzip();
    let (xm, xc): (Vec<MotionSequence>, Vec<String>) = test_set.into_iter().unzip();
    if xm.len() < R_PRECISION_POOL {
        return Err(Error::Usage(format!(
            "test manifest needs at least {R_PRECISION_POOL} motions, has {}",
            xm.len()
        )));
    }
    let evaluator = train_toy_evaluator(&tm, &tc, compute_stats(&tm)?, cfg.evaluator(), &mut |_, _| {})?;
    let real = evaluator.motion_features(&xm)?;
    let text = evaluator.text_features(&xc)?;
    let pipe = pipeline(&b);
    let l = b.codec.downsample_factor();
    let params = cfg.inference();
    let reps = cfg.usize("eval.reps").max(1);
    let mut runs: Vec<GenMetrics> = Vec::with_capacity(reps);
    for rep in 0..reps {
        let seed = cfg.seed().wrapping_add(1000 * (rep as u64 + 1));
        let motions = xm
            .iter()
            .zip(&xc)
            .enumerate()
            .map(|(i, (x, c))| {
                let p = momadiff_core::inference::InferenceParams {
                    target_frames: (x.len() / l * l).max(l),
                    ..params
                };
                Ok(pipe
                    .generate(
                        &GenerateRequest {
                            text: TextCondition::caption(c),
                            keyframes: None,
                            seed: seed ^ ((i as u64 + 1) << 20),
                        },
                        &p,
                    )?
                    .motion)
            })
            .collect::<Result<Vec<_>>>()?;
        let feats = evaluator.motion_features(&motions)?;
        let mut rng = momadiff_core::rng::stream(seed, momadiff_core::rng::Stream::Metric, 1, 0);
        let r = momadiff_core::metrics::r_precision(&feats, &text, R_PRECISION_POOL, &mut rng)?;
        let mut rng = momadiff_core::rng::stream(seed, momadiff_core::rng::Stream::Metric, 2, 0);
        runs.push(GenMetrics {
            fid: momadiff_core::metrics::fid(&feats, &real)?,
            r_precision: r,
            mm_dist: momadiff_core::metrics::mm_dist(&feats, &text)?,
            diversity: momadiff_core::metrics::diversity(&feats, DIVERSITY_PAIRS, &mut rng)?,
        });
    }
    let resamples = cfg.usize("eval.bootstrap");
    let metrics: [(&str, Box<dyn Fn(&GenMetrics) -> f64>); 6] = [
        ("fid", Box::new(|m| m.fid)),
        ("r_precision_top1", Box::new(|m| m.r_precision[0])),
        ("r_precision_top2", Box::new(|m| m.r_precision[1])),
        ("r_precision_top3", Box::new(|m| m.r_precision[2])),
        ("mm_dist", Box::new(|m| m.mm_dist)),
        ("diversity", Box::new(|m| m.diversity)),
    ];
    let mut report = format!("repetitions = {reps}\n");
    let mut kv = format!("reps = {reps}\n");
    for (name, f) in &metrics {
        let v: Vec<f64> = runs.iter().map(f).collect();
        let i = bootstrap_mean(&v, resamples, cfg.seed());
        report.push_str(&format!("{name} = {:.4} ± {:.4}\n", i.mean, i.half_width()));
        kv.push_str(&format!("{name} = {:.6}\n{name}_lo = {:.6}\n{name}_hi = {:.6}\n", i.mean, i.lo, i.hi));
    }
    Ok((report, kv))
}
