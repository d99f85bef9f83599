//! The toy benchmark: procedural corpus, train/test split, both training
//! stages, the contrastive evaluator, and generation-quality metrics.

use momadiff_core::codec::MotionCodec;
use momadiff_core::evaluator::{train_toy_evaluator, EvaluatorConfig, EvaluatorModel};
use momadiff_core::inference::{GenerateRequest, InferenceParams, Pipeline};
use momadiff_core::metrics::{diversity, fid, mm_dist, mpjpe, r_precision};
use momadiff_core::model::MadModel;
use momadiff_core::motion::{
    compute_stats, denormalize, generate_toy_corpus, normalize, recover_joints, LayoutDescriptor, MotionSequence,
    NormStats, ToyCorpus, ToyCorpusSpec, ToySkeleton,
};
use momadiff_core::rng::{normal_tensor, sample_without_replacement, stream, Stream};
use momadiff_core::text::{tokenize, TextCondition};
use momadiff_core::training::{latent_cache_build, train_mad, train_vae, VaeStepStats};
use momadiff_core::vae::MotionVae;
use momadiff_core::Tensor;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::Result;

/// Retrieval pool size for R-precision.
pub const R_PRECISION_POOL: usize = 32;
/// Pairs sampled by the diversity metric.
pub const DIVERSITY_PAIRS: usize = 300;
/// Requests per parallel generation batch.
const GEN_CHUNK: usize = 32;

/// Corpus plus a fixed split and train-set normalization.
#[derive(Debug, Clone)]
pub struct ToyData {
    pub corpus: ToyCorpus,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub stats: NormStats,
    pub layout: LayoutDescriptor,
    pub fps: f32,
}

impl ToyData {
    pub fn build(spec: &ToyCorpusSpec, test_fraction: f64, seed: u64) -> Result<Self> {
        let corpus = generate_toy_corpus(spec)?;
        let n = corpus.len();
        let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
        let mut test = sample_without_replacement(&mut stream(seed, Stream::Corpus, 0xDA7A, 0), n, n_test);
        test.sort_unstable();
        let mut is_test = vec![false; n];
        for &k in &test {
            is_test[k] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&k| !is_test[k]).collect();
        let train_motions: Vec<MotionSequence> = train.iter().map(|&k| corpus.motions[k].clone()).collect();
        let stats = compute_stats(&train_motions)?;
        Ok(Self {
            layout: LayoutDescriptor::toy(spec.joint_count),
            fps: spec.fps,
            corpus,
            train,
            test,
            stats,
        })
    }

    pub fn motions(&self, idx: &[usize]) -> Vec<MotionSequence> {
        idx.iter().map(|&k| self.corpus.motions[k].clone()).collect()
    }

    pub fn captions(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&k| self.corpus.captions[k].clone()).collect()
    }

    pub fn normalized(&self, idx: &[usize]) -> Result<Vec<Tensor>> {
        idx.iter()
            .map(|&k| Ok(normalize(&self.corpus.motions[k], &self.stats)?.frames))
            .collect()
    }

    pub fn vocab(&self) -> Vec<String> {
        let mut v: Vec<String> = self.corpus.captions.iter().flat_map(|c| tokenize(c)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn mean_bone_length(&self) -> f64 {
        ToySkeleton::new(self.layout.joint_count).mean_bone_length()
    }

}

impl ToyData {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Self::build(&cfg.corpus_spec(), cfg.f64("data.test_fraction"), cfg.seed())
    }
}

pub fn train_toy_vae(data: &ToyData, cfg: &RunConfig, log: &mut dyn FnMut(usize, &VaeStepStats)) -> Result<MotionVae> {
    let mut vae = MotionVae::new(cfg.vae_config(&data.layout), cfg.seed())?;
    let clips = data.normalized(&data.train)?;
    train_vae(&mut vae, &clips, &cfg.vae_train(), log)?;
    Ok(vae)
}

/// Mean joint-space MPJPE of `decode(encode_mean(x))` over clips.
pub fn reconstruction_mpjpe(codec: &MotionCodec, data: &ToyData, idx: &[usize]) -> Result<f64> {
    let errs: Vec<f64> = idx
        .par_iter()
        .map(|&k| {
            let m = &data.corpus.motions[k];
            let frames = normalize(m, &data.stats)?.frames;
            let rec = codec.decode(&codec.encode_mean(&frames)?)?;
            let rec = denormalize(&MotionSequence::new(rec, m.fps, m.layout)?, &data.stats)?;
            let gt = m.slice(0, rec.len());
            mpjpe(&recover_joints(&rec)?, &recover_joints(&gt)?)
        })
        .collect::<momadiff_core::Result<_>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Trains the second stage described by `cfg` on top of `codec`.
pub fn train_toy_mad(
    data: &ToyData,
    codec: &MotionCodec,
    cfg: &RunConfig,
    log: &mut dyn FnMut(usize, f64),
) -> Result<MadModel> {
    let mc = cfg.mad_config(codec.latent_width(), codec.downsample_factor())?;
    let mut model = MadModel::new(mc, data.vocab(), cfg.seed())?;
    let cache = latent_cache_build(&data.motions(&data.train), &data.captions(&data.train), codec, &data.stats)?;
    train_mad(&mut model, &cache, &cfg.mad_train(), log)?;
    Ok(model)
}

/// Evaluator plus cached real-test features.
#[derive(Debug, Clone)]
pub struct EvalSuite {
    pub evaluator: EvaluatorModel,
    pub real_features: Tensor,
    pub test_captions: Vec<String>,
    pub text_features: Tensor,
}

impl EvalSuite {
    pub fn train(data: &ToyData, cfg: EvaluatorConfig) -> Result<Self> {
        let evaluator = train_toy_evaluator(
            &data.motions(&data.train),
            &data.captions(&data.train),
            data.stats.clone(),
            cfg,
            &mut |_, _| {},
        )?;
        let real_features = evaluator.motion_features(&data.motions(&data.test))?;
        let test_captions = data.captions(&data.test);
        let text_features = evaluator.text_features(&test_captions)?;
        Ok(Self {
            evaluator,
            real_features,
            test_captions,
            text_features,
        })
    }

    /// Metrics of motions paired one-to-one with the test captions.
    pub fn score(&self, motions: &[MotionSequence], seed: u64) -> Result<GenMetrics> {
        let feats = self.evaluator.motion_features(motions)?;
        let r = r_precision(
            &feats,
            &self.text_features,
            R_PRECISION_POOL,
            &mut stream(seed, Stream::Metric, 1, 0),
        )?;
        Ok(GenMetrics {
            fid: fid(&feats, &self.real_features)?,
            r_precision: r,
            mm_dist: mm_dist(&feats, &self.text_features)?,
            diversity: diversity(&feats, DIVERSITY_PAIRS, &mut stream(seed, Stream::Metric, 2, 0))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenMetrics {
    pub fid: f64,
    pub r_precision: [f64; 3],
    pub mm_dist: f64,
    pub diversity: f64,
}

/// One motion per test clip, with that clip's caption and its length rounded
/// down to whole tokens.
pub fn generate_for_test(
    pipeline: &Pipeline,
    data: &ToyData,
    params: &InferenceParams,
    seed: u64,
) -> Result<Vec<MotionSequence>> {
    let l = pipeline.codec.downsample_factor();
    let jobs: Vec<(usize, usize)> = data
        .test
        .iter()
        .enumerate()
        .map(|(i, &k)| (i, (data.corpus.motions[k].len() / l) * l))
        .collect();
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for &(i, len) in &jobs {
        by_len.entry(len).or_default().push(i);
    }
    let chunks: Vec<(usize, Vec<usize>)> = by_len
        .into_iter()
        .flat_map(|(len, items)| items.chunks(GEN_CHUNK).map(|c| (len, c.to_vec())).collect::<Vec<_>>())
        .collect();
    let results: Vec<Vec<(usize, MotionSequence)>> = chunks
        .par_iter()
        .map(|(len, items)| {
            let requests: Vec<GenerateRequest> = items
                .iter()
                .map(|&i| GenerateRequest {
                    text: TextCondition::Caption(data.corpus.captions[data.test[i]].clone()),
                    keyframes: None,
                    seed: seed ^ ((i as u64 + 1) << 20),
                })
                .collect();
            let p = InferenceParams {
                target_frames: *len,
                ..*params
            };
            let out = pipeline.generate_batch(&requests, &p)?;
            Ok(items.iter().copied().zip(out.into_iter().map(|g| g.motion)).collect())
        })
        .collect::<Result<_>>()?;
    let mut motions: Vec<Option<MotionSequence>> = vec![None; jobs.len()];
    for (i, m) in results.into_iter().flatten() {
        motions[i] = Some(m);
    }
    Ok(motions.into_iter().map(|m| m.expect("every test item generated")).collect())
}

/// Standard-normal motions in normalized space, one per test clip.
pub fn noise_motions(data: &ToyData, seed: u64) -> Result<Vec<MotionSequence>> {
    data.test
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let len = data.corpus.motions[k].len();
            let x = normal_tensor(&mut stream(seed, Stream::Metric, 3, i as u64), len, data.layout.d);
            denormalize(&MotionSequence::new(x, data.fps, data.layout)?, &data.stats)
        })
        .collect::<momadiff_core::Result<_>>()
        .map_err(Into::into)
}
