//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the long toy-training criteria share
//! one trained lab and report their own wall-clock budgets.

use std::f64::consts::{FRAC_PI_2, LN_2};
use std::time::{Duration, Instant};

use momadiff::ablation::{Lab, Row};
use momadiff::config::RunConfig;
use momadiff::stats::Interval;
use momadiff::toy::{noise_motions, reconstruction_mpjpe};
use momadiff_core::autograd::Graph;
use momadiff_core::codec::MotionCodec;
use momadiff_core::head::HeadConfig;
use momadiff_core::inference::{
    mask_ratio, select_positions, GenerateRequest, InferenceMode, InferenceParams, KeyframeSet, Pipeline,
};
use momadiff_core::metrics::{accl, fid, pa_mpjpe, r_precision};
use momadiff_core::model::{CondRequest, MadConfig, MadModel};
use momadiff_core::motion::{normalize, recover_joints, LayoutDescriptor, MotionSequence, NormStats};
use momadiff_core::nn::ParamStore;
use momadiff_core::noise::{
    make_schedule, q_sample, sample_tokens, RowNoise, SamplerParams, ScheduleKind, X0Predictor,
};
use momadiff_core::rng::{normal, normal_tensor, stream, DetRng, Stream};
use momadiff_core::text::TextCondition;
use momadiff_core::training::{ema_update, item_draws, mad_loss_and_grads, EmaState, MadSample};
use momadiff_core::vae::{
    kl_graph, loss_kl, loss_nll, loss_velocity, nll_graph, vae_total_loss, velocity_graph, LatentPosterior,
    MotionVae, VaeConfig,
};
use momadiff_core::metrics::mpjpe;
use momadiff_core::Tensor;
use proptest::test_runner::{Config as PropConfig, TestRunner};

/// Repetitions per ablation row.
const REPS: usize = 5;

struct Outcome {
    pass: bool,
    notes: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            pass: true,
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.pass = false;
            self.notes.push(format!("failed: {}", what.into()));
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn budget(&mut self, elapsed: Duration, limit: Duration) {
        self.note(format!("{:.1}s of {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()));
        self.check(elapsed < limit, "time budget");
    }
}

fn report(n: usize, title: &str, o: &Outcome) -> bool {
    println!(
        "ACCEPTANCE {n} {} {title} [{}]",
        if o.pass { "PASS" } else { "FAIL" },
        o.notes.join("; ")
    );
    o.pass
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn rng(k: u64) -> DetRng {
    stream(0xACCE, Stream::Metric, k, 0)
}

// ---------------------------------------------------------------- criterion 1

fn exact_math() -> Outcome {
    let t0 = Instant::now();
    let mut o = Outcome::new();
    let x = normal_tensor(&mut rng(1), 4, 6);

    o.check(loss_nll(&x, &x, 0.0).unwrap() == 0.0, "nll zero residual");
    let shifted = x.zip_map(&normal_tensor(&mut rng(2), 4, 6), |v, s| v + if s < 0.0 { -1.0 } else { 1.0 });
    o.check(close(loss_nll(&shifted, &x, 0.0).unwrap(), 1.0, 1e-6), "nll unit residual");

    let kl = |mu: f64, lv: f64| {
        loss_kl(&LatentPosterior {
            mu: Tensor::scalar(mu),
            log_var: Tensor::scalar(lv),
        })
        .unwrap()
    };
    let kl2 = kl(0.0, LN_2);
    o.check(close(kl(0.0, 0.0), 0.0, 1e-6), "kl standard normal");
    o.check(close(kl(1.0, 0.0), 0.5, 1e-6), "kl unit mean");
    o.check(close(kl2, 0.1534, 1e-4), format!("kl sigma^2=2 gave {kl2}"));
    o.check(close(kl2, -0.5 * (1.0 + LN_2 - 2.0), 1e-12), "kl closed form");

    let range = (3, 6);
    o.check(loss_velocity(&x, &x, range).unwrap() == 0.0, "velocity zero");
    let vel_off = Tensor::from_vec(4, 6, (0..24).map(|k| x.data()[k] + if k % 6 >= 3 { 0.5 } else { 0.0 }).collect()).unwrap();
    o.check(close(loss_velocity(&vel_off, &x, range).unwrap(), 0.5, 1e-6), "velocity offset 0.5");
    let pos_off = Tensor::from_vec(4, 6, (0..24).map(|k| x.data()[k] + if k % 6 < 3 { 0.7 } else { 0.0 }).collect()).unwrap();
    o.check(loss_velocity(&pos_off, &x, range).unwrap() == 0.0, "velocity block selectivity");

    o.check(close(vae_total_loss(2.0, 1.0, 1.0, 1e-6, 0.5), 2.500001, 1e-6), "total (2,1,1)");
    o.check(vae_total_loss(2.0, 1.0, 1.0, 0.0, 0.0) == 2.0, "total with zero weights");

    for (i, r, want) in [(0usize, 8usize, 1.0), (4, 8, 0.70711), (8, 8, 0.0)] {
        let got = mask_ratio(InferenceMode::Keyframe, i, r);
        o.check(close(got, want, 1e-5), format!("mask_ratio({i},{r}) = {got}"));
    }
    o.check(mask_ratio(InferenceMode::Keyframe, 0, 8) == 1.0, "mask_ratio start exact");
    o.check(mask_ratio(InferenceMode::Keyframe, 8, 8) == 0.0, "mask_ratio end exact");
    o.check(
        close(mask_ratio(InferenceMode::Keyframe, 5, 10), (FRAC_PI_2 * 0.5).cos(), 1e-15),
        "mask_ratio midpoint",
    );

    for decay in [0.0, 0.5, 0.9, 0.999] {
        let mut store = ParamStore::default();
        let p = 1.75;
        store.add("w", Tensor::from_vec(1, 3, vec![p; 3]).unwrap());
        let mut ema = EmaState::new(&store, decay);
        let s0 = -3.25;
        ema.shadow[0] = Tensor::from_vec(1, 3, vec![s0; 3]).unwrap();
        let k = 37;
        for _ in 0..k {
            ema_update(&store, &mut ema).unwrap();
        }
        let want = p + decay.powi(k) * (s0 - p);
        let worst = ema.shadow[0].data().iter().map(|v| (v - want).abs()).fold(0.0, f64::max);
        o.check(worst <= 1e-10, format!("ema closed form at decay {decay}: {worst:e}"));
    }

    // Dyadic values keep every difference exact.
    let frames = 12;
    let j3 = 9;
    let gt = Tensor::from_vec(frames, j3, (0..frames * j3).map(|k| ((k * 37 % 29) as f64) / 8.0).collect()).unwrap();
    let ramp = Tensor::from_vec(
        frames,
        j3,
        (0..frames * j3)
            .map(|k| {
                let (t, c) = (k / j3, k % j3);
                gt.data()[k] + 0.25 * c as f64 - 1.5 + 0.125 * (c as f64 + 1.0) * t as f64
            })
            .collect(),
    )
    .unwrap();
    o.check(accl(&ramp, &gt).unwrap() == 0.0, "accl annihilates affine ramp");
    let noisy = normal_tensor(&mut rng(3), frames, j3);
    let noisy_ramp = noisy.zip_map(&ramp.zip_map(&gt, |a, b| a - b), |a, b| a + b);
    o.check(accl(&noisy_ramp, &noisy).unwrap() <= 1e-12, "accl ramp on random joints");

    let gt = normal_tensor(&mut rng(4), 10, 3 * 8);
    let (theta, axis) = (1.1_f64, [0.3, -0.5, 0.8]);
    let rot = rotation(axis, theta);
    let moved = Tensor::from_vec(
        10,
        24,
        (0..10 * 8)
            .flat_map(|k| {
                let (t, j) = (k / 8, k % 8);
                let p = &gt.row(t)[3 * j..3 * j + 3];
                (0..3).map(move |r| rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2] + [0.4, -1.2, 2.0][r])
            })
            .collect(),
    )
    .unwrap();
    let pa = pa_mpjpe(&moved, &gt).unwrap();
    o.check(pa <= 1e-8, format!("pa_mpjpe of rigid motion {pa:e}"));
    o.check(mpjpe(&moved, &gt).unwrap() > 0.1, "rigid motion has raw error");

    o.budget(t0.elapsed(), Duration::from_secs(60));
    o
}

fn rotation(axis: [f64; 3], theta: f64) -> [[f64; 3]; 3] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let [x, y, z] = axis.map(|a| a / n);
    let (s, c) = theta.sin_cos();
    let k = 1.0 - c;
    [
        [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
        [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
        [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
    ]
}

// ---------------------------------------------------------------- criterion 2

const FD_STEP: f64 = 1e-6;

/// Central differences of `f` at every element of `x`.
fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for k in 0..x.len() {
        let v = x.data()[k];
        probe.data_mut()[k] = v + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[k] = v - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[k] = v;
        out.data_mut()[k] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

/// `|a - n| / max(|a|, |n|)` over whole tensors; zero when both vanish.
fn rel_error(a: &Tensor, n: &Tensor) -> f64 {
    let norm = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff = a.zip_map(n, |x, y| x - y);
    let scale = norm(a).max(norm(n));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Analytic gradient of a two-input graph loss with respect to its first input.
fn input_grad(x: &Tensor, build: impl Fn(&mut Graph, momadiff_core::autograd::Var) -> momadiff_core::autograd::Var) -> (f64, Tensor) {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = build(&mut g, v);
    let value = g.value(out).item();
    (value, g.backward(out).wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols())))
}

fn param_check(
    o: &mut Outcome,
    what: &str,
    params: &mut ParamStore,
    grads: &[Option<Tensor>],
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let x = params.get(id).clone();
        let num = numeric_grad(&x, |probe| {
            *params.get_mut(id) = probe.clone();
            let v = loss(params);
            *params.get_mut(id) = x.clone();
            v
        });
        let ana = grads[id.index()].clone().unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
        let e = rel_error(&ana, &num);
        if e >= 1e-4 {
            o.check(false, format!("{what}: {} rel error {e:e}", params.name(id)));
        }
        worst = worst.max(e);
    }
    worst
}

fn perturb(params: &mut ParamStore, seed: u64) {
    let mut r = rng(seed);
    for t in params.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += 0.1 * normal(&mut r));
    }
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let mut o = Outcome::new();
    let (d, c, frames) = (6usize, 8usize, 8usize);
    let target = normal_tensor(&mut rng(10), frames, d);
    let recon = normal_tensor(&mut rng(11), frames, d);

    let s = 0.3;
    let f_nll = |r: &Tensor| loss_nll(r, &target, s).unwrap();
    let (_, ana) = input_grad(&recon, |g, v| {
        let t = g.constant(target.clone());
        let sv = g.constant(Tensor::scalar(s));
        nll_graph(g, v, t, sv)
    });
    let e = rel_error(&ana, &numeric_grad(&recon, f_nll));
    o.check(e < 1e-4, format!("nll wrt recon {e:e}"));
    let ls = Tensor::scalar(s);
    let (_, ana) = input_grad(&ls, |g, v| {
        let r = g.constant(recon.clone());
        let t = g.constant(target.clone());
        nll_graph(g, r, t, v)
    });
    let e = rel_error(&ana, &numeric_grad(&ls, |p| loss_nll(&recon, &target, p.item()).unwrap()));
    o.check(e < 1e-4, format!("nll wrt log variance {e:e}"));

    let mu = normal_tensor(&mut rng(12), 2, c);
    let lv = normal_tensor(&mut rng(13), 2, c).map(|v| 0.5 * v);
    let kl_of = |m: &Tensor, l: &Tensor| {
        loss_kl(&LatentPosterior {
            mu: m.clone(),
            log_var: l.clone(),
        })
        .unwrap()
    };
    let (_, ana) = input_grad(&mu, |g, v| {
        let l = g.constant(lv.clone());
        kl_graph(g, v, l)
    });
    let e = rel_error(&ana, &numeric_grad(&mu, |m| kl_of(m, &lv)));
    o.check(e < 1e-4, format!("kl wrt mu {e:e}"));
    let (_, ana) = input_grad(&lv, |g, v| {
        let m = g.constant(mu.clone());
        kl_graph(g, m, v)
    });
    let e = rel_error(&ana, &numeric_grad(&lv, |l| kl_of(&mu, l)));
    o.check(e < 1e-4, format!("kl wrt log variance {e:e}"));

    let (_, ana) = input_grad(&recon, |g, v| {
        let t = g.constant(target.clone());
        velocity_graph(g, v, t, (3, 6))
    });
    let e = rel_error(&ana, &numeric_grad(&recon, |r| loss_velocity(r, &target, (3, 6)).unwrap()));
    o.check(e < 1e-4, format!("velocity wrt recon {e:e}"));

    let mut vae = MotionVae::new(
        VaeConfig {
            d,
            latent_width: c,
            width: 8,
            res_layers: 1,
            down_layers: 2,
            w_kl: 1e-2,
            w_vel: 0.5,
            velocity_range: (3, 6),
        },
        3,
    )
    .unwrap();
    perturb(&mut vae.params, 14);
    let clip = normal_tensor(&mut rng(15), frames, d);
    let noise = normal_tensor(&mut rng(16), frames / 4, c);
    let total = |m: &MotionVae, params: &ParamStore| {
        let mut g = Graph::with_params(params);
        let terms = m.loss_graph(&mut g, &clip, 1, frames, &noise);
        g.value(terms.total).item()
    };
    let grads = {
        let mut g = Graph::with_params(&vae.params);
        let terms = vae.loss_graph(&mut g, &clip, 1, frames, &noise);
        g.backward(terms.total).into_param_grads()
    };
    let shape = vae.clone();
    let worst = param_check(&mut o, "vae total", &mut vae.params, &grads, |p| total(&shape, p));
    o.note(format!("vae total worst {worst:.1e}"));

    let mut config = MadConfig::toy(c, 4);
    config.text.width = 16;
    config.transformer.text_width = 16;
    config.transformer.hidden = 16;
    config.transformer.heads = 2;
    config.transformer.layers = 1;
    config.transformer.c_cond = 16;
    config.transformer.ffn_mult = 2;
    config.head = HeadConfig {
        width: 16,
        time_embed_dim: 16,
        ..HeadConfig::new(c, 16)
    };
    let mut model = MadModel::new(config, vec!["jump".into(), "walk".into()], 5).unwrap();
    perturb(&mut model.params, 17);
    let batch: Vec<MadSample> = (0..2)
        .map(|k| MadSample {
            latents: normal_tensor(&mut rng(20 + k), 4, c),
            text: TextCondition::caption(if k == 0 { "walk" } else { "jump" }),
        })
        .collect();
    let draws: Vec<_> = (0..2).map(|k| item_draws(9, 0, k, 4, c, model.config.t_diff, 0.0)).collect();
    let (_, grads) = mad_loss_and_grads(&model, &batch, &draws).unwrap();
    let shape = model.clone();
    let worst = param_check(&mut o, "diffusion loss", &mut model.params, &grads, |p| {
        let mut m = shape.clone();
        m.params = p.clone();
        mad_loss_and_grads(&m, &batch, &draws).unwrap().0
    });
    o.note(format!("diffusion worst {worst:.1e}"));

    o.budget(t0.elapsed(), Duration::from_secs(300));
    o
}

// ---------------------------------------------------------------- criterion 3

struct Blend;

impl X0Predictor for Blend {
    fn latent_width(&self) -> usize {
        4
    }

    fn predict_x0(&self, z_t: &Tensor, t: usize, cond: &Tensor) -> momadiff_core::Result<Tensor> {
        let k = 1.0 / (2.0 + t as f64);
        Ok(z_t.zip_map(cond, |z, c| (1.0 - k) * 0.5 * z + k * c.tanh()))
    }
}

fn diffusion_math() -> Outcome {
    let t0 = Instant::now();
    let mut o = Outcome::new();
    let sched = make_schedule(50, ScheduleKind::Cosine).unwrap();
    let n = 10_000;
    for t in [0usize, 10, 25, 49] {
        let z0 = Tensor::from_vec(n, 1, vec![1.0; n]).unwrap();
        let eps = normal_tensor(&mut rng(30 + t as u64), n, 1);
        let zt = q_sample(&z0, &vec![t; n], &eps, &sched).unwrap();
        let mean = zt.data().iter().sum::<f64>() / n as f64;
        let var = zt.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let want = 1.0 - sched.alpha_bar[t];
        let se = want * (2.0 / (n - 1) as f64).sqrt();
        o.check((var - want).abs() <= 3.0 * se, format!("q_sample variance at t={t}: {var} vs {want}"));
    }

    let mut worst: f64 = 0.0;
    for t in 1..50 {
        let (ab, ab_prev) = (sched.alpha_bar[t], sched.alpha_bar[t - 1]);
        let oracle = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev);
        let ddim = sched.ddim_sigma2(t, Some(t - 1), 1.0).unwrap();
        let ddpm = sched.ddpm_sigma2(t).unwrap();
        worst = worst.max((ddim - ddpm).abs()).max((ddpm - oracle).abs());
    }
    o.check(worst <= 1e-10, format!("ddim eta=1 variance {worst:e}"));

    let cond = normal_tensor(&mut rng(40), 5, 4);
    let run = |p: &SamplerParams, seed: u64| {
        let mut streams: Vec<RowNoise> = (0..5u64)
            .map(|r| RowNoise {
                init: stream(seed, Stream::InitialNoise, r, 0),
                step: stream(seed, Stream::SamplerNoise, r, 0),
            })
            .collect();
        sample_tokens(&cond, p, &sched, &Blend, &mut streams).unwrap()
    };
    for p in [
        SamplerParams::ddpm(),
        SamplerParams::ddim(10),
        SamplerParams { eta: 1.0, ..SamplerParams::ddim(25) },
    ] {
        let a = run(&p, 3);
        o.check(a == run(&p, 3), format!("{:?} reproducible", p.sampler));
        o.check(a != run(&p, 4), format!("{:?} seed sensitive", p.sampler));
    }

    o.budget(t0.elapsed(), Duration::from_secs(60));
    o
}

// ---------------------------------------------------------------- criterion 4

fn tiny_pipeline_parts() -> (MotionCodec, MadModel, NormStats, LayoutDescriptor) {
    let layout = LayoutDescriptor::toy(1);
    let codec = MotionCodec::Windows { d: 6, frames_per_token: 4 };
    let mut config = MadConfig::toy(24, 16);
    config.head.width = 32;
    let model = MadModel::new(config, vec!["jump".into(), "walk".into()], 11).unwrap();
    (codec, model, NormStats::identity(6), layout)
}

fn partition_holds(mode: InferenceMode, n: usize, r: usize, pinned: &[bool], seed: u64) -> Result<(), String> {
    let mut resolved = pinned.to_vec();
    let mut hits = vec![0usize; n];
    for i in 0..r {
        let open = resolved.iter().filter(|x| !**x).count();
        let picked = select_positions(mode, i, r, &resolved, &mut stream(seed, Stream::Selection, i as u64, 0));
        if open > 0 && picked.is_empty() {
            return Err(format!("{mode:?} n={n} r={r}: step {i} resolved nothing"));
        }
        for &p in &picked {
            if p >= n || resolved[p] {
                return Err(format!("{mode:?} n={n} r={r}: position {p} picked twice or pinned"));
            }
            resolved[p] = true;
            hits[p] += 1;
        }
    }
    for p in 0..n {
        let want = usize::from(!pinned[p]);
        if hits[p] != want {
            return Err(format!("{mode:?} n={n} r={r}: position {p} resolved {} times", hits[p]));
        }
    }
    Ok(())
}

fn masked_modeling() -> Outcome {
    let t0 = Instant::now();
    let mut o = Outcome::new();
    let (codec, model, stats, layout) = tiny_pipeline_parts();

    let latents = normal_tensor(&mut rng(50), 8, 24);
    let mut other = latents.clone();
    let mask: Vec<bool> = (0..8).map(|p| p % 3 != 0).collect();
    for p in 0..8 {
        if mask[p] {
            other.row_mut(p).copy_from_slice(normal_tensor(&mut rng(60 + p as u64), 1, 24).data());
        }
    }
    let text = TextCondition::caption("walk");
    let tokens = |l: &Tensor| {
        model
            .condition_tokens(&[CondRequest {
                latents: l,
                mask: &mask,
                text: &text,
            }])
            .unwrap()
            .remove(0)
    };
    o.check(tokens(&latents) == tokens(&other), "masked content independence");

    let cases = std::cell::Cell::new(0usize);
    let mut runner = TestRunner::new(PropConfig {
        cases: 1200,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let strategy = (1usize..=49, 1usize..=20, proptest::collection::vec(proptest::bool::weighted(0.2), 49), 0u64..1 << 32);
    let result = runner.run(&strategy, |(n, r, pins, seed)| {
        for mode in InferenceMode::ALL {
            partition_holds(mode, n, r, &pins[..n], seed).map_err(proptest::test_runner::TestCaseError::fail)?;
        }
        cases.set(cases.get() + 1);
        Ok(())
    });
    o.check(result.is_ok(), format!("resolution partition: {result:?}"));
    let cases = cases.get();
    o.check(cases >= 1000, format!("{cases} partition cases"));
    o.note(format!("{cases} partition cases x 3 modes"));

    let pipe = Pipeline {
        codec: &codec,
        model: &model,
        stats: &stats,
        layout,
        fps: 20.0,
    };
    let mut kf = KeyframeSet::default();
    let poses: Vec<(usize, Vec<f64>)> = [0usize, 20, 40]
        .iter()
        .map(|&f| (f, normal_tensor(&mut rng(70 + f as u64), 1, 6).data().to_vec()))
        .collect();
    for (f, pose) in &poses {
        kf.insert(*f, pose.clone());
    }
    let params = InferenceParams {
        steps: 4,
        target_frames: 64,
        ..InferenceParams::default()
    };
    let generated = pipe
        .generate(
            &GenerateRequest {
                text: text.clone(),
                keyframes: Some(kf),
                seed: 5,
            },
            &params,
        )
        .unwrap();
    for (f, pose) in &poses {
        let window = MotionSequence::new(Tensor::from_vec(4, 6, pose.repeat(4)).unwrap(), 20.0, layout).unwrap();
        let want = pipe.encode_mean(&window).unwrap();
        o.check(generated.state.latents.row(f / 4) == want.row(0), format!("keyframe at frame {f} pinned"));
    }

    let req = GenerateRequest {
        text,
        keyframes: None,
        seed: 8,
    };
    let guided = pipe
        .generate(&req, &InferenceParams { cfg_scale: 1.0, guidance: true, ..params })
        .unwrap();
    let plain = pipe
        .generate(&req, &InferenceParams { guidance: false, ..params })
        .unwrap();
    o.check(guided.motion == plain.motion, "cfg 1 equals conditional pass");

    o.budget(t0.elapsed(), Duration::from_secs(60));
    o
}

// ---------------------------------------------------------------- criterion 7

fn metric_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut o = Outcome::new();
    let m = 5000;
    let v = [1.0, -0.5, 0.25, 0.0, 0.75, 0.0, -1.0, 0.5];
    let a = normal_tensor(&mut rng(80), m, 8);
    let b = normal_tensor(&mut rng(81), m, 8);
    let b = Tensor::from_vec(m, 8, b.data().iter().enumerate().map(|(k, x)| x + v[k % 8]).collect()).unwrap();
    let want: f64 = v.iter().map(|x| x * x).sum();
    let got = fid(&a, &b).unwrap();
    o.check((got - want).abs() <= 0.1 * want, format!("fid {got:.4} vs {want:.4}"));
    o.note(format!("fid {got:.4} vs {want:.4}"));

    let same = normal_tensor(&mut rng(82), 256, 16);
    let r = r_precision(&same, &same, 32, &mut rng(83)).unwrap();
    o.check(r == [1.0, 1.0, 1.0], format!("identical pairs {r:?}"));

    let motion = normal_tensor(&mut rng(84), m, 16);
    let text = normal_tensor(&mut rng(85), m, 16);
    let r = r_precision(&motion, &text, 32, &mut rng(86)).unwrap();
    for k in 0..3 {
        let want = (k + 1) as f64 / 32.0;
        o.check((r[k] - want).abs() <= 0.02, format!("independent top-{} {:.4}", k + 1, r[k]));
    }
    o.note(format!("independent {:.4} {:.4} {:.4}", r[0], r[1], r[2]));

    o.budget(t0.elapsed(), Duration::from_secs(60));
    o
}

// ------------------------------------------------------------ criteria 5, 6, 8

struct Toy {
    lab: Lab,
    vae_mpjpe: f64,
    prep: Duration,
}

fn toy_end_to_end(toy: &Toy, full: &MadModel, base: &InferenceParams) -> (Outcome, Row) {
    let t0 = Instant::now();
    let mut o = Outcome::new();
    let lab = &toy.lab;
    let bone = lab.data.mean_bone_length();
    let ratio = toy.vae_mpjpe / bone;
    o.note(format!("held-out mpjpe {:.5} = {:.2}% of bone {bone:.3}", toy.vae_mpjpe, 100.0 * ratio));
    o.check(ratio < 0.05, "reconstruction below 5% of bone length");

    let row = lab.measure("keyframe", &lab.vae, full, base).unwrap();
    let top1 = row.interval(|m| m.r_precision[0], 1000, 0).mean;
    let gen_fid = row.fid(1000, 0);
    let noise_fid = (0..REPS)
        .map(|rep| {
            let seed = 500 + rep as u64;
            lab.suite.score(&noise_motions(&lab.data, seed).unwrap(), seed).unwrap().fid
        })
        .sum::<f64>()
        / REPS as f64;
    o.note(format!("top-1 {top1:.4}, fid {:.4}, noise fid {noise_fid:.4}", gen_fid.mean));
    o.check(top1 > 0.094, "top-1 above 3x chance");
    o.check(gen_fid.mean < noise_fid / 10.0, "fid below a tenth of noise fid");
    o.budget(toy.prep + t0.elapsed(), Duration::from_secs(3600));
    (o, row)
}

fn trends(toy: &Toy, full: &MadModel, base: &InferenceParams, keyframe: Row, t5: Duration) -> Outcome {
    let t0 = Instant::now();
    let mut o = Outcome::new();
    let lab = &toy.lab;
    let ci = |r: &Row| r.fid(1000, 0);

    let mut prev: Option<(usize, Interval)> = None;
    let mut line = Vec::new();
    for r in [1usize, 3, 5, 9] {
        let row = if r == base.steps {
            keyframe.clone()
        } else {
            lab.measure(&format!("r{r}"), &lab.vae, full, &InferenceParams { steps: r, ..*base }).unwrap()
        };
        let i = ci(&row);
        line.push(format!("R{r} {:.3}±{:.3}", i.mean, i.half_width()));
        if let Some((pr, pi)) = prev {
            o.check(i.le_within_ci(&pi), format!("fid R={r} vs R={pr}"));
        }
        prev = Some((r, i));
    }
    o.note(line.join(" "));

    let kf = ci(&keyframe);
    let mut line = vec![format!("keyframe {:.3}±{:.3}", kf.mean, kf.half_width())];
    for mode in [InferenceMode::Linear, InferenceMode::Bilinear] {
        let row = lab.measure(mode.name(), &lab.vae, full, &InferenceParams { mode, ..*base }).unwrap();
        let i = ci(&row);
        line.push(format!("{} {:.3}±{:.3}", mode.name(), i.mean, i.half_width()));
        o.check(kf.le_within_ci(&i), format!("keyframe vs {}", mode.name()));
    }
    o.note(line.join(" "));

    let rows = lab.components().unwrap();
    let full_fid = ci(&rows[0]);
    let mut line = Vec::new();
    for r in &rows {
        let i = ci(r);
        line.push(format!("{} {:.3}±{:.3}", r.label, i.mean, i.half_width()));
    }
    for r in &rows[1..] {
        o.check(full_fid.mean < ci(r).mean, format!("full vs {}", r.label));
    }
    o.note(line.join(" "));
    o.budget(t5 + t0.elapsed(), Duration::from_secs(7200));
    o
}

fn keyframe_adherence(toy: &Toy, full: &MadModel, base: &InferenceParams) -> Outcome {
    let mut o = Outcome::new();
    let lab = &toy.lab;
    let pipe = lab.pipeline(&lab.vae, full);
    let l = lab.vae.downsample_factor();
    let fps = lab.data.fps as usize;
    let mut worst: f64 = 0.0;
    let mut alone_vs_pose = 0.0;
    let mut windows = 0;
    for &k in lab.data.test.iter().filter(|&&k| lab.data.corpus.motions[k].len() >= 3 * fps).take(8) {
        let source = &lab.data.corpus.motions[k];
        let frames = source.len() / l * l;
        let mut kf = KeyframeSet::default();
        let keys: Vec<usize> = (0..frames).step_by(fps).collect();
        for &f in &keys {
            kf.insert(f, source.frames.row(f).to_vec());
        }
        let g = pipe
            .generate(
                &GenerateRequest {
                    text: TextCondition::caption(&lab.data.corpus.captions[k]),
                    keyframes: Some(kf),
                    seed: 900 + k as u64,
                },
                &InferenceParams {
                    target_frames: frames,
                    ..*base
                },
            )
            .unwrap();
        for &f in &keys {
            let pose = source.frames.row(f);
            let window = Tensor::from_vec(l, pose.len(), pose.repeat(l)).unwrap();
            let window = MotionSequence::new(window, source.fps, source.layout).unwrap();
            let token = lab.vae.encode_mean(&normalize(&window, &lab.data.stats).unwrap().frames).unwrap();
            let p = f / l;
            o.check(
                g.state.latents.row(p) == token.row(0),
                format!("item {k} frame {f}: latent not bit-exact"),
            );
            let alone = pipe.decode(&token).unwrap();
            let in_context = g.motion.slice(p * l, p * l + l);
            let e = mpjpe(&recover_joints(&in_context).unwrap(), &recover_joints(&alone).unwrap()).unwrap();
            worst = worst.max(e);
            alone_vs_pose += mpjpe(&recover_joints(&alone).unwrap(), &recover_joints(&window).unwrap()).unwrap();
            windows += 1;
        }
    }
    let tol = toy.vae_mpjpe + 1e-6;
    o.note(format!("{windows} keyframe windows, worst {worst:.5} vs tolerance {tol:.5}"));
    // Context-free error of the replicated window itself, for diagnosis.
    o.note(format!(
        "standalone decode vs pose mean {:.5}",
        alone_vs_pose / windows.max(1) as f64
    ));
    o.check(windows > 0, "no keyframe windows checked");
    o.check(worst <= tol, "decoded keyframe windows within reconstruction error");
    o
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    // `cargo test -- --list` and similar harness queries.
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    // Skips the toy-training criteria when set.
    let quick = std::env::var_os("MOMADIFF_ACCEPTANCE_QUICK").is_some();
    let mut ok = true;
    ok &= report(1, "exact math", &exact_math());
    ok &= report(2, "gradients", &gradient_suite());
    ok &= report(3, "diffusion math", &diffusion_math());
    ok &= report(4, "masked modeling", &masked_modeling());
    ok &= report(7, "metric oracles", &metric_oracles());
    if quick {
        for (n, title) in [(5, "toy end-to-end"), (6, "trends"), (8, "keyframe adherence")] {
            println!("ACCEPTANCE {n} SKIP {title} [quick mode]");
        }
    } else {
        let t0 = Instant::now();
        let lab = Lab::prepare(RunConfig::default(), REPS).expect("toy lab");
        let vae_mpjpe = reconstruction_mpjpe(&lab.vae, &lab.data, &lab.data.test).expect("held-out mpjpe");
        let full = lab.full_model().expect("full model").clone();
        let toy = Toy {
            lab,
            vae_mpjpe,
            prep: t0.elapsed(),
        };
        let base = toy.lab.config.inference();
        let t5 = Instant::now();
        let (o5, keyframe_row) = toy_end_to_end(&toy, &full, &base);
        ok &= report(5, "toy end-to-end", &o5);
        let spent = toy.prep + t5.elapsed();
        ok &= report(6, "trends", &trends(&toy, &full, &base, keyframe_row, spent));
        ok &= report(8, "keyframe adherence", &keyframe_adherence(&toy, &full, &base));
    }
    if !ok {
        std::process::exit(1);
    }
}
