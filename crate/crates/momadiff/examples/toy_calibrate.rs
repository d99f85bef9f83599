//! Runs the toy benchmark once and prints timings and metrics.
//!
//! Usage: `toy_calibrate [vae-only] [key=value ...]`

use std::time::Instant;

use momadiff::config::RunConfig;
use momadiff::error::{Error, Result};
use momadiff::toy::*;
use momadiff_core::codec::MotionCodec;
use momadiff_core::inference::Pipeline;

fn main() -> Result<()> {
    let mut cfg = RunConfig::default();
    let mut vae_only = false;
    for arg in std::env::args().skip(1) {
        if arg == "vae-only" {
            vae_only = true;
            continue;
        }
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("expected key=value, got {arg:?}")))?;
        cfg.set(k, v)?;
    }
    let t0 = Instant::now();
    let lap = |what: &str, t: &mut Instant| {
        println!("{what} {:.1}s", t.elapsed().as_secs_f64());
        *t = Instant::now();
    };
    let mut t = Instant::now();
    let data = ToyData::from_config(&cfg)?;
    let bone = data.mean_bone_length();
    println!("bone {bone:.4}");
    let codec = MotionCodec::Vae(train_toy_vae(&data, &cfg, &mut |it, s| {
        if (it + 1) % 1000 == 0 {
            println!("  vae {} recon_l1 {:.5}", it + 1, s.recon_l1);
        }
    })?);
    lap("vae", &mut t);
    let rec = reconstruction_mpjpe(&codec, &data, &data.test)?;
    println!("heldout mpjpe {rec:.5} ratio {:.4}", rec / bone);
    if vae_only {
        return Ok(());
    }
    let suite = EvalSuite::train(&data, cfg.evaluator())?;
    lap("evaluator", &mut t);
    let noise = suite.score(&noise_motions(&data, 5)?, 1)?;
    println!("noise {noise:?}");
    let model = train_toy_mad(&data, &codec, &cfg, &mut |_, _| {})?;
    lap("mad", &mut t);
    let pipe = Pipeline {
        codec: &codec,
        model: &model,
        stats: &data.stats,
        layout: data.layout,
        fps: data.fps,
    };
    let gen = generate_for_test(&pipe, &data, &cfg.inference(), 7)?;
    lap("generate", &mut t);
    println!("generated {:?}", suite.score(&gen, 1)?);
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
