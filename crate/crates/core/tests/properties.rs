use momadiff_core::codec::MotionCodec;
use momadiff_core::inference::{mask_ratio, select_positions, InferenceMode};
use momadiff_core::metrics::{mpjpe, pa_mpjpe};
use momadiff_core::motion::{denormalize, normalize, LayoutDescriptor, MotionSequence, NormStats};
use momadiff_core::noise::{ddim_timesteps, make_schedule, ScheduleKind};
use momadiff_core::rng::{normal_tensor, stream, Stream};
use momadiff_core::training::train_mask_count;
use momadiff_core::transformer::cfg_combine;
use momadiff_core::vae::{loss_kl, LatentPosterior, MotionVae, VaeConfig};
use momadiff_core::Tensor;
use proptest::prelude::*;

fn tensor(seed: u64, rows: usize, cols: usize) -> Tensor {
    normal_tensor(&mut stream(seed, Stream::Metric, 7, 0), rows, cols)
}

proptest! {
    #[test]
    fn procrustes_never_increases_error(seed in any::<u64>(), frames in 1usize..6, joints in 2usize..9) {
        let a = tensor(seed, frames, 3 * joints);
        let b = tensor(seed ^ 1, frames, 3 * joints);
        let pa = pa_mpjpe(&a, &b).unwrap();
        let raw = mpjpe(&a, &b).unwrap();
        prop_assert!(pa <= raw + 1e-12, "pa {pa} raw {raw}");
        prop_assert!(pa >= 0.0);
    }

    #[test]
    fn kl_is_non_negative(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..9) {
        let mu = tensor(seed, rows, cols);
        let log_var = tensor(seed ^ 2, rows, cols).map(|v| 2.0 * v);
        let kl = loss_kl(&LatentPosterior { mu, log_var }).unwrap();
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn schedule_is_monotone(t_diff in 1usize..1200) {
        let s = make_schedule(t_diff, ScheduleKind::Cosine).unwrap();
        prop_assert_eq!(s.alpha_bar.len(), t_diff);
        for w in s.alpha_bar.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        prop_assert!(s.alpha_bar.iter().all(|a| *a > 0.0 && *a < 1.0));
        prop_assert!(s.beta.iter().all(|b| *b > 0.0 && *b < 1.0));
    }

    #[test]
    fn ddim_steps_descend_to_zero(t_diff in 2usize..1200, k in 2usize..200) {
        let ts = ddim_timesteps(t_diff, k.min(t_diff));
        prop_assert_eq!(*ts.last().unwrap(), 0);
        prop_assert_eq!(ts[0], t_diff - 1);
        for w in ts.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn train_mask_count_in_range(n in 1usize..200, u in 0.0f64..1.0, v in 0.0f64..1.0) {
        let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
        let (a, b) = (train_mask_count(n, lo), train_mask_count(n, hi));
        prop_assert!((1..=n).contains(&a));
        prop_assert!(b <= a);
    }

    #[test]
    fn mask_ratio_is_non_increasing(r in 1usize..40) {
        for mode in InferenceMode::ALL {
            for i in 0..r {
                prop_assert!(mask_ratio(mode, i + 1, r) <= mask_ratio(mode, i, r));
            }
        }
    }

    #[test]
    fn linear_mode_resolves_left_to_right(n in 1usize..60, r in 1usize..20) {
        let mut resolved = vec![false; n];
        let mut order = Vec::new();
        for i in 0..r {
            let picked = select_positions(InferenceMode::Linear, i, r, &resolved, &mut stream(0, Stream::Selection, i as u64, 0));
            for p in picked {
                resolved[p] = true;
                order.push(p);
            }
        }
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_round_trips(seed in any::<u64>(), frames in 1usize..20) {
        let layout = LayoutDescriptor::toy(2);
        let x = MotionSequence::new(tensor(seed, frames, layout.d), 20.0, layout).unwrap();
        let stats = NormStats {
            mean: tensor(seed ^ 3, 1, layout.d).data().to_vec(),
            std: tensor(seed ^ 4, 1, layout.d).data().iter().map(|v| 0.5 + v.abs()).collect(),
        };
        let back = denormalize(&normalize(&x, &stats).unwrap(), &stats).unwrap();
        let worst = back.frames.zip_map(&x.frames, |a, b| (a - b).abs()).data().iter().fold(0.0f64, |m, v| m.max(*v));
        prop_assert!(worst < 1e-9);
    }

    #[test]
    fn guidance_at_one_is_conditional(seed in any::<u64>(), s in -4.0f64..8.0) {
        let c = tensor(seed, 3, 5);
        let u = tensor(seed ^ 5, 3, 5);
        prop_assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c.clone());
        prop_assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u.clone());
        let g = cfg_combine(&c, &u, s).unwrap();
        for k in 0..g.len() {
            let want = u.data()[k] + s * (c.data()[k] - u.data()[k]);
            prop_assert!((g.data()[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_rows_are_independent(seed in any::<u64>(), m in 1usize..12, k in 1usize..20, n in 1usize..12, pick in 0usize..12) {
        let a = tensor(seed, m, k);
        let b = tensor(seed ^ 6, k, n);
        let row = pick % m;
        let full = a.matmul(&b);
        let single = a.slice_rows(row, row + 1).matmul(&b);
        prop_assert_eq!(full.row(row), single.row(0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn codec_shape_law(frames in 4usize..40, seed in 0u64..4) {
        let config = VaeConfig {
            d: 6,
            latent_width: 4,
            width: 8,
            res_layers: 1,
            down_layers: 2,
            w_kl: 1e-6,
            w_vel: 0.5,
            velocity_range: (3, 6),
        };
        let codec = MotionCodec::Vae(MotionVae::new(config, seed).unwrap());
        let x = tensor(seed, frames, 6);
        let z = codec.encode_mean(&x).unwrap();
        prop_assert_eq!(z.rows(), frames / 4);
        prop_assert_eq!(z.cols(), 4);
        let y = codec.decode(&z).unwrap();
        prop_assert_eq!(y.rows(), frames / 4 * 4);
        prop_assert_eq!(y.cols(), 6);
        let windows = MotionCodec::Windows { d: 6, frames_per_token: 4 };
        prop_assert_eq!(windows.decode(&windows.encode_mean(&x).unwrap()).unwrap(), x.slice_rows(0, frames / 4 * 4));
    }
}
