//! Cosine noise schedule, forward noising, and DDPM/DDIM reverse steps for
//! an x0-predicting denoiser.

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::rng::{normal_vec, DetRng};
use crate::tensor::Tensor;

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

fn cosine_f(u: f64) -> f64 {
    let c = libm::cos((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2);
    c * c
}

pub fn make_schedule(t_diff: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if t_diff == 0 {
        return Err(Error::InvalidConfig("diffusion step count must be at least 1".into()));
    }
    let n = t_diff as f64;
    let mut beta = Vec::with_capacity(t_diff);
    let mut alpha = Vec::with_capacity(t_diff);
    let mut alpha_bar = Vec::with_capacity(t_diff);
    let mut acc = 1.0;
    for t in 0..t_diff {
        let b = match kind {
            ScheduleKind::Cosine => {
                (1.0 - cosine_f((t + 1) as f64 / n) / cosine_f(t as f64 / n)).min(MAX_BETA)
            }
        };
        acc *= 1.0 - b;
        beta.push(b);
        alpha.push(1.0 - b);
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule {
        kind,
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(Error::TimestepOutOfRange { t, steps: self.steps() });
        }
        Ok(())
    }

    /// `alpha_bar` at `t`, with `None` meaning the clean endpoint (1).
    pub fn alpha_bar_at(&self, t: Option<usize>) -> f64 {
        t.map_or(1.0, |t| self.alpha_bar[t])
    }

    /// DDPM posterior variance at step `t >= 1`.
    pub fn ddpm_sigma2(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        if t == 0 {
            return Ok(0.0);
        }
        let (ab, ab_prev) = (self.alpha_bar[t], self.alpha_bar[t - 1]);
        Ok(self.beta[t] * (1.0 - ab_prev) / (1.0 - ab))
    }

    /// DDIM noise variance for the jump `t -> t_prev`.
    pub fn ddim_sigma2(&self, t: usize, t_prev: Option<usize>, eta: f64) -> Result<f64> {
        self.check_order(t, t_prev)?;
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar_at(t_prev);
        Ok(eta * eta * (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev))
    }

    fn check_order(&self, t: usize, t_prev: Option<usize>) -> Result<()> {
        self.check(t)?;
        if let Some(p) = t_prev {
            if p >= t {
                return Err(Error::StepOrder { t, t_prev: p });
            }
        }
        Ok(())
    }
}

/// `sqrt(ab_t) z0 + sqrt(1 - ab_t) eps`, with one step index per row.
pub fn q_sample(z0: &Tensor, t: &[usize], eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    if z0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch("q_sample: z0 and eps differ".into()));
    }
    if t.len() != z0.rows() {
        return Err(Error::DimensionMismatch {
            expected: z0.rows(),
            found: t.len(),
        });
    }
    let mut out = z0.clone();
    for (r, &tr) in t.iter().enumerate() {
        sched.check(tr)?;
        let ab = sched.alpha_bar[tr];
        let (a, b) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
        for (o, e) in out.row_mut(r).iter_mut().zip(eps.row(r)) {
            *o = a * *o + b * e;
        }
    }
    Ok(out)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(alloc::format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// One ancestral step `t -> t-1`; `t = 0` returns `x0` unchanged.
pub fn ddpm_step(z_t: &Tensor, t: usize, x0: &Tensor, noise: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check(t)?;
    same_shape(z_t, x0, "ddpm_step")?;
    same_shape(z_t, noise, "ddpm_step")?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let (ab, ab_prev) = (sched.alpha_bar[t], sched.alpha_bar[t - 1]);
    let c0 = libm::sqrt(ab_prev) * sched.beta[t] / (1.0 - ab);
    let ct = libm::sqrt(sched.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab);
    let sigma = libm::sqrt(sched.ddpm_sigma2(t)?);
    let mut out = x0.clone();
    for ((o, z), n) in out.data_mut().iter_mut().zip(z_t.data()).zip(noise.data()) {
        *o = c0 * *o + ct * z + sigma * n;
    }
    Ok(out)
}

/// One DDIM jump `t -> t_prev` (`None` jumps to the clean endpoint).
pub fn ddim_step(
    z_t: &Tensor,
    t: usize,
    t_prev: Option<usize>,
    x0: &Tensor,
    sched: &NoiseSchedule,
    eta: f64,
    noise: &Tensor,
) -> Result<Tensor> {
    let sigma2 = sched.ddim_sigma2(t, t_prev, eta)?;
    same_shape(z_t, x0, "ddim_step")?;
    same_shape(z_t, noise, "ddim_step")?;
    let ab = sched.alpha_bar[t];
    let ab_prev = sched.alpha_bar_at(t_prev);
    let dir = libm::sqrt((1.0 - ab_prev - sigma2).max(0.0)) / libm::sqrt(1.0 - ab);
    let (sa, sp, sigma) = (libm::sqrt(ab), libm::sqrt(ab_prev), libm::sqrt(sigma2));
    let mut out = x0.clone();
    for ((o, z), n) in out.data_mut().iter_mut().zip(z_t.data()).zip(noise.data()) {
        let x = *o;
        *o = sp * x + dir * (z - sa * x) + sigma * n;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerParams {
    pub sampler: SamplerKind,
    /// DDIM step count; DDPM always walks every step.
    pub inference_steps: usize,
    pub eta: f64,
}

impl SamplerParams {
    pub fn ddpm() -> Self {
        Self {
            sampler: SamplerKind::Ddpm,
            inference_steps: 0,
            eta: 1.0,
        }
    }

    pub fn ddim(steps: usize) -> Self {
        Self {
            sampler: SamplerKind::Ddim,
            inference_steps: steps,
            eta: 0.0,
        }
    }

    /// Descending visit order.
    pub fn timesteps(&self, t_diff: usize) -> Result<Vec<usize>> {
        match self.sampler {
            SamplerKind::Ddpm => Ok((0..t_diff).rev().collect()),
            SamplerKind::Ddim => {
                let k = self.inference_steps;
                if k == 0 || k > t_diff {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "DDIM steps must be in 1..={t_diff}, got {k}"
                    )));
                }
                Ok(ddim_timesteps(t_diff, k))
            }
        }
    }
}

/// `k` uniformly spaced steps over `[0, t_diff)`, descending, ending at 0 when `k >= 2`.
pub fn ddim_timesteps(t_diff: usize, k: usize) -> Vec<usize> {
    if k == 1 {
        return alloc::vec![t_diff - 1];
    }
    let span = (t_diff - 1) as f64;
    let mut ts: Vec<usize> = (0..k)
        .map(|i| libm::round(span * i as f64 / (k - 1) as f64) as usize)
        .collect();
    ts.dedup();
    ts.reverse();
    ts
}

/// Clean-latent predictor `G(z_t, t, c)`, applied row-wise.
pub trait X0Predictor {
    fn latent_width(&self) -> usize;
    fn predict_x0(&self, z_t: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor>;
}

/// Per-row random streams: one for the starting noise, one for step noise.
#[derive(Debug, Clone)]
pub struct RowNoise {
    pub init: DetRng,
    pub step: DetRng,
}

fn draw_rows(streams: &mut [RowNoise], width: usize, initial: bool) -> Tensor {
    let mut data = Vec::with_capacity(streams.len() * width);
    for s in streams.iter_mut() {
        let rng = if initial { &mut s.init } else { &mut s.step };
        data.extend(normal_vec(rng, width));
    }
    Tensor::from_vec(streams.len(), width, data).expect("shape")
}

/// Runs the reverse chain from pure noise for every row of `cond`.
///
/// Each row consumes only its own streams, so results do not depend on
/// which other rows share the call.
pub fn sample_tokens<P: X0Predictor + ?Sized>(
    cond: &Tensor,
    params: &SamplerParams,
    sched: &NoiseSchedule,
    predictor: &P,
    streams: &mut [RowNoise],
) -> Result<Tensor> {
    if cond.rows() == 0 {
        return Err(Error::NoMaskedPositions);
    }
    if streams.len() != cond.rows() {
        return Err(Error::DimensionMismatch {
            expected: cond.rows(),
            found: streams.len(),
        });
    }
    let width = predictor.latent_width();
    let steps = params.timesteps(sched.steps())?;
    let mut z = draw_rows(streams, width, true);
    for (k, &t) in steps.iter().enumerate() {
        let x0 = predictor.predict_x0(&z, t, cond)?;
        let noise = draw_rows(streams, width, false);
        z = match params.sampler {
            SamplerKind::Ddpm => ddpm_step(&z, t, &x0, &noise, sched)?,
            SamplerKind::Ddim => ddim_step(&z, t, steps.get(k + 1).copied(), &x0, sched, params.eta, &noise)?,
        };
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_tensor, stream, Stream};

    #[test]
    fn schedule_invariants() {
        for n in [1, 2, 10, 50, 100, 1000] {
            let s = make_schedule(n, ScheduleKind::Cosine).unwrap();
            assert_eq!(s.steps(), n);
            for t in 0..n {
                assert!(s.beta[t] > 0.0 && s.beta[t] < 1.0);
                assert_eq!(s.alpha[t], 1.0 - s.beta[t]);
                if t > 0 {
                    assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
                    let b = 1.0 - s.alpha_bar[t] / s.alpha_bar[t - 1];
                    assert!((b - s.beta[t]).abs() < 1e-12);
                }
            }
        }
        let s = make_schedule(1000, ScheduleKind::Cosine).unwrap();
        assert!(s.alpha_bar[0] > 0.9999);
        assert!(s.alpha_bar[999] < 0.01);
        assert!(make_schedule(0, ScheduleKind::Cosine).is_err());
    }

    #[test]
    fn q_sample_endpoints() {
        let mut s = make_schedule(10, ScheduleKind::Cosine).unwrap();
        let z0 = Tensor::from_rows(&[[1.0, -2.0]]).unwrap();
        let eps = Tensor::from_rows(&[[0.3, 0.7]]).unwrap();
        s.alpha_bar[3] = 1.0;
        assert_eq!(q_sample(&z0, &[3], &eps, &s).unwrap(), z0);
        s.alpha_bar[4] = 0.0;
        assert_eq!(q_sample(&z0, &[4], &eps, &s).unwrap(), eps);
        assert!(q_sample(&z0, &[10], &eps, &s).is_err());
    }

    #[test]
    fn ddpm_endpoint_and_fixed_point() {
        let mut s = make_schedule(20, ScheduleKind::Cosine).unwrap();
        let mut rng = stream(1, Stream::SamplerNoise, 0, 0);
        let z = normal_tensor(&mut rng, 3, 4);
        let x0 = normal_tensor(&mut rng, 3, 4);
        let n = normal_tensor(&mut rng, 3, 4);
        assert_eq!(ddpm_step(&z, 0, &x0, &n, &s).unwrap(), x0);
        // alpha_bar_{t-1} = alpha_bar_t forces beta_t = 0 in the posterior
        s.alpha_bar[4] = s.alpha_bar[5];
        s.beta[5] = 0.0;
        s.alpha[5] = 1.0;
        let out = ddpm_step(&z, 5, &z, &Tensor::zeros(3, 4), &s).unwrap();
        assert!(out.max_abs_diff(&z) < 1e-15);
    }

    #[test]
    fn ddim_eta_one_matches_ddpm_variance() {
        for n in [10, 50, 1000] {
            let s = make_schedule(n, ScheduleKind::Cosine).unwrap();
            for t in 1..n {
                let a = s.ddim_sigma2(t, Some(t - 1), 1.0).unwrap();
                let b = s.ddpm_sigma2(t).unwrap();
                assert!((a - b).abs() < 1e-10, "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn ddim_terminal_step_returns_prediction() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let mut rng = stream(2, Stream::SamplerNoise, 0, 0);
        let z = normal_tensor(&mut rng, 2, 3);
        let x0 = normal_tensor(&mut rng, 2, 3);
        let n = normal_tensor(&mut rng, 2, 3);
        let out = ddim_step(&z, 7, None, &x0, &s, 0.0, &n).unwrap();
        assert_eq!(out, x0);
        assert_eq!(
            ddim_step(&z, 7, Some(7), &x0, &s, 0.0, &n),
            Err(Error::StepOrder { t: 7, t_prev: 7 })
        );
    }

    #[test]
    fn ddim_spacing() {
        assert_eq!(ddim_timesteps(1000, 100).len(), 100);
        assert_eq!(*ddim_timesteps(1000, 100).last().unwrap(), 0);
        assert_eq!(ddim_timesteps(1000, 100)[0], 999);
        assert_eq!(ddim_timesteps(10, 10), (0..10).rev().collect::<Vec<_>>());
        assert_eq!(ddim_timesteps(10, 1), [9]);
    }

    struct Shrink;

    impl X0Predictor for Shrink {
        fn latent_width(&self) -> usize {
            3
        }
        fn predict_x0(&self, z_t: &Tensor, t: usize, cond: &Tensor) -> Result<Tensor> {
            let k = 1.0 / (1.0 + t as f64);
            Ok(z_t.zip_map(&cond.slice_rows(0, z_t.rows()), |z, c| k * z + c))
        }
    }

    fn streams(seed: u64, rows: usize) -> Vec<RowNoise> {
        (0..rows as u64)
            .map(|r| RowNoise {
                init: stream(seed, Stream::InitialNoise, r, 0),
                step: stream(seed, Stream::SamplerNoise, r, 0),
            })
            .collect()
    }

    #[test]
    fn samplers_are_reproducible_and_row_independent() {
        let s = make_schedule(50, ScheduleKind::Cosine).unwrap();
        let cond = normal_tensor(&mut stream(3, Stream::Init, 0, 0), 4, 3);
        for p in [SamplerParams::ddpm(), SamplerParams::ddim(10), SamplerParams { eta: 1.0, ..SamplerParams::ddim(25) }] {
            let a = sample_tokens(&cond, &p, &s, &Shrink, &mut streams(9, 4)).unwrap();
            let b = sample_tokens(&cond, &p, &s, &Shrink, &mut streams(9, 4)).unwrap();
            assert_eq!(a, b);
            assert!(a.is_finite());
            let mut tail = streams(9, 4).split_off(2);
            let c = sample_tokens(&cond.slice_rows(2, 4), &p, &s, &Shrink, &mut tail).unwrap();
            assert_eq!(c, a.slice_rows(2, 4));
        }
        assert_eq!(
            sample_tokens(&Tensor::zeros(0, 3), &SamplerParams::ddpm(), &s, &Shrink, &mut []),
            Err(Error::NoMaskedPositions)
        );
    }
}
