//! Distribution, retrieval, and skeleton metrics.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::rng::{index, sample_without_replacement, DetRng};
use crate::tensor::Tensor;

/// Ridge added to covariances estimated from `M <= f` samples.
pub const COV_RIDGE: f64 = 1e-6;

fn check_features(a: &Tensor, what: &'static str) -> Result<()> {
    if a.rows() == 0 {
        return Err(Error::InsufficientSamples { have: 0, need: 1 });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

fn mean_cov(x: &Tensor) -> (DVector<f64>, DMatrix<f64>) {
    let (m, f) = x.shape();
    let mat = DMatrix::from_row_slice(m, f, x.data());
    let mean = DVector::from_iterator(f, (0..f).map(|j| mat.column(j).sum() / m as f64));
    let mut centered = mat;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = if m > 1 { (m - 1) as f64 } else { 1.0 };
    let mut cov = centered.transpose() * &centered / denom;
    if m <= f {
        for k in 0..f {
            cov[(k, k)] += COV_RIDGE;
        }
    }
    (mean, cov)
}

fn sym_eigenvalues(m: DMatrix<f64>) -> DVector<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Frechet distance between Gaussian fits of two feature sets.
pub fn fid(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_features(a, "FID features")?;
    check_features(b, "FID features")?;
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            found: b.cols(),
        });
    }
    let (mu_a, cov_a) = mean_cov(a);
    let (mu_b, cov_b) = mean_cov(b);
    let s = sqrt_psd(&cov_a);
    let prod = &s * &cov_b * &s;
    let trace_sqrt: f64 = sym_eigenvalues(prod).iter().map(|&l| libm::sqrt(l.max(0.0))).sum();
    let diff = &mu_a - &mu_b;
    let value = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
    Ok(value.max(0.0))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Mean distance over up to `pairs` distinct unordered pairs of distinct items.
pub fn diversity(a: &Tensor, pairs: usize, rng: &mut DetRng) -> Result<f64> {
    let m = a.rows();
    if m < 2 {
        return Err(Error::InsufficientSamples { have: m, need: 2 });
    }
    let total = m * (m - 1) / 2;
    let chosen: Vec<(usize, usize)> = if total <= pairs {
        (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect()
    } else {
        let mut seen = BTreeSet::new();
        let mut out = Vec::with_capacity(pairs);
        while out.len() < pairs {
            let i = index(rng, m);
            let j = index(rng, m);
            if i == j {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                out.push(key);
            }
        }
        out
    };
    let sum: f64 = chosen.iter().map(|&(i, j)| dist(a.row(i), a.row(j))).sum();
    Ok(sum / chosen.len() as f64)
}

/// Mean distance between paired motion and text features.
pub fn mm_dist(motion: &Tensor, text: &Tensor) -> Result<f64> {
    if motion.shape() != text.shape() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "paired features {:?} vs {:?}",
            motion.shape(),
            text.shape()
        )));
    }
    check_features(motion, "motion features")?;
    let sum: f64 = (0..motion.rows()).map(|i| dist(motion.row(i), text.row(i))).sum();
    Ok(sum / motion.rows() as f64)
}

/// Top-1/2/3 retrieval of each motion's own text among `pool - 1` distractor
/// texts drawn without replacement from other items. Ties favour the true text.
pub fn r_precision(motion: &Tensor, text: &Tensor, pool: usize, rng: &mut DetRng) -> Result<[f64; 3]> {
    if motion.shape() != text.shape() {
        return Err(Error::ShapeMismatch("R-precision features must be paired".into()));
    }
    let m = motion.rows();
    if pool == 0 || m < pool {
        return Err(Error::InsufficientSamples { have: m, need: pool.max(1) });
    }
    let mut hits = [0usize; 3];
    for i in 0..m {
        let own = dist(motion.row(i), text.row(i));
        let rank = sample_without_replacement(rng, m - 1, pool - 1)
            .into_iter()
            .map(|k| if k >= i { k + 1 } else { k })
            .filter(|&j| dist(motion.row(i), text.row(j)) < own)
            .count();
        for (k, h) in hits.iter_mut().enumerate() {
            if rank <= k {
                *h += 1;
            }
        }
    }
    Ok(hits.map(|h| h as f64 / m as f64))
}

fn check_joints(pred: &Tensor, gt: &Tensor) -> Result<usize> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(alloc::format!("joints {:?} vs {:?}", pred.shape(), gt.shape())));
    }
    if pred.cols() == 0 || !pred.cols().is_multiple_of(3) || pred.rows() == 0 {
        return Err(Error::ShapeMismatch("joint rows must hold J x 3 coordinates".into()));
    }
    Ok(pred.cols() / 3)
}

fn frame_error(pred: &[f64], gt: &[f64]) -> f64 {
    pred.chunks_exact(3).zip(gt.chunks_exact(3)).map(|(p, g)| dist(p, g)).sum()
}

/// Mean per-joint position error over `T x 3J` joint rows.
pub fn mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let j = check_joints(pred, gt)?;
    let sum: f64 = (0..pred.rows()).map(|t| frame_error(pred.row(t), gt.row(t))).sum();
    Ok(sum / (pred.rows() * j) as f64)
}

fn points(row: &[f64]) -> Vec<Vector3<f64>> {
    row.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

fn centroid(p: &[Vector3<f64>]) -> Vector3<f64> {
    p.iter().sum::<Vector3<f64>>() / p.len() as f64
}

/// Similarity transform (scale, rotation, translation) mapping `x` onto `y`
/// in the least-squares sense, applied to `x`.
pub fn procrustes_align(x: &[f64], y: &[f64]) -> Vec<f64> {
    let (xs, ys) = (points(x), points(y));
    let (mx, my) = (centroid(&xs), centroid(&ys));
    let n = xs.len() as f64;
    let var_x: f64 = xs.iter().map(|p| (p - mx).norm_squared()).sum::<f64>() / n;
    let aligned: Vec<Vector3<f64>> = if var_x < 1e-12 {
        xs.iter().map(|p| p - mx + my).collect()
    } else {
        let mut cov = Matrix3::zeros();
        for (p, q) in xs.iter().zip(&ys) {
            cov += (q - my) * (p - mx).transpose();
        }
        cov /= n;
        let svd = cov.svd(true, true);
        let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
        let mut s = Matrix3::identity();
        if u.determinant() * v_t.determinant() < 0.0 {
            s[(2, 2)] = -1.0;
        }
        let r = u * s * v_t;
        let scale = (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_x;
        xs.iter().map(|p| scale * (r * (p - mx)) + my).collect()
    };
    aligned.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

/// MPJPE after per-frame similarity alignment of the prediction.
pub fn pa_mpjpe(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let j = check_joints(pred, gt)?;
    let sum: f64 = (0..pred.rows())
        .map(|t| frame_error(&procrustes_align(pred.row(t), gt.row(t)), gt.row(t)))
        .sum();
    Ok(sum / (pred.rows() * j) as f64)
}

/// Mean norm of the difference of second temporal differences.
pub fn accl(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    let j = check_joints(pred, gt)?;
    let t = pred.rows();
    if t < 3 {
        return Err(Error::InsufficientSamples { have: t, need: 3 });
    }
    let acc = |x: &Tensor, f: usize, k: usize| x.get(f + 1, k) - 2.0 * x.get(f, k) + x.get(f - 1, k);
    let mut sum = 0.0;
    for f in 1..t - 1 {
        for joint in 0..j {
            let mut sq = 0.0;
            for c in 0..3 {
                let k = 3 * joint + c;
                let d = acc(pred, f, k) - acc(gt, f, k);
                sq += d * d;
            }
            sum += libm::sqrt(sq);
        }
    }
    Ok(sum / ((t - 2) * j) as f64)
}
