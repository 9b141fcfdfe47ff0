//! Small dense linear-algebra helpers shared across modules.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// log(sum(exp(xs))) computed against the running maximum.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Largest singular value by power iteration on `A^T A`, relative
/// tolerance 1e-10. Deterministic: the start vector is fixed.
pub fn op_norm(a: ArrayView2<f64>) -> f64 {
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    // Perturbed-ones start vector avoids starting orthogonal to the
    // leading singular vector for sign-symmetric matrices.
    let mut v = Array1::from_shape_fn(cols, |i| 1.0 + 0.01 * ((i as f64) + 1.0).sin());
    let norm = |x: &Array1<f64>| x.dot(x).sqrt();
    let n0 = norm(&v);
    v.mapv_inplace(|x| x / n0);
    let mut sigma = 0.0_f64;
    for _ in 0..20_000 {
        let av = a.dot(&v);
        let mut w = a.t().dot(&av);
        let wn = norm(&w);
        if wn == 0.0 {
            return 0.0;
        }
        w.mapv_inplace(|x| x / wn);
        let s = norm(&a.dot(&w));
        v = w;
        if (s - sigma).abs() <= 1e-10 * s.max(1e-300) {
            return s;
        }
        sigma = s;
    }
    sigma
}

/// Euclidean norm.
pub fn l2_norm(x: ArrayView1<f64>) -> f64 {
    x.dot(&x).sqrt()
}

/// Max-norm of the difference of two equal-length vectors.
pub fn inf_norm_diff(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Projection of `v` onto the Euclidean ball of radius `r`.
pub fn project_ball(v: &mut Array1<f64>, r: f64) {
    let n = l2_norm(v.view());
    if n > r {
        let scale = r / n;
        v.mapv_inplace(|x| x * scale);
    }
}

/// Symmetric Gaussian matrix with off-diagonal variance `1/d`, rescaled so
/// that its operator norm equals `target_op_norm`.
pub fn random_symmetric_with_op_norm(
    d: usize,
    target_op_norm: f64,
    rng: &mut impl rand::Rng,
) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut a = Array2::zeros((d, d));
    for i in 0..d {
        for j in i..d {
            let g: f64 = StandardNormal.sample(rng);
            let v = g / (d as f64).sqrt();
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
    let n = op_norm(a.view());
    if n > 0.0 {
        a.mapv_inplace(|x| x * target_op_norm / n);
    }
    a
}
