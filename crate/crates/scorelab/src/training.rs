//! Empirical risk minimization over the residual-network class.
//!
//! The objective regresses frozen Gaussian noises on noisy samples,
//! `mean_i ||sigma_t^{-1} g_i + P_t[ResN](lambda_t x_i + sigma_t g_i)||^2 / d`,
//! minimized by plain projected gradient descent with a constant rate.
//! Gradients are hand-derived reverse mode; the ball projection is
//! differentiated with its exact Jacobian off the boundary and pass-through
//! on it. No momentum, no adaptivity: runs are deterministic and auditable.

use crate::schedule::noise_level;
use crate::unroll::{weight_norm, ResNetWeights, TruncationSpec, WeightKind};
use crate::{Error, Result};
use ndarray::{s, Array1, Array2};
use rand::Rng as _;

/// Gradient-descent configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Norm bound B enforced by post-step projection.
    pub bound: f64,
    /// Apply the truncation operator inside the loss.
    pub truncation: bool,
    pub seed: u64,
    /// Initial entries are uniform, scaled by `init_scale / sqrt(D)`.
    pub init_scale: f64,
    /// Run a finite-difference gradient check before the first step.
    pub grad_check: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.steps == 0 || self.batch_size == 0 {
            return Err(Error::ParameterRange(
                "learning rate, steps and batch size must be positive".into(),
            ));
        }
        if !(self.bound > 0.0) || !(self.init_scale > 0.0) {
            return Err(Error::ParameterRange(
                "norm bound and init scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A frozen dataset: samples, their one-shot noises, and optional
/// conditioning vectors.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub xs: Vec<Array1<f64>>,
    pub gs: Vec<Array1<f64>>,
    pub thetas: Option<Vec<Array1<f64>>>,
}

impl TrainData {
    /// IID Ising samples with one frozen Gaussian noise per sample.
    pub fn for_ising(model: &crate::models::IsingModel, n: usize, seed: u64) -> Result<Self> {
        use rand_distr::{Distribution, StandardNormal};
        let xs = model.sample(n, seed)?;
        let mut rng = crate::rng::stream(seed, 1);
        let d = model.dim();
        let gs = (0..n)
            .map(|_| {
                Array1::from_shape_fn(d, |_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g
                })
            })
            .collect();
        Ok(Self {
            xs,
            gs,
            thetas: None,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.first().map_or(0, |x| x.len())
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptySamples);
        }
        if self.xs.len() != self.gs.len() {
            return Err(Error::ShapeMismatch("xs and gs lengths differ".into()));
        }
        if let Some(th) = &self.thetas {
            if th.len() != self.xs.len() {
                return Err(Error::ShapeMismatch("thetas length differs".into()));
            }
        }
        Ok(())
    }
}

/// Gradient with the same shapes as the weights.
#[derive(Debug, Clone)]
pub struct WeightGrad {
    pub w_in: Array2<f64>,
    pub blocks: Vec<(Array2<f64>, Array2<f64>)>,
    pub w_out: Array2<f64>,
}

impl WeightGrad {
    fn zeros_like(w: &ResNetWeights) -> Self {
        Self {
            w_in: Array2::zeros(w.w_in.dim()),
            blocks: w
                .blocks
                .iter()
                .map(|(w1, w2)| (Array2::zeros(w1.dim()), Array2::zeros(w2.dim())))
                .collect(),
            w_out: Array2::zeros(w.w_out.dim()),
        }
    }
}

fn batch_input(
    w: &ResNetWeights,
    z: &Array1<f64>,
    theta: Option<&Array1<f64>>,
) -> Result<Array1<f64>> {
    let t_len = w.theta_len();
    let mut input = Array1::zeros(w.d + t_len + 1);
    input.slice_mut(s![..w.d]).assign(z);
    match (t_len, theta) {
        (0, _) => {}
        (n, Some(th)) if th.len() == n => input.slice_mut(s![w.d..w.d + n]).assign(th),
        (n, got) => {
            return Err(Error::ShapeMismatch(format!(
                "net expects theta of length {n}, got {:?}",
                got.map(|g| g.len())
            )))
        }
    }
    input[w.d + t_len] = 1.0;
    Ok(input)
}

/// Mean ERM loss over the indexed batch, `1/(n d)` normalization.
pub fn erm_loss(
    w: &ResNetWeights,
    data: &TrainData,
    indices: &[usize],
    t: f64,
    trunc: Option<&TruncationSpec>,
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptySamples);
    }
    data.validate()?;
    let nl = noise_level(t)?;
    let d = w.d;
    if data.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "data dimension {} does not match net dimension {d}",
            data.dim()
        )));
    }
    let sigma = nl.sigma2.sqrt();
    let mut total = 0.0;
    for &i in indices {
        let x = &data.xs[i];
        let g = &data.gs[i];
        let theta = data.thetas.as_ref().map(|th| &th[i]);
        let z = Array1::from_shape_fn(d, |j| nl.lambda * x[j] + sigma * g[j]);
        let out = w.forward(z.view(), theta.map(|th| th.view()))?;
        let pred = match trunc {
            Some(spec) => spec.apply(out.view(), z.view()),
            None => out,
        };
        let mut sq = 0.0;
        for j in 0..d {
            let r = g[j] / sigma + pred[j];
            sq += r * r;
        }
        total += sq;
    }
    Ok(total / (indices.len() as f64 * d as f64))
}

/// Loss and its exact gradient over the indexed batch (exact off the
/// projection boundary; pass-through on it).
pub fn erm_grad(
    w: &ResNetWeights,
    data: &TrainData,
    indices: &[usize],
    t: f64,
    trunc: Option<&TruncationSpec>,
) -> Result<(f64, WeightGrad)> {
    if indices.is_empty() {
        return Err(Error::EmptySamples);
    }
    data.validate()?;
    let nl = noise_level(t)?;
    let d = w.d;
    if data.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "data dimension {} does not match net dimension {d}",
            data.dim()
        )));
    }
    let sigma = nl.sigma2.sqrt();
    let scale = 1.0 / (indices.len() as f64 * d as f64);
    let layers = w.blocks.len();
    let mut grad = WeightGrad::zeros_like(w);
    let mut total = 0.0;

    for &i in indices {
        let x = &data.xs[i];
        let g = &data.gs[i];
        let theta = data.thetas.as_ref().map(|th| &th[i]);
        let z = Array1::from_shape_fn(d, |j| nl.lambda * x[j] + sigma * g[j]);
        let input = batch_input(w, &z, theta)?;

        // forward, keeping every activation
        let mut us = Vec::with_capacity(layers + 1);
        let mut pres = Vec::with_capacity(layers);
        let mut u = w.w_in.dot(&input);
        us.push(u.clone());
        for (w1, w2) in &w.blocks {
            let pre = w2.dot(&u);
            let act = pre.mapv(|v| v.max(0.0));
            u = &u + &w1.dot(&act);
            pres.push(pre);
            us.push(u.clone());
        }
        let out = w.w_out.dot(&u);

        // truncation and residual
        let (pred, proj_state) = match trunc {
            Some(spec) => {
                let mut v = &out + &z.mapv(|zi| spec.shift * zi);
                let n = crate::linalg::l2_norm(v.view());
                let state = if n > spec.radius {
                    Some((v.clone(), n))
                } else {
                    None
                };
                if n > spec.radius {
                    v.mapv_inplace(|vi| vi * spec.radius / n);
                }
                let pred = &v - &z.mapv(|zi| spec.shift * zi);
                (pred, state)
            }
            None => (out, None),
        };
        let r = Array1::from_shape_fn(d, |j| g[j] / sigma + pred[j]);
        total += r.dot(&r) * scale;

        // backward
        let d_pred = r.mapv(|ri| 2.0 * ri * scale);
        let d_out = match (&proj_state, trunc) {
            (Some((v, n)), Some(spec)) => {
                // Jacobian of the ball projection: (R/n)(I - vv^T/n^2)
                let vhat = v.mapv(|vi| vi / *n);
                let along = vhat.dot(&d_pred);
                let mut dv = d_pred.clone();
                dv.zip_mut_with(&vhat, |dvi, &vh| *dvi -= along * vh);
                dv.mapv_inplace(|dvi| dvi * spec.radius / *n);
                dv
            }
            _ => d_pred,
        };

        // out = W_out u^L
        for r_i in 0..d {
            for (c, u_c) in us[layers].iter().enumerate() {
                grad.w_out[[r_i, c]] += d_out[r_i] * u_c;
            }
        }
        let mut du = w.w_out.t().dot(&d_out);
        for l in (0..layers).rev() {
            let (w1, w2) = &w.blocks[l];
            let act = pres[l].mapv(|v| v.max(0.0));
            let (g1, g2) = &mut grad.blocks[l];
            // u^l = u^{l-1} + W1 act
            for r_i in 0..w.embed {
                for c in 0..w.width {
                    g1[[r_i, c]] += du[r_i] * act[c];
                }
            }
            let mut d_pre = w1.t().dot(&du);
            for (dp, p) in d_pre.iter_mut().zip(pres[l].iter()) {
                if *p <= 0.0 {
                    *dp = 0.0;
                }
            }
            for r_i in 0..w.width {
                for c in 0..w.embed {
                    g2[[r_i, c]] += d_pre[r_i] * us[l][c];
                }
            }
            du += &w2.t().dot(&d_pre);
        }
        for r_i in 0..w.embed {
            for c in 0..input.len() {
                grad.w_in[[r_i, c]] += du[r_i] * input[c];
            }
        }
    }
    Ok((total, grad))
}

/// Finite-difference check of [`erm_grad`] at `n_coords` random coordinates.
/// Returns the worst relative error.
pub fn gradient_check(
    w: &ResNetWeights,
    data: &TrainData,
    indices: &[usize],
    t: f64,
    trunc: Option<&TruncationSpec>,
    n_coords: usize,
    seed: u64,
) -> Result<f64> {
    let h = 1e-5;
    let (_, grad) = erm_grad(w, data, indices, t, trunc)?;
    let mut rng = crate::rng::stream(seed, 9);
    let mut worst = 0.0f64;
    let n_mats = 2 + 2 * w.blocks.len();
    for _ in 0..n_coords {
        let mat = rng.gen_range(0..n_mats);
        let mut wp = w.clone();
        let mut wm = w.clone();
        let analytic;
        {
            let pick = |m: &Array2<f64>, rng: &mut crate::rng::Rng| {
                (rng.gen_range(0..m.nrows()), rng.gen_range(0..m.ncols()))
            };
            match mat {
                0 => {
                    let (r, c) = pick(&w.w_in, &mut rng);
                    analytic = grad.w_in[[r, c]];
                    wp.w_in[[r, c]] += h;
                    wm.w_in[[r, c]] -= h;
                }
                1 => {
                    let (r, c) = pick(&w.w_out, &mut rng);
                    analytic = grad.w_out[[r, c]];
                    wp.w_out[[r, c]] += h;
                    wm.w_out[[r, c]] -= h;
                }
                k => {
                    let l = (k - 2) / 2;
                    if (k - 2) % 2 == 0 {
                        let (r, c) = pick(&w.blocks[l].0, &mut rng);
                        analytic = grad.blocks[l].0[[r, c]];
                        wp.blocks[l].0[[r, c]] += h;
                        wm.blocks[l].0[[r, c]] -= h;
                    } else {
                        let (r, c) = pick(&w.blocks[l].1, &mut rng);
                        analytic = grad.blocks[l].1[[r, c]];
                        wp.blocks[l].1[[r, c]] += h;
                        wm.blocks[l].1[[r, c]] -= h;
                    }
                }
            }
        }
        let fd = (erm_loss(&wp, data, indices, t, trunc)?
            - erm_loss(&wm, data, indices, t, trunc)?)
            / (2.0 * h);
        let err = (fd - analytic).abs();
        // coordinates with zero gradient only see finite-difference noise
        let rel = if err <= 1e-8 {
            0.0
        } else {
            err / analytic.abs().max(fd.abs())
        };
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Rescales every offending part by `B / |||W|||` so the weights return to
/// the norm ball after a gradient step.
fn project_to_bound(w: &mut ResNetWeights, bound: f64) {
    let nrm = weight_norm(w);
    if nrm <= bound {
        return;
    }
    let factor = bound / nrm;
    if crate::linalg::op_norm(w.w_in.view()) > bound {
        w.w_in.mapv_inplace(|v| v * factor);
    }
    if crate::linalg::op_norm(w.w_out.view()) > bound {
        w.w_out.mapv_inplace(|v| v * factor);
    }
    for (w1, w2) in &mut w.blocks {
        let pair = crate::linalg::op_norm(w1.view()) + crate::linalg::op_norm(w2.view());
        if pair > bound {
            w1.mapv_inplace(|v| v * factor);
            w2.mapv_inplace(|v| v * factor);
        }
    }
}

/// Training output: final weights and the per-step loss trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ResNetWeights,
    pub trace: Vec<f64>,
}

/// Projected gradient descent on the ERM objective. `arch = (D, L, M)`.
/// Starts from `init` when given, otherwise from scaled uniform entries.
pub fn train_score(
    data: &TrainData,
    t: f64,
    arch: (usize, usize, usize),
    config: &TrainConfig,
    trunc: Option<TruncationSpec>,
    init: Option<ResNetWeights>,
) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate()?;
    let nl = noise_level(t)?;
    let d = data.dim();
    let m = data.thetas.as_ref().map_or(0, |th| th[0].len());
    let (embed, layers, width) = arch;
    if embed == 0 || width == 0 {
        return Err(Error::ParameterRange(
            "embedding and width must be positive".into(),
        ));
    }

    let effective_trunc = if config.truncation {
        Some(trunc.unwrap_or_else(|| TruncationSpec::ising(d, &nl)))
    } else {
        None
    };

    let mut w = match init {
        Some(w) => {
            w.validate()?;
            w
        }
        None => {
            let mut rng = crate::rng::stream(config.seed, 0);
            let scale = config.init_scale / (embed as f64).sqrt();
            let mut mk = |r: usize, c: usize| {
                Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0) * scale)
            };
            ResNetWeights {
                kind: WeightKind::Generic,
                d,
                m,
                embed,
                width,
                bound: config.bound,
                t,
                zeta: 0.0,
                w_in: mk(embed, d + m + 1),
                blocks: (0..layers)
                    .map(|_| (mk(embed, width), mk(width, embed)))
                    .collect(),
                w_out: mk(d, embed),
            }
        }
    };
    w.validate()?;

    let n = data.len();
    let batch = config.batch_size.min(n);

    if config.grad_check {
        let smoke: Vec<usize> = (0..batch.min(8)).collect();
        let worst = gradient_check(
            &w,
            data,
            &smoke,
            t,
            effective_trunc.as_ref(),
            20,
            config.seed,
        )?;
        if worst > 1e-5 {
            return Err(Error::ParameterRange(format!(
                "gradient smoke check failed: relative error {worst:.3e}"
            )));
        }
    }

    let mut trace = Vec::with_capacity(config.steps);
    let mut cursor = 0usize;
    for step in 0..config.steps {
        let indices: Vec<usize> = (0..batch).map(|j| (cursor + j) % n).collect();
        cursor = (cursor + batch) % n;
        let (loss, grad) = erm_grad(&w, data, &indices, t, effective_trunc.as_ref())?;
        if !loss.is_finite() || loss > 1e6 {
            return Err(Error::Divergence { step, loss });
        }
        if effective_trunc.is_some() {
            // with truncation on, every per-sample loss is bounded
            debug_assert!(
                loss <= 4.0 * nl.lambda * nl.lambda / (nl.sigma2 * nl.sigma2) + 1e-9,
                "truncated loss {loss} above 4 lambda^2 sigma^-4"
            );
        }
        trace.push(loss);
        let lr = config.learning_rate;
        w.w_in.zip_mut_with(&grad.w_in, |wi, &gi| *wi -= lr * gi);
        w.w_out.zip_mut_with(&grad.w_out, |wi, &gi| *wi -= lr * gi);
        for ((w1, w2), (g1, g2)) in w.blocks.iter_mut().zip(&grad.blocks) {
            w1.zip_mut_with(g1, |wi, &gi| *wi -= lr * gi);
            w2.zip_mut_with(g2, |wi, &gi| *wi -= lr * gi);
        }
        project_to_bound(&mut w, config.bound);
    }
    w.bound = config.bound;
    Ok(TrainOutcome { weights: w, trace })
}
