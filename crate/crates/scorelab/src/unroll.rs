//! Residual networks whose weights are constructed, not trained.
//!
//! Each construction maps `L` steps of a fixed-point iteration onto `L`
//! residual blocks so that the forward pass reproduces the iteration trace
//! exactly. The hidden state carries the current iterate next to frozen
//! auxiliary channels (the rescaled observation and a ones channel); identity
//! and affine terms pass through ReLU via paired `+/-` columns, and the
//! update rows of the auxiliary channels are exactly zero, so those channels
//! never drift.

use crate::linalg::op_norm;
use crate::models::SparseCodingModel;
use crate::schedule::{noise_level, NoiseLevel};
use crate::variational::PwlDenoiser;
use crate::{Error, Result};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

/// Which construction produced a set of weights (or `Generic` for trained nets).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Ising,
    Marginal,
    Conditional,
    Sparse,
    Generic,
}

/// Weights of a residual network `u^0 = W_in [z; (theta;) 1]`,
/// `u^l = u^{l-1} + W1^l ReLU(W2^l u^{l-1})`, output `W_out u^L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResNetWeights {
    pub kind: WeightKind,
    /// Observation dimension.
    pub d: usize,
    /// Conditioning length (0 when the net takes no theta input).
    pub m: usize,
    /// Embedding dimension D.
    pub embed: usize,
    /// Hidden width M.
    pub width: usize,
    /// Declared norm bound B.
    pub bound: f64,
    pub t: f64,
    pub zeta: f64,
    /// `embed x (d + theta_len + 1)`.
    pub w_in: Array2<f64>,
    /// `(W1: embed x width, W2: width x embed)` per layer.
    pub blocks: Vec<(Array2<f64>, Array2<f64>)>,
    /// `d x embed`.
    pub w_out: Array2<f64>,
}

impl ResNetWeights {
    /// Length of the theta input expected by `w_in` (0 for unconditional nets).
    pub fn theta_len(&self) -> usize {
        self.w_in.ncols() - self.d - 1
    }

    /// Conditioning length implied by the header: only conditional (and
    /// generic) nets consume theta at the input; marginal and sparse nets
    /// record `m` purely as a model dimension.
    fn header_theta_len(&self) -> usize {
        match self.kind {
            WeightKind::Conditional | WeightKind::Generic => self.m,
            WeightKind::Ising | WeightKind::Marginal | WeightKind::Sparse => 0,
        }
    }

    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    /// Validates all stored shapes against the header fields.
    pub fn validate(&self) -> Result<()> {
        let din = self.d + self.header_theta_len() + 1;
        if self.w_in.dim() != (self.embed, din) {
            return Err(Error::ShapeMismatch(format!(
                "w_in is {:?}, expected ({}, {din})",
                self.w_in.dim(),
                self.embed
            )));
        }
        for (i, (w1, w2)) in self.blocks.iter().enumerate() {
            if w1.dim() != (self.embed, self.width) || w2.dim() != (self.width, self.embed) {
                return Err(Error::ShapeMismatch(format!(
                    "block {i} is {:?}/{:?}, expected ({}, {})/({}, {})",
                    w1.dim(),
                    w2.dim(),
                    self.embed,
                    self.width,
                    self.width,
                    self.embed
                )));
            }
        }
        if self.w_out.dim() != (self.d, self.embed) {
            return Err(Error::ShapeMismatch(format!(
                "w_out is {:?}, expected ({}, {})",
                self.w_out.dim(),
                self.d,
                self.embed
            )));
        }
        Ok(())
    }

    /// Index range of the frozen ones channel for constructed kinds.
    fn ones_channel(&self) -> Option<std::ops::Range<usize>> {
        let d = self.d;
        let p = d + self.m;
        match self.kind {
            WeightKind::Ising => Some(2 * d..3 * d),
            WeightKind::Marginal => Some(2 * p..3 * p),
            WeightKind::Conditional => Some(3 * d..4 * d),
            WeightKind::Sparse => {
                let m = self.m;
                Some(2 * m..3 * m)
            }
            WeightKind::Generic => None,
        }
    }

    fn input_vector(
        &self,
        z: ArrayView1<f64>,
        theta: Option<ArrayView1<f64>>,
    ) -> Result<Array1<f64>> {
        if z.len() != self.d {
            return Err(Error::ShapeMismatch(format!(
                "input has length {}, net expects {}",
                z.len(),
                self.d
            )));
        }
        let t_len = self.theta_len();
        let theta = match (t_len, theta) {
            (0, None) => None,
            (0, Some(_)) => {
                return Err(Error::ShapeMismatch("net takes no theta input".into()));
            }
            (n, Some(th)) if th.len() == n => Some(th),
            (n, got) => {
                return Err(Error::ShapeMismatch(format!(
                    "net expects theta of length {n}, got {:?}",
                    got.map(|g| g.len())
                )));
            }
        };
        let mut input = Array1::zeros(self.d + t_len + 1);
        input.slice_mut(s![..self.d]).assign(&z);
        if let Some(th) = theta {
            input.slice_mut(s![self.d..self.d + t_len]).assign(&th);
        }
        input[self.d + t_len] = 1.0;
        Ok(input)
    }

    /// Deterministic forward pass.
    pub fn forward(
        &self,
        z: ArrayView1<f64>,
        theta: Option<ArrayView1<f64>>,
    ) -> Result<Array1<f64>> {
        self.forward_impl(z, theta, false)
    }

    /// Forward pass that additionally asserts the ones channel stays exactly
    /// one at every layer (constructed kinds only).
    pub fn forward_checked(
        &self,
        z: ArrayView1<f64>,
        theta: Option<ArrayView1<f64>>,
    ) -> Result<Array1<f64>> {
        self.forward_impl(z, theta, true)
    }

    fn forward_impl(
        &self,
        z: ArrayView1<f64>,
        theta: Option<ArrayView1<f64>>,
        check: bool,
    ) -> Result<Array1<f64>> {
        let input = self.input_vector(z, theta)?;
        let mut u = self.w_in.dot(&input);
        let ones = self.ones_channel();
        let verify = |u: &Array1<f64>| -> Result<()> {
            if let Some(range) = ones.clone() {
                for i in range {
                    if u[i] != 1.0 {
                        return Err(Error::InvalidModel(format!(
                            "ones channel drifted at index {i}: {}",
                            u[i]
                        )));
                    }
                }
            }
            Ok(())
        };
        if check {
            verify(&u)?;
        }
        for (w1, w2) in &self.blocks {
            let mut hidden = w2.dot(&u);
            hidden.mapv_inplace(|v| v.max(0.0));
            u += &w1.dot(&hidden);
            if check {
                verify(&u)?;
            }
        }
        Ok(self.w_out.dot(&u))
    }
}

/// `max_l (||W1^l||_op + ||W2^l||_op) v ||W_in||_op v ||W_out||_op`,
/// operator norms by power iteration.
pub fn weight_norm(w: &ResNetWeights) -> f64 {
    let mut nrm = op_norm(w.w_in.view()).max(op_norm(w.w_out.view()));
    for (w1, w2) in &w.blocks {
        nrm = nrm.max(op_norm(w1.view()) + op_norm(w2.view()));
    }
    nrm
}

/// Ball-projection truncation: `P[f](z) = proj_radius(f(z) + shift z) - shift z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationSpec {
    pub radius: f64,
    pub shift: f64,
}

impl TruncationSpec {
    /// Ising-type truncation: radius `lambda_t sigma_t^{-2} sqrt(d)`,
    /// shift `sigma_t^{-2}`.
    pub fn ising(d: usize, nl: &NoiseLevel) -> Self {
        Self {
            radius: nl.lambda / nl.sigma2 * (d as f64).sqrt(),
            shift: 1.0 / nl.sigma2,
        }
    }

    /// Sparse-coding truncation: radius
    /// `sqrt(m) ||A||_op Pi lambda_t / (sigma_t^2 + tau^2 lambda_t^2)`,
    /// shift `(sigma_t^2 + tau^2 lambda_t^2)^{-1}`.
    pub fn sparse(model: &SparseCodingModel, nl: &NoiseLevel) -> Self {
        let denom = nl.sigma2 + model.tau() * model.tau() * nl.lambda * nl.lambda;
        let a_op = op_norm(model.dictionary());
        Self {
            radius: (model.n_atoms() as f64).sqrt() * a_op * model.pi() * nl.lambda / denom,
            shift: 1.0 / denom,
        }
    }

    /// Applies the truncation to one function value.
    pub fn apply(&self, f_value: ArrayView1<f64>, z: ArrayView1<f64>) -> Array1<f64> {
        let mut v = f_value.to_owned();
        v.zip_mut_with(&z, |vi, &zi| *vi += self.shift * zi);
        crate::linalg::project_ball(&mut v, self.radius);
        v.zip_mut_with(&z, |vi, &zi| *vi -= self.shift * zi);
        v
    }
}

fn knot_count_bound(zeta: f64, pi: f64) -> f64 {
    // ceil(2 Pi / zeta) - 1, the lemma's knot-count term
    (2.0 * pi / zeta).ceil() - 1.0
}

fn set_block(dst: &mut Array2<f64>, row0: usize, col0: usize, src: ArrayView2<f64>) {
    dst.slice_mut(s![row0..row0 + src.nrows(), col0..col0 + src.ncols()])
        .assign(&src);
}

fn set_scaled_identity(dst: &mut Array2<f64>, row0: usize, col0: usize, n: usize, scale: f64) {
    for i in 0..n {
        dst[[row0 + i, col0 + i]] = scale;
    }
}

/// Shared block layout: iterate channel of size `p` updated through
/// `J = knots` ReLU rows plus the four auxiliary rows (identity pair and
/// constant pair). `arg_cols` writes the W2 coefficients of one knot row.
struct IterateLayout<'a> {
    p: usize,
    pwl: &'a PwlDenoiser,
}

impl IterateLayout<'_> {
    fn width(&self) -> usize {
        (self.pwl.knots().len() + 4) * self.p
    }

    /// W2: rows grouped per knot then [+I; -I; ones; -ones] selectors.
    fn w2(
        &self,
        embed: usize,
        ones_col: usize,
        mut arg_cols: impl FnMut(&mut Array2<f64>, usize),
    ) -> Array2<f64> {
        let p = self.p;
        let j = self.pwl.knots().len();
        let mut w2 = Array2::zeros((self.width(), embed));
        for (idx, knot) in self.pwl.knots().iter().enumerate() {
            let r = idx * p;
            arg_cols(&mut w2, r);
            // bias through the ones channel
            set_scaled_identity(&mut w2, r, ones_col, p, -knot.breakpoint);
        }
        set_scaled_identity(&mut w2, j * p, 0, p, 1.0);
        set_scaled_identity(&mut w2, (j + 1) * p, 0, p, -1.0);
        set_scaled_identity(&mut w2, (j + 2) * p, ones_col, p, 1.0);
        set_scaled_identity(&mut w2, (j + 3) * p, ones_col, p, -1.0);
        w2
    }

    /// W1: the iterate rows collect `a_j` knot outputs, cancel the previous
    /// iterate via the identity pair, and add `a_0` via the constant pair.
    fn w1(&self, embed: usize) -> Array2<f64> {
        let p = self.p;
        let j = self.pwl.knots().len();
        let mut w1 = Array2::zeros((embed, self.width()));
        for (idx, knot) in self.pwl.knots().iter().enumerate() {
            set_scaled_identity(&mut w1, 0, idx * p, p, knot.slope_delta);
        }
        set_scaled_identity(&mut w1, 0, j * p, p, -1.0);
        set_scaled_identity(&mut w1, 0, (j + 1) * p, p, 1.0);
        set_scaled_identity(&mut w1, 0, (j + 2) * p, p, self.pwl.a0());
        set_scaled_identity(&mut w1, 0, (j + 3) * p, p, -self.pwl.a0());
        w1
    }
}

/// Unrolls `L` steps of `m <- f(U m + h)` for the Ising denoiser,
/// `U = A - K`, `h = lambda_t sigma_t^{-2} z`, into a depth-`L` net with
/// state `[m; sigma_t^{-2} z; 1_d]` whose output is the score
/// `(lambda_t m^L(z) - z)/sigma_t^2`.
pub fn unroll_ising(
    a: ArrayView2<f64>,
    k: ArrayView2<f64>,
    t: f64,
    layers: usize,
    pwl: &PwlDenoiser,
) -> Result<ResNetWeights> {
    let nl = noise_level(t)?;
    let d = a.nrows();
    if a.dim() != (d, d) || k.dim() != (d, d) {
        return Err(Error::ShapeMismatch(
            "A and K must be square of equal size".into(),
        ));
    }
    let u = &a.to_owned() - &k.to_owned();
    let u_norm = op_norm(u.view());
    if u_norm >= 1.0 {
        return Err(Error::ContractionViolation(format!(
            "||A - K||_op = {u_norm:.6} >= 1"
        )));
    }
    let layout = IterateLayout { p: d, pwl };
    let embed = 3 * d;
    let width = layout.width();

    let mut w_in = Array2::zeros((embed, d + 1));
    set_scaled_identity(&mut w_in, d, 0, d, 1.0 / nl.sigma2);
    for i in 0..d {
        w_in[[2 * d + i, d]] = 1.0;
    }

    let w2 = layout.w2(embed, 2 * d, |w2, r| {
        set_block(w2, r, 0, u.view());
        set_scaled_identity(w2, r, d, d, nl.lambda);
    });
    let w1 = layout.w1(embed);

    let mut w_out = Array2::zeros((d, embed));
    set_scaled_identity(&mut w_out, 0, 0, d, nl.lambda / nl.sigma2);
    set_scaled_identity(&mut w_out, 0, d, d, -1.0);

    let zeta = pwl.zeta();
    let jb = knot_count_bound(zeta, 1.0);
    let bound = jb * (4.0 + (1.0 / zeta).ceil().ln()) + 8.0 + 1.0 / nl.sigma2 + (d as f64).sqrt();

    let weights = ResNetWeights {
        kind: WeightKind::Ising,
        d,
        m: 0,
        embed,
        width,
        bound,
        t,
        zeta,
        w_in,
        blocks: vec![(w1, w2); layers],
        w_out,
    };
    weights.validate()?;
    Ok(weights)
}

/// Marginal (latent-block) variant: the iteration runs on the joint
/// `(d+m)`-dimensional field with `h = lambda_t sigma_t^{-2} [z; 0]`; the
/// output projects to the first `d` coordinates.
pub fn unroll_marginal(
    joint: ArrayView2<f64>,
    k: ArrayView2<f64>,
    d: usize,
    t: f64,
    layers: usize,
    pwl: &PwlDenoiser,
) -> Result<ResNetWeights> {
    let nl = noise_level(t)?;
    let p = joint.nrows();
    if joint.dim() != (p, p) || k.dim() != (p, p) || d > p {
        return Err(Error::ShapeMismatch(
            "joint coupling and K must be square with d <= d + m".into(),
        ));
    }
    let m = p - d;
    let u = &joint.to_owned() - &k.to_owned();
    let u_norm = op_norm(u.view());
    if u_norm >= 1.0 {
        return Err(Error::ContractionViolation(format!(
            "||A - K||_op = {u_norm:.6} >= 1"
        )));
    }
    let layout = IterateLayout { p, pwl };
    let embed = 3 * p;
    let width = layout.width();

    let mut w_in = Array2::zeros((embed, d + 1));
    set_scaled_identity(&mut w_in, p, 0, d, 1.0 / nl.sigma2);
    for i in 0..p {
        w_in[[2 * p + i, d]] = 1.0;
    }

    let w2 = layout.w2(embed, 2 * p, |w2, r| {
        set_block(w2, r, 0, u.view());
        set_scaled_identity(w2, r, p, p, nl.lambda);
    });
    let w1 = layout.w1(embed);

    let mut w_out = Array2::zeros((d, embed));
    set_scaled_identity(&mut w_out, 0, 0, d, nl.lambda / nl.sigma2);
    set_scaled_identity(&mut w_out, 0, p, d, -1.0);

    let zeta = pwl.zeta();
    let jb = knot_count_bound(zeta, 1.0);
    let bound = jb * ((1.0 / zeta).ceil().ln() + 4.0) + 8.0 + (p as f64).sqrt() + 1.0 / nl.sigma2;

    let weights = ResNetWeights {
        kind: WeightKind::Marginal,
        d,
        m,
        embed,
        width,
        bound,
        t,
        zeta,
        w_in,
        blocks: vec![(w1, w2); layers],
        w_out,
    };
    // marginal nets take only z; the latent block never enters the input
    debug_assert_eq!(weights.theta_len(), 0);
    weights.validate()?;
    Ok(weights)
}

/// Conditional variant: input `[z; theta; 1]`, state
/// `[m; sigma_t^{-2} z; A12 theta; 1_d]`,
/// iteration `m <- f((A11 - K) m + A12 theta + lambda_t sigma_t^{-2} z)`.
pub fn unroll_conditional(
    a11: ArrayView2<f64>,
    a12: ArrayView2<f64>,
    k: ArrayView2<f64>,
    t: f64,
    layers: usize,
    pwl: &PwlDenoiser,
) -> Result<ResNetWeights> {
    let nl = noise_level(t)?;
    let d = a11.nrows();
    let m = a12.ncols();
    if a11.dim() != (d, d) || k.dim() != (d, d) || a12.nrows() != d {
        return Err(Error::ShapeMismatch(
            "conditional block shapes disagree".into(),
        ));
    }
    let u = &a11.to_owned() - &k.to_owned();
    let u_norm = op_norm(u.view());
    if u_norm >= 1.0 {
        return Err(Error::ContractionViolation(format!(
            "||A11 - K||_op = {u_norm:.6} >= 1"
        )));
    }
    let layout = IterateLayout { p: d, pwl };
    let embed = 4 * d;
    let width = layout.width();

    let mut w_in = Array2::zeros((embed, d + m + 1));
    set_scaled_identity(&mut w_in, d, 0, d, 1.0 / nl.sigma2);
    set_block(&mut w_in, 2 * d, d, a12.view());
    for i in 0..d {
        w_in[[3 * d + i, d + m]] = 1.0;
    }

    let w2 = layout.w2(embed, 3 * d, |w2, r| {
        set_block(w2, r, 0, u.view());
        set_scaled_identity(w2, r, d, d, nl.lambda);
        // the A12 theta channel enters the argument unweighted
        set_scaled_identity(w2, r, 2 * d, d, 1.0);
    });
    let w1 = layout.w1(embed);

    let mut w_out = Array2::zeros((d, embed));
    set_scaled_identity(&mut w_out, 0, 0, d, nl.lambda / nl.sigma2);
    set_scaled_identity(&mut w_out, 0, d, d, -1.0);

    let zeta = pwl.zeta();
    let a12_op = op_norm(a12.view());
    let jb = knot_count_bound(zeta, 1.0);
    let bound = jb * ((1.0 / zeta).ceil().ln() + 4.0 + a12_op)
        + 8.0
        + 1.0 / nl.sigma2
        + a12_op
        + (d as f64).sqrt();

    let weights = ResNetWeights {
        kind: WeightKind::Conditional,
        d,
        m,
        embed,
        width,
        bound,
        t,
        zeta,
        w_in,
        blocks: vec![(w1, w2); layers],
        w_out,
    };
    weights.validate()?;
    Ok(weights)
}

/// Sparse-coding variant: state `[e; tau_bar^{-2} A^T z / lambda_t; 1_m; z]`,
/// iteration `e <- f((K_t - tau_bar^{-2} A^T A) e + tau_bar^{-2} A^T z*)`,
/// output `(lambda_t A e^L(z/lambda_t) - z)/(sigma_t^2 + tau^2 lambda_t^2)`.
pub fn unroll_sparse(
    model: &SparseCodingModel,
    k_t: ArrayView2<f64>,
    t: f64,
    layers: usize,
    pwl: &PwlDenoiser,
) -> Result<ResNetWeights> {
    let nl = noise_level(t)?;
    let d = model.dim();
    let m = model.n_atoms();
    if k_t.dim() != (m, m) {
        return Err(Error::ShapeMismatch(format!(
            "K_t must be {m} x {m}, got {:?}",
            k_t.dim()
        )));
    }
    let a = model.dictionary();
    let tau_bar2 = model.tau_bar2(&nl);
    let gram = a.t().dot(&a);
    let u = &k_t.to_owned() - &gram.mapv(|v| v / tau_bar2);
    let u_norm = op_norm(u.view());
    let pi = model.pi();
    if pi * pi * u_norm >= 1.0 {
        return Err(Error::ContractionViolation(format!(
            "Pi^2 ||A^T A / tau_bar^2 - K_t||_op = {:.6} >= 1",
            pi * pi * u_norm
        )));
    }
    let layout = IterateLayout { p: m, pwl };
    let embed = 3 * m + d;
    let width = layout.width();
    let denom = nl.sigma2 + model.tau() * model.tau() * nl.lambda * nl.lambda;

    let mut w_in = Array2::zeros((embed, d + 1));
    let at_scaled = a.t().mapv(|v| v / (tau_bar2 * nl.lambda));
    set_block(&mut w_in, m, 0, at_scaled.view());
    for i in 0..m {
        w_in[[2 * m + i, d]] = 1.0;
    }
    set_scaled_identity(&mut w_in, 3 * m, 0, d, 1.0);

    let w2 = layout.w2(embed, 2 * m, |w2, r| {
        set_block(w2, r, 0, u.view());
        set_scaled_identity(w2, r, m, m, 1.0);
    });
    let w1 = layout.w1(embed);

    let mut w_out = Array2::zeros((d, embed));
    let a_out = a.mapv(|v| v * nl.lambda / denom);
    set_block(&mut w_out, 0, 0, a_out.view());
    set_scaled_identity(&mut w_out, 0, 3 * m, d, -1.0 / denom);

    let zeta = pwl.zeta();
    let a_op = op_norm(a);
    let jb = knot_count_bound(zeta, pi);
    let w_zeta = pwl.max_breakpoint();
    let bound = jb * (u_norm + 1.0 + 2.0 * pi * pi + w_zeta)
        + 2.0 * pi
        + 6.0
        + (a_op + 1.0) / nl.sigma2
        + a_op / (tau_bar2 * nl.lambda)
        + (m as f64).sqrt();

    let weights = ResNetWeights {
        kind: WeightKind::Sparse,
        d,
        m,
        embed,
        width,
        bound,
        t,
        zeta,
        w_in,
        blocks: vec![(w1, w2); layers],
        w_out,
    };
    weights.validate()?;
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DiscretePrior;
    use crate::variational::{build_pwl, PosteriorDenoiser, ScalarFn, TanhDenoiser};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    fn random_vec(n: usize, scale: f64, rng: &mut impl rand::Rng) -> Array1<f64> {
        Array1::from_shape_fn(n, |_| {
            let g: f64 = StandardNormal.sample(rng);
            scale * g
        })
    }

    /// Straight-line reference forward pass, no shared helpers.
    fn reference_forward(w: &ResNetWeights, input: &Array1<f64>) -> Array1<f64> {
        let mut u = Array1::zeros(w.embed);
        for r in 0..w.embed {
            let mut acc = 0.0;
            for c in 0..input.len() {
                acc += w.w_in[[r, c]] * input[c];
            }
            u[r] = acc;
        }
        for (w1, w2) in &w.blocks {
            let mut hidden = vec![0.0; w.width];
            for (r, h) in hidden.iter_mut().enumerate() {
                let mut acc = 0.0;
                for c in 0..w.embed {
                    acc += w2[[r, c]] * u[c];
                }
                *h = if acc > 0.0 { acc } else { 0.0 };
            }
            let mut next = u.clone();
            for r in 0..w.embed {
                let mut acc = 0.0;
                for (c, h) in hidden.iter().enumerate() {
                    acc += w1[[r, c]] * h;
                }
                next[r] += acc;
            }
            u = next;
        }
        let mut out = Array1::zeros(w.d);
        for r in 0..w.d {
            let mut acc = 0.0;
            for c in 0..w.embed {
                acc += w.w_out[[r, c]] * u[c];
            }
            out[r] = acc;
        }
        out
    }

    /// Runs the pwl fixed-point iteration directly and maps it to the score.
    fn ising_trace_score(
        u: &Array2<f64>,
        h: &Array1<f64>,
        pwl: &PwlDenoiser,
        layers: usize,
        z: &Array1<f64>,
        nl: &crate::schedule::NoiseLevel,
    ) -> Array1<f64> {
        let mut m = Array1::zeros(h.len());
        for _ in 0..layers {
            let mut arg = u.dot(&m);
            arg += h;
            m = arg.mapv(|v| pwl.eval(v));
        }
        let mut s = m.mapv(|v| v * nl.lambda);
        s.zip_mut_with(z, |si, &zi| *si = (*si - zi) / nl.sigma2);
        s
    }

    #[test]
    fn forward_matches_straight_line_reimplementation() {
        let mut rng = crate::rng::root(41);
        let d = 4;
        let embed = 6;
        let width = 5;
        let mk = |r: usize, c: usize, rng: &mut crate::rng::Rng| {
            Array2::from_shape_fn((r, c), |_| {
                let g: f64 = StandardNormal.sample(rng);
                0.3 * g
            })
        };
        let w = ResNetWeights {
            kind: WeightKind::Generic,
            d,
            m: 0,
            embed,
            width,
            bound: 100.0,
            t: 1.0,
            zeta: 0.0,
            w_in: mk(embed, d + 1, &mut rng),
            blocks: (0..3)
                .map(|_| (mk(embed, width, &mut rng), mk(width, embed, &mut rng)))
                .collect(),
            w_out: mk(d, embed, &mut rng),
        };
        for _ in 0..20 {
            let z = random_vec(d, 1.0, &mut rng);
            let got = w.forward(z.view(), None).unwrap();
            let mut input = Array1::zeros(d + 1);
            input.slice_mut(s![..d]).assign(&z);
            input[d] = 1.0;
            let want = reference_forward(&w, &input);
            for i in 0..d {
                assert_abs_diff_eq!(got[i], want[i], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn zero_blocks_reduce_to_affine_map() {
        let mut rng = crate::rng::root(42);
        let d = 3;
        let w_in = Array2::from_shape_fn((5, d + 1), |_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let w_out = Array2::from_shape_fn((d, 5), |_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let zero_blocks = ResNetWeights {
            kind: WeightKind::Generic,
            d,
            m: 0,
            embed: 5,
            width: 4,
            bound: 10.0,
            t: 1.0,
            zeta: 0.0,
            w_in: w_in.clone(),
            blocks: vec![(Array2::zeros((5, 4)), Array2::zeros((4, 5))); 2],
            w_out: w_out.clone(),
        };
        let no_blocks = ResNetWeights {
            blocks: vec![],
            ..zero_blocks.clone()
        };
        let z = array![0.4, -1.0, 0.2];
        let a = zero_blocks.forward(z.view(), None).unwrap();
        let b = no_blocks.forward(z.view(), None).unwrap();
        let mut input = Array1::zeros(d + 1);
        input.slice_mut(s![..d]).assign(&z);
        input[d] = 1.0;
        let want = w_out.dot(&w_in.dot(&input));
        for i in 0..d {
            assert_abs_diff_eq!(a[i], want[i], epsilon = 1e-14);
            assert_abs_diff_eq!(b[i], want[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn ising_unroll_reproduces_iteration_trace() {
        let mut rng = crate::rng::root(55);
        let d = 3;
        let a = crate::linalg::random_symmetric_with_op_norm(d, 0.6, &mut rng);
        let k = Array2::zeros((d, d));
        let t = 0.8;
        let nl = noise_level(t).unwrap();
        let pwl = build_pwl(&TanhDenoiser, 0.1).unwrap();
        let layers = 4;
        let w = unroll_ising(a.view(), k.view(), t, layers, &pwl).unwrap();
        let u = a.clone();
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let z = random_vec(d, 1.5, &mut rng);
            let h = z.mapv(|v| v * nl.tilt());
            let want = ising_trace_score(&u, &h, &pwl, layers, &z, &nl);
            let got = w.forward_checked(z.view(), None).unwrap();
            for i in 0..d {
                worst = worst.max((got[i] - want[i]).abs());
            }
        }
        assert!(worst <= 1e-9, "max deviation {worst}");
    }

    #[test]
    fn ising_zero_layers_zero_input_gives_zero() {
        let pwl = build_pwl(&TanhDenoiser, 0.2).unwrap();
        let a = Array2::zeros((3, 3));
        let w = unroll_ising(a.view(), a.view(), 0.5, 0, &pwl).unwrap();
        let out = w.forward(array![0.0, 0.0, 0.0].view(), None).unwrap();
        for v in out.iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn ising_norm_certified_by_lemma_formula() {
        let mut rng = crate::rng::root(77);
        for zeta in [0.25, 0.1, 0.05] {
            let d = 4;
            let a = crate::linalg::random_symmetric_with_op_norm(d, 0.5, &mut rng);
            let pwl = build_pwl(&TanhDenoiser, zeta).unwrap();
            let w = unroll_ising(a.view(), Array2::zeros((d, d)).view(), 0.6, 3, &pwl).unwrap();
            let nrm = weight_norm(&w);
            assert!(
                nrm <= w.bound + 1e-9,
                "zeta {zeta}: norm {nrm} exceeds bound {}",
                w.bound
            );
        }
    }

    #[test]
    fn conditional_ignores_theta_when_uncoupled() {
        let mut rng = crate::rng::root(31);
        let d = 3;
        let m = 2;
        let a11 = crate::linalg::random_symmetric_with_op_norm(d, 0.5, &mut rng);
        let a12 = Array2::zeros((d, m));
        let pwl = build_pwl(&TanhDenoiser, 0.1).unwrap();
        let w = unroll_conditional(
            a11.view(),
            a12.view(),
            Array2::zeros((d, d)).view(),
            0.7,
            5,
            &pwl,
        )
        .unwrap();
        let z = array![0.4, -0.2, 1.0];
        let o1 = w.forward(z.view(), Some(array![1.0, 1.0].view())).unwrap();
        let o2 = w
            .forward(z.view(), Some(array![-1.0, -1.0].view()))
            .unwrap();
        for i in 0..d {
            assert_abs_diff_eq!(o1[i], o2[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn marginal_with_no_latent_acts_like_ising() {
        let mut rng = crate::rng::root(90);
        let d = 3;
        let a = crate::linalg::random_symmetric_with_op_norm(d, 0.5, &mut rng);
        let k = Array2::zeros((d, d));
        let pwl = build_pwl(&TanhDenoiser, 0.1).unwrap();
        let wi = unroll_ising(a.view(), k.view(), 0.6, 4, &pwl).unwrap();
        let wm = unroll_marginal(a.view(), k.view(), d, 0.6, 4, &pwl).unwrap();
        for _ in 0..20 {
            let z = random_vec(d, 1.0, &mut rng);
            let oi = wi.forward(z.view(), None).unwrap();
            let om = wm.forward(z.view(), None).unwrap();
            for i in 0..d {
                assert_abs_diff_eq!(oi[i], om[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sparse_unroll_reproduces_its_trace() {
        let mut rng = crate::rng::root(66);
        let d = 4;
        let m = 3;
        let dict = Array2::from_shape_fn((d, m), |_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            0.3 * g
        });
        let model =
            crate::models::SparseCodingModel::new(dict.clone(), DiscretePrior::two_point(1.0), 1.0)
                .unwrap();
        let t = 0.5;
        let nl = noise_level(t).unwrap();
        let nu = 0.4;
        let target = PosteriorDenoiser::new(model.prior().clone(), nu);
        let pwl = build_pwl(&target, 0.05).unwrap();
        let layers = 6;
        let k_t = Array2::zeros((m, m));
        let w = unroll_sparse(&model, k_t.view(), t, layers, &pwl).unwrap();

        let tau_bar2 = model.tau_bar2(&nl);
        let gram = dict.t().dot(&dict);
        let u = gram.mapv(|v| -v / tau_bar2);
        let denom = nl.sigma2 + model.tau() * model.tau() * nl.lambda * nl.lambda;
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let z = random_vec(d, 1.0, &mut rng);
            let z_star = z.mapv(|v| v / nl.lambda);
            let h = dict.t().dot(&z_star).mapv(|v| v / tau_bar2);
            let mut e = Array1::zeros(m);
            for _ in 0..layers {
                let mut arg = u.dot(&e);
                arg += &h;
                e = arg.mapv(|v| pwl.eval(v));
            }
            let mut want = dict.dot(&e);
            want.zip_mut_with(&z, |wi, &zi| *wi = (nl.lambda * *wi - zi) / denom);
            let got = w.forward_checked(z.view(), None).unwrap();
            for i in 0..d {
                worst = worst.max((got[i] - want[i]).abs());
            }
        }
        assert!(worst <= 1e-9, "max deviation {worst}");
        assert!(weight_norm(&w) <= w.bound + 1e-9);
    }

    #[test]
    fn truncation_identity_inside_ball() {
        let mut rng = crate::rng::root(12);
        let d = 4;
        let a = crate::linalg::random_symmetric_with_op_norm(d, 0.5, &mut rng);
        let model = crate::models::IsingModel::new(a).unwrap();
        let t = 0.7;
        let nl = noise_level(t).unwrap();
        let spec = TruncationSpec::ising(d, &nl);
        let z = random_vec(d, 1.0, &mut rng);
        let s = model.exact_score(t, z.view()).unwrap();
        let out = spec.apply(s.view(), z.view());
        for i in 0..d {
            assert_abs_diff_eq!(out[i], s[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn truncation_scales_overflow_to_radius() {
        let nl = noise_level(0.5).unwrap();
        let spec = TruncationSpec::ising(2, &nl);
        let z = array![0.0, 0.0];
        // shifted value of norm 2R projects onto norm exactly R
        let dir = array![3.0, 4.0];
        let scale = 2.0 * spec.radius / 5.0;
        let f = dir.mapv(|v| v * scale);
        let out = spec.apply(f.view(), z.view());
        assert_abs_diff_eq!(
            crate::linalg::l2_norm(out.view()),
            spec.radius,
            epsilon = 1e-12
        );
    }

    #[test]
    fn truncation_is_nonexpansive() {
        let mut rng = crate::rng::root(19);
        let nl = noise_level(0.3).unwrap();
        let spec = TruncationSpec::ising(5, &nl);
        for _ in 0..200 {
            let z = random_vec(5, 2.0, &mut rng);
            let f = random_vec(5, 30.0, &mut rng);
            let g = random_vec(5, 30.0, &mut rng);
            let pf = spec.apply(f.view(), z.view());
            let pg = spec.apply(g.view(), z.view());
            let before = crate::linalg::l2_norm((&f - &g).view());
            let after = crate::linalg::l2_norm((&pf - &pg).view());
            assert!(after <= before + 1e-12);
        }
    }

    #[test]
    fn weight_norm_on_simple_matrices() {
        let d = 3;
        let eye = Array2::eye(d);
        let w = ResNetWeights {
            kind: WeightKind::Generic,
            d,
            m: 0,
            embed: d,
            width: d,
            bound: 10.0,
            t: 1.0,
            zeta: 0.0,
            w_in: Array2::zeros((d, d + 1)),
            blocks: vec![(eye.clone(), eye.clone())],
            w_out: Array2::from_diag(&array![3.0, 1.0, 0.5]),
        };
        // identity pair sums to 2, w_out has norm 3
        assert_abs_diff_eq!(weight_norm(&w), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn operator_norm_matches_jacobi_svd_oracle() {
        // one-sided Jacobi singular values, written independently
        fn jacobi_svd_max(a: &Array2<f64>) -> f64 {
            let mut m = a.clone();
            let (rows, cols) = m.dim();
            for _ in 0..60 {
                let mut off = 0.0f64;
                for p in 0..cols {
                    for q in (p + 1)..cols {
                        let mut app = 0.0;
                        let mut aqq = 0.0;
                        let mut apq = 0.0;
                        for r in 0..rows {
                            app += m[[r, p]] * m[[r, p]];
                            aqq += m[[r, q]] * m[[r, q]];
                            apq += m[[r, p]] * m[[r, q]];
                        }
                        off = off.max(apq.abs());
                        if apq.abs() < 1e-15 {
                            continue;
                        }
                        let zeta = (aqq - app) / (2.0 * apq);
                        let t_rot = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                        let c = 1.0 / (1.0 + t_rot * t_rot).sqrt();
                        let s = c * t_rot;
                        for r in 0..rows {
                            let vp = m[[r, p]];
                            let vq = m[[r, q]];
                            m[[r, p]] = c * vp - s * vq;
                            m[[r, q]] = s * vp + c * vq;
                        }
                    }
                }
                if off < 1e-14 {
                    break;
                }
            }
            let mut best = 0.0f64;
            for p in 0..cols {
                let mut col = 0.0;
                for r in 0..rows {
                    col += m[[r, p]] * m[[r, p]];
                }
                best = best.max(col.sqrt());
            }
            best
        }

        let mut rng = crate::rng::root(23);
        let a = Array2::from_shape_fn((20, 20), |_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let want = jacobi_svd_max(&a);
        let got = op_norm(a.view());
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}
