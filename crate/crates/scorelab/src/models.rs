//! Ground-truth generative models and brute-force oracles.
//!
//! Everything here is exact at small dimension: distributions over `{-1,+1}^d`
//! are enumerated state by state (hard cap of 22 binary variables), posterior
//! means are weighted sums over the full state space, and the sparse-coding
//! posterior iterates the full product support of the coefficient prior.
//! Partition sums are accumulated in the log domain.
//!
//! These oracles are the reference that every approximate route (fixed-point
//! solver, unrolled network, trained network) is measured against.

use crate::linalg::log_sum_exp;
use crate::schedule::{noise_level, NoiseLevel};
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

/// Hard cap on the number of enumerated binary variables (about 4M states).
pub const ENUM_CAP: usize = 22;

fn check_enum_dim(dim: usize) -> Result<()> {
    if dim > ENUM_CAP {
        return Err(Error::DimensionTooLarge { dim, cap: ENUM_CAP });
    }
    Ok(())
}

/// Spin vector for a state index: bit `i` set means `x_i = +1`.
pub fn spins_of_state(state: u32, dim: usize) -> Array1<f64> {
    Array1::from_shape_fn(dim, |i| if state >> i & 1 == 1 { 1.0 } else { -1.0 })
}

/// State index of a `{-1,+1}` vector.
pub fn state_of_spins(spins: ArrayView1<f64>) -> u32 {
    let mut s = 0u32;
    for (i, &x) in spins.iter().enumerate() {
        if x > 0.0 {
            s |= 1 << i;
        }
    }
    s
}

/// Log weights `log w(x) = <x, A x>/2 + <field, x>` over all `2^d` states,
/// indexed by state. Runs in Gray-code order with incremental updates and a
/// periodic exact recompute to cancel accumulated drift.
fn enumerate_log_weights(coupling: ArrayView2<f64>, field: Option<ArrayView1<f64>>) -> Vec<f64> {
    let d = coupling.nrows();
    let n_states = 1usize << d;
    let mut log_w = vec![0.0; n_states];

    let mut x = Array1::from_elem(d, -1.0);
    // local fields l_i = sum_j A_ij x_j
    let mut local = coupling.dot(&x);
    let exact_energy = |x: &Array1<f64>| -> f64 {
        let mut e = 0.5 * x.dot(&coupling.dot(x));
        if let Some(h) = field {
            e += h.dot(x);
        }
        e
    };
    let mut e = exact_energy(&x);
    let mut state: u32 = 0;
    log_w[0] = e;

    for k in 1..n_states {
        // Gray code: flip the bit at the position of the lowest set bit of k.
        let flip = k.trailing_zeros() as usize;
        let xi_old = x[flip];
        // <x,Ax>/2 loses the cross terms of spin `flip`; diagonal is unchanged.
        e -= 2.0 * xi_old * (local[flip] - coupling[[flip, flip]] * xi_old);
        if let Some(h) = field {
            e -= 2.0 * xi_old * h[flip];
        }
        x[flip] = -xi_old;
        state ^= 1 << flip;
        for j in 0..d {
            local[j] -= 2.0 * coupling[[j, flip]] * xi_old;
        }
        if k % 4096 == 0 {
            e = exact_energy(&x);
            local = coupling.dot(&x);
        }
        log_w[state as usize] = e;
    }
    log_w
}

/// Exact probability table over `{-1,+1}^dim`, indexed by state.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiscreteDistribution {
    dim: usize,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    /// Normalizes a probability table over all `2^dim` states.
    pub fn new(dim: usize, probs: Vec<f64>) -> Result<Self> {
        check_enum_dim(dim)?;
        if probs.len() != 1usize << dim {
            return Err(Error::ShapeMismatch(format!(
                "need 2^{dim} probabilities, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidModel(
                "probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!(
                "probabilities sum to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(Self { dim, probs })
    }

    fn from_log_weights(dim: usize, log_w: &[f64]) -> Self {
        let lse = log_sum_exp(log_w);
        let probs = log_w.iter().map(|lw| (lw - lse).exp()).collect();
        Self { dim, probs }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, state: u32) -> f64 {
        self.probs[state as usize]
    }

    /// Mean spin vector under the table.
    pub fn mean(&self) -> Array1<f64> {
        let mut m = Array1::zeros(self.dim);
        for (s, &p) in self.probs.iter().enumerate() {
            for i in 0..self.dim {
                let x = if s >> i & 1 == 1 { 1.0 } else { -1.0 };
                m[i] += p * x;
            }
        }
        m
    }

    /// `n` IID state draws by inverse CDF.
    pub fn sample_states(&self, n: usize, rng: &mut impl rand::Rng) -> Vec<u32> {
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for &p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
                    Ok(i) | Err(i) => (i.min(cdf.len() - 1)) as u32,
                }
            })
            .collect()
    }
}

/// Ising model `mu(x) ∝ exp(<x, A x>/2)` on `{-1,+1}^d` with symmetric
/// coupling `A`. The diagonal of `A` only shifts the energy by a constant,
/// so any symmetric matrix is accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    coupling: Array2<f64>,
}

impl IsingModel {
    pub fn new(coupling: Array2<f64>) -> Result<Self> {
        let (r, c) = coupling.dim();
        if r != c || r == 0 {
            return Err(Error::InvalidModel(format!(
                "coupling must be square and nonempty, got {r} x {c}"
            )));
        }
        for i in 0..r {
            for j in (i + 1)..r {
                if (coupling[[i, j]] - coupling[[j, i]]).abs() > 1e-12 {
                    return Err(Error::InvalidModel(format!(
                        "coupling not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if coupling.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(
                "coupling has non-finite entries".into(),
            ));
        }
        Ok(Self { coupling })
    }

    pub fn dim(&self) -> usize {
        self.coupling.nrows()
    }

    pub fn coupling(&self) -> ArrayView2<'_, f64> {
        self.coupling.view()
    }

    /// Exact normalized probability table over all `2^d` configurations.
    pub fn enumerate(&self) -> Result<DiscreteDistribution> {
        check_enum_dim(self.dim())?;
        let log_w = enumerate_log_weights(self.coupling.view(), None);
        Ok(DiscreteDistribution::from_log_weights(self.dim(), &log_w))
    }

    /// `n` IID spin vectors via inverse CDF over the enumerated table.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Array1<f64>>> {
        let table = self.enumerate()?;
        let mut rng = crate::rng::root(seed);
        Ok(table
            .sample_states(n, &mut rng)
            .into_iter()
            .map(|s| spins_of_state(s, self.dim()))
            .collect())
    }

    /// Posterior mean `m_t(z) = E[x | lambda_t x + sigma_t g = z]`.
    pub fn exact_denoiser(&self, t: f64, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        let nl = noise_level(t)?;
        self.check_z(z)?;
        check_enum_dim(self.dim())?;
        let field = z.mapv(|v| v * nl.tilt());
        let log_w = enumerate_log_weights(self.coupling.view(), Some(field.view()));
        Ok(posterior_mean_from_log_weights(&log_w, self.dim()))
    }

    /// Score of the noised density via Tweedie: `(lambda m_t(z) - z)/sigma^2`.
    pub fn exact_score(&self, t: f64, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        let nl = noise_level(t)?;
        let m = self.exact_denoiser(t, z)?;
        Ok(score_from_denoiser(&m, z, &nl))
    }

    /// Log density of `z = lambda_t x + sigma_t g` (Gaussian mixture over the
    /// enumerated states). Independent route used by finite-difference checks.
    pub fn log_noised_density(&self, t: f64, z: ArrayView1<f64>) -> Result<f64> {
        let nl = noise_level(t)?;
        self.check_z(z)?;
        let table = self.enumerate()?;
        let d = self.dim();
        let mut terms = Vec::with_capacity(table.probs().len());
        for (s, &p) in table.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let x = spins_of_state(s as u32, d);
            let mut sq = 0.0;
            for i in 0..d {
                let r = z[i] - nl.lambda * x[i];
                sq += r * r;
            }
            terms.push(p.ln() - sq / (2.0 * nl.sigma2));
        }
        Ok(log_sum_exp(&terms) - d as f64 / 2.0 * (2.0 * std::f64::consts::PI * nl.sigma2).ln())
    }

    /// Distribution of `sign(Z)` for `Z ~ mu_t`; the artifact's rounding
    /// convention for discrete-KL reporting.
    pub fn rounded_noised_distribution(&self, t: f64) -> Result<DiscreteDistribution> {
        let nl = noise_level(t)?;
        let table = self.enumerate()?;
        let d = self.dim();
        let sigma = nl.sigma2.sqrt();
        let n_states = 1usize << d;
        let mut probs = vec![0.0; n_states];
        // P(sign pattern s | x) factorizes over coordinates.
        for (x_state, &p) in table.probs().iter().enumerate() {
            let x = spins_of_state(x_state as u32, d);
            // per-coordinate flip probabilities P(sign(Z_i) = +1 | x_i)
            let up: Vec<f64> = (0..d)
                .map(|i| gauss_cdf(nl.lambda * x[i] / sigma))
                .collect();
            for (s, slot) in probs.iter_mut().enumerate() {
                let mut q = p;
                for (i, u) in up.iter().enumerate() {
                    q *= if s >> i & 1 == 1 { *u } else { 1.0 - *u };
                }
                *slot += q;
            }
        }
        DiscreteDistribution::new(d, probs)
    }

    fn check_z(&self, z: ArrayView1<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "z has length {}, model dimension is {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Standard normal CDF.
pub fn gauss_cdf(u: f64) -> f64 {
    0.5 * (1.0 + libm::erf(u / std::f64::consts::SQRT_2))
}

/// Tweedie identity `s = (lambda m - z)/sigma^2`.
pub fn score_from_denoiser(m: &Array1<f64>, z: ArrayView1<f64>, nl: &NoiseLevel) -> Array1<f64> {
    let mut s = m.mapv(|v| v * nl.lambda);
    s.zip_mut_with(&z, |si, &zi| *si = (*si - zi) / nl.sigma2);
    s
}

fn posterior_mean_from_log_weights(log_w: &[f64], dim: usize) -> Array1<f64> {
    let lse = log_sum_exp(log_w);
    let mut m = Array1::zeros(dim);
    for (s, lw) in log_w.iter().enumerate() {
        let p = (lw - lse).exp();
        for i in 0..dim {
            let x = if s >> i & 1 == 1 { 1.0 } else { -1.0 };
            m[i] += p * x;
        }
    }
    m
}

/// Two-block Ising model over `(x, theta) in {-1,+1}^{d+m}`:
/// `mu(x, theta) ∝ exp(<x,A11 x>/2 + <x, A12 theta> + <theta, A22 theta>/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockIsingModel {
    a11: Array2<f64>,
    a12: Array2<f64>,
    a22: Array2<f64>,
}

impl BlockIsingModel {
    pub fn new(a11: Array2<f64>, a12: Array2<f64>, a22: Array2<f64>) -> Result<Self> {
        let d = a11.nrows();
        let m = a22.nrows();
        if a11.ncols() != d || d == 0 {
            return Err(Error::InvalidModel(
                "A11 must be square and nonempty".into(),
            ));
        }
        if a22.ncols() != m {
            return Err(Error::InvalidModel("A22 must be square".into()));
        }
        if a12.dim() != (d, m) {
            return Err(Error::InvalidModel(format!(
                "A12 must be {d} x {m}, got {:?}",
                a12.dim()
            )));
        }
        let sym = |a: &Array2<f64>, name: &str| -> Result<()> {
            for i in 0..a.nrows() {
                for j in (i + 1)..a.ncols() {
                    if (a[[i, j]] - a[[j, i]]).abs() > 1e-12 {
                        return Err(Error::InvalidModel(format!("{name} not symmetric")));
                    }
                }
            }
            Ok(())
        };
        sym(&a11, "A11")?;
        sym(&a22, "A22")?;
        if a11
            .iter()
            .chain(a12.iter())
            .chain(a22.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidModel(
                "block coupling has non-finite entries".into(),
            ));
        }
        Ok(Self { a11, a12, a22 })
    }

    pub fn dim(&self) -> usize {
        self.a11.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.a22.nrows()
    }

    pub fn a11(&self) -> ArrayView2<'_, f64> {
        self.a11.view()
    }

    pub fn a12(&self) -> ArrayView2<'_, f64> {
        self.a12.view()
    }

    pub fn a22(&self) -> ArrayView2<'_, f64> {
        self.a22.view()
    }

    /// Full `(d+m) x (d+m)` coupling `[A11, A12; A12^T, A22]`.
    pub fn joint_coupling(&self) -> Array2<f64> {
        let d = self.dim();
        let m = self.latent_dim();
        let mut a = Array2::zeros((d + m, d + m));
        for i in 0..d {
            for j in 0..d {
                a[[i, j]] = self.a11[[i, j]];
            }
            for j in 0..m {
                a[[i, d + j]] = self.a12[[i, j]];
                a[[d + j, i]] = self.a12[[i, j]];
            }
        }
        for i in 0..m {
            for j in 0..m {
                a[[d + i, d + j]] = self.a22[[i, j]];
            }
        }
        a
    }

    /// The joint `(x, theta)` distribution as a plain Ising model on `d+m` spins.
    pub fn as_joint_ising(&self) -> Result<IsingModel> {
        IsingModel::new(self.joint_coupling())
    }

    /// `n` IID joint draws `(x, theta)`.
    pub fn sample_joint(&self, n: usize, seed: u64) -> Result<Vec<(Array1<f64>, Array1<f64>)>> {
        let d = self.dim();
        let joint = self.as_joint_ising()?;
        Ok(joint
            .sample(n, seed)?
            .into_iter()
            .map(|xy| {
                let x = xy.slice(ndarray::s![..d]).to_owned();
                let th = xy.slice(ndarray::s![d..]).to_owned();
                (x, th)
            })
            .collect())
    }

    /// Conditional posterior mean `m_t(z; theta) = E[x | theta, z]`,
    /// enumerating over `{-1,+1}^d` with `theta` held fixed.
    pub fn conditional_denoiser(
        &self,
        theta: ArrayView1<f64>,
        t: f64,
        z: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        let nl = noise_level(t)?;
        self.check_theta(theta)?;
        self.check_z(z)?;
        check_enum_dim(self.dim())?;
        // field = A12 theta + (lambda/sigma^2) z
        let mut field = self.a12.dot(&theta);
        field.zip_mut_with(&z, |f, &zi| *f += nl.tilt() * zi);
        let log_w = enumerate_log_weights(self.a11.view(), Some(field.view()));
        Ok(posterior_mean_from_log_weights(&log_w, self.dim()))
    }

    pub fn conditional_score(
        &self,
        theta: ArrayView1<f64>,
        t: f64,
        z: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        let nl = noise_level(t)?;
        let m = self.conditional_denoiser(theta, t, z)?;
        Ok(score_from_denoiser(&m, z, &nl))
    }

    /// Marginal posterior mean: enumerate `(x, theta)` jointly, observe `z`
    /// on the `x` block only, return the first `d` coordinates of the mean.
    pub fn marginal_denoiser(&self, t: f64, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        let nl = noise_level(t)?;
        self.check_z(z)?;
        let d = self.dim();
        let m = self.latent_dim();
        check_enum_dim(d + m)?;
        let mut field = Array1::zeros(d + m);
        for i in 0..d {
            field[i] = nl.tilt() * z[i];
        }
        let log_w = enumerate_log_weights(self.joint_coupling().view(), Some(field.view()));
        let full = posterior_mean_from_log_weights(&log_w, d + m);
        Ok(full.slice(ndarray::s![..d]).to_owned())
    }

    pub fn marginal_score(&self, t: f64, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        let nl = noise_level(t)?;
        let m = self.marginal_denoiser(t, z)?;
        Ok(score_from_denoiser(&m, z, &nl))
    }

    /// Log density of `z` when `x` is drawn from the marginal of the joint
    /// model; the finite-difference reference for the marginal score.
    pub fn log_marginal_noised_density(&self, t: f64, z: ArrayView1<f64>) -> Result<f64> {
        let nl = noise_level(t)?;
        self.check_z(z)?;
        let d = self.dim();
        let joint = self.as_joint_ising()?;
        let table = joint.enumerate()?;
        let mut terms = Vec::with_capacity(table.probs().len());
        for (s, &p) in table.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut sq = 0.0;
            for i in 0..d {
                let x = if s >> i & 1 == 1 { 1.0 } else { -1.0 };
                let r = z[i] - nl.lambda * x;
                sq += r * r;
            }
            terms.push(p.ln() - sq / (2.0 * nl.sigma2));
        }
        Ok(log_sum_exp(&terms) - d as f64 / 2.0 * (2.0 * std::f64::consts::PI * nl.sigma2).ln())
    }

    fn check_theta(&self, theta: ArrayView1<f64>) -> Result<()> {
        if theta.len() != self.latent_dim() {
            return Err(Error::ShapeMismatch(format!(
                "theta has length {}, latent dimension is {}",
                theta.len(),
                self.latent_dim()
            )));
        }
        if theta.iter().any(|v| v.abs() != 1.0) {
            return Err(Error::ShapeMismatch("theta entries must be +-1".into()));
        }
        Ok(())
    }

    fn check_z(&self, z: ArrayView1<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "z has length {}, model dimension is {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Finite prior on coefficient values, atoms within `[-Pi, Pi]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiscretePrior {
    atoms: Vec<(f64, f64)>,
}

impl DiscretePrior {
    /// Atoms as `(value, probability)` pairs; probabilities must sum to one.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyPrior);
        }
        if atoms
            .iter()
            .any(|(v, p)| !v.is_finite() || !p.is_finite() || *p < 0.0)
        {
            return Err(Error::InvalidModel(
                "prior atoms must be finite with nonnegative mass".into(),
            ));
        }
        let total: f64 = atoms.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!(
                "prior masses sum to {total}, expected 1 within 1e-12"
            )));
        }
        Ok(Self { atoms })
    }

    /// Symmetric two-point prior on `{-pi, +pi}`.
    pub fn two_point(pi: f64) -> Self {
        Self {
            atoms: vec![(-pi, 0.5), (pi, 0.5)],
        }
    }

    /// Point mass at `value`.
    pub fn dirac(value: f64) -> Self {
        Self {
            atoms: vec![(value, 1.0)],
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Support bound `Pi = max |atom|`.
    pub fn support_bound(&self) -> f64 {
        self.atoms.iter().map(|(v, _)| v.abs()).fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(v, p)| v * p).sum()
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(v, p) in &self.atoms {
            acc += p;
            if u < acc {
                return v;
            }
        }
        self.atoms.last().unwrap().0
    }
}

/// Sparse coding model `x = A theta + eps` with `theta_i ~ prior` IID and
/// `eps ~ N(0, tau^2 I_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodingModel {
    dictionary: Array2<f64>,
    prior: DiscretePrior,
    tau: f64,
}

impl SparseCodingModel {
    pub fn new(dictionary: Array2<f64>, prior: DiscretePrior, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::NonpositiveTau { tau });
        }
        if dictionary.nrows() == 0 || dictionary.ncols() == 0 {
            return Err(Error::InvalidModel("dictionary must be nonempty".into()));
        }
        if dictionary.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(
                "dictionary has non-finite entries".into(),
            ));
        }
        Ok(Self {
            dictionary,
            prior,
            tau,
        })
    }

    pub fn dim(&self) -> usize {
        self.dictionary.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.dictionary.ncols()
    }

    pub fn dictionary(&self) -> ArrayView2<'_, f64> {
        self.dictionary.view()
    }

    pub fn prior(&self) -> &DiscretePrior {
        &self.prior
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Support bound of the prior.
    pub fn pi(&self) -> f64 {
        self.prior.support_bound()
    }

    /// Effective observation noise `tau_bar_t^2 = tau^2 + sigma_t^2/lambda_t^2`
    /// on the rescaled observation `z/lambda_t`.
    pub fn tau_bar2(&self, nl: &NoiseLevel) -> f64 {
        self.tau * self.tau + nl.sigma2 / (nl.lambda * nl.lambda)
    }

    /// `n` IID draws of `x = A theta + eps`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Array1<f64>> {
        let mut rng = crate::rng::root(seed);
        (0..n)
            .map(|_| {
                let theta = Array1::from_shape_fn(self.n_atoms(), |_| self.prior.sample(&mut rng));
                let mut x = self.dictionary.dot(&theta);
                for v in x.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *v += self.tau * g;
                }
                x
            })
            .collect()
    }

    fn check_support_cap(&self) -> Result<()> {
        let states = (self.prior.len() as u128).checked_pow(self.n_atoms() as u32);
        let cap = 1u64 << ENUM_CAP;
        match states {
            Some(s) if s <= cap as u128 => Ok(()),
            Some(s) => Err(Error::SupportTooLarge { states: s, cap }),
            None => Err(Error::SupportTooLarge {
                states: u128::MAX,
                cap,
            }),
        }
    }

    /// Walks the full product support, calling `f(theta_indices, log_prior)`.
    fn for_each_support(&self, mut f: impl FnMut(&[usize], f64)) {
        let m = self.n_atoms();
        let k = self.prior.len();
        let log_p: Vec<f64> = self
            .prior
            .atoms()
            .iter()
            .map(|(_, p)| if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
            .collect();
        let mut idx = vec![0usize; m];
        loop {
            let lp: f64 = idx.iter().map(|&i| log_p[i]).sum();
            f(&idx, lp);
            // odometer increment
            let mut pos = 0;
            loop {
                if pos == m {
                    return;
                }
                idx[pos] += 1;
                if idx[pos] < k {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }

    fn theta_from_indices(&self, idx: &[usize]) -> Array1<f64> {
        Array1::from_shape_fn(idx.len(), |i| self.prior.atoms()[idx[i]].0)
    }

    /// Posterior mean `e_t(z*) = E[theta | z* = A theta + eps_bar]` with
    /// `eps_bar ~ N(0, tau_bar_t^2 I)`, by exact summation over the support.
    pub fn exact_posterior_mean(&self, t: f64, z_star: ArrayView1<f64>) -> Result<Array1<f64>> {
        let nl = noise_level(t)?;
        self.check_x_dim(z_star)?;
        self.check_support_cap()?;
        let tau_bar2 = self.tau_bar2(&nl);
        let m = self.n_atoms();
        let mut log_w = Vec::new();
        let mut thetas = Vec::new();
        self.for_each_support(|idx, lp| {
            let theta = self.theta_from_indices(idx);
            let r = &z_star.to_owned() - &self.dictionary.dot(&theta);
            let lw = lp - r.dot(&r) / (2.0 * tau_bar2);
            log_w.push(lw);
            thetas.push(theta);
        });
        let lse = log_sum_exp(&log_w);
        let mut e = Array1::zeros(m);
        for (lw, theta) in log_w.iter().zip(&thetas) {
            let p = (lw - lse).exp();
            e.zip_mut_with(theta, |ei, &ti| *ei += p * ti);
        }
        Ok(e)
    }

    /// Score of the noised density:
    /// `s_t(z) = -z/(tau^2 lambda^2 + sigma^2) + lambda/(tau^2 lambda^2 + sigma^2) A e_t(z/lambda)`.
    pub fn exact_score(&self, t: f64, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        let nl = noise_level(t)?;
        self.check_x_dim(z)?;
        let denom = self.tau * self.tau * nl.lambda * nl.lambda + nl.sigma2;
        let z_star = z.mapv(|v| v / nl.lambda);
        let e = self.exact_posterior_mean(t, z_star.view())?;
        let mut s = self.dictionary.dot(&e);
        s.zip_mut_with(&z, |si, &zi| *si = (nl.lambda * *si - zi) / denom);
        Ok(s)
    }

    /// Log density of `z = lambda_t x + sigma_t g`: a Gaussian mixture with
    /// one component per support point. Finite-difference reference.
    pub fn log_noised_density(&self, t: f64, z: ArrayView1<f64>) -> Result<f64> {
        let nl = noise_level(t)?;
        self.check_x_dim(z)?;
        self.check_support_cap()?;
        let v = nl.sigma2 + nl.lambda * nl.lambda * self.tau * self.tau;
        let d = self.dim();
        let mut terms = Vec::new();
        self.for_each_support(|idx, lp| {
            if lp == f64::NEG_INFINITY {
                return;
            }
            let theta = self.theta_from_indices(idx);
            let center = self.dictionary.dot(&theta);
            let mut sq = 0.0;
            for i in 0..d {
                let r = z[i] - nl.lambda * center[i];
                sq += r * r;
            }
            terms.push(lp - sq / (2.0 * v));
        });
        Ok(log_sum_exp(&terms) - d as f64 / 2.0 * (2.0 * std::f64::consts::PI * v).ln())
    }

    fn check_x_dim(&self, z: ArrayView1<f64>) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "vector has length {}, observation dimension is {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};

    #[test]
    fn zero_coupling_is_uniform() {
        let model = IsingModel::new(Array2::zeros((2, 2))).unwrap();
        let table = model.enumerate().unwrap();
        for s in 0..4u32 {
            assert_abs_diff_eq!(table.prob(s), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_spin_hand_enumeration() {
        // A = [[0, b], [b, 0]], b = 1: aligned states carry weight e,
        // anti-aligned carry 1/e.
        let b = 1.0f64;
        let model = IsingModel::new(array![[0.0, b], [b, 0.0]]).unwrap();
        let table = model.enumerate().unwrap();
        let z = 2.0 * b.exp() + 2.0 * (-b).exp();
        let p_aligned = b.exp() / z;
        let p_anti = (-b).exp() / z;
        // states: 0 = (-,-), 3 = (+,+), 1 = (+,-), 2 = (-,+)
        assert_abs_diff_eq!(table.prob(0), p_aligned, epsilon = 1e-14);
        assert_abs_diff_eq!(table.prob(3), p_aligned, epsilon = 1e-14);
        assert_abs_diff_eq!(table.prob(1), p_anti, epsilon = 1e-14);
        assert_abs_diff_eq!(table.prob(2), p_anti, epsilon = 1e-14);
    }

    #[test]
    fn random_table_normalized() {
        let mut rng = crate::rng::root(5);
        let a = crate::linalg::random_symmetric_with_op_norm(8, 0.7, &mut rng);
        let model = IsingModel::new(a).unwrap();
        let table = model.enumerate().unwrap();
        let total: f64 = table.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_rejects_large_dimension() {
        let model = IsingModel::new(Array2::zeros((23, 23))).unwrap();
        assert!(matches!(
            model.enumerate(),
            Err(Error::DimensionTooLarge { dim: 23, .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_unbiased() {
        let model = IsingModel::new(Array2::zeros((1, 1))).unwrap();
        let n = 100_000;
        let xs = model.sample(n, 42).unwrap();
        let ys = model.sample(n, 42).unwrap();
        assert_eq!(xs, ys);
        let mean: f64 = xs.iter().map(|x| x[0]).sum::<f64>() / n as f64;
        assert!(
            mean.abs() < 0.02,
            "empirical mean {mean} outside 5-sigma band"
        );
        assert!(model.sample(0, 1).unwrap().is_empty());
    }

    #[test]
    fn product_measure_denoiser_is_tanh() {
        let model = IsingModel::new(Array2::zeros((4, 4))).unwrap();
        let t = 0.7;
        let nl = noise_level(t).unwrap();
        let z = array![0.3, -1.2, 2.0, 0.0];
        let m = model.exact_denoiser(t, z.view()).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(m[i], (nl.tilt() * z[i]).tanh(), epsilon = 1e-12);
        }
        // z = 0 gives m = 0 by symmetry
        let m0 = model
            .exact_denoiser(t, array![0.0, 0.0, 0.0, 0.0].view())
            .unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(m0[i], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn denoiser_matches_direct_weighted_sum() {
        // Independent oracle: direct exp-weight loop, no log-domain tricks.
        let mut rng = crate::rng::root(9);
        let a = crate::linalg::random_symmetric_with_op_norm(3, 0.8, &mut rng);
        let model = IsingModel::new(a.clone()).unwrap();
        let t = 0.5;
        let nl = noise_level(t).unwrap();
        let z = array![0.4, -0.2, 1.1];
        let m = model.exact_denoiser(t, z.view()).unwrap();

        let mut num = Array1::<f64>::zeros(3);
        let mut den = 0.0;
        for s in 0..8u32 {
            let x = spins_of_state(s, 3);
            let mut resid = 0.0;
            for i in 0..3 {
                let r = z[i] - nl.lambda * x[i];
                resid += r * r;
            }
            let w = (0.5 * x.dot(&a.dot(&x))).exp() * (-resid / (2.0 * nl.sigma2)).exp();
            den += w;
            num.zip_mut_with(&x, |n, &xi| *n += w * xi);
        }
        for i in 0..3 {
            assert_abs_diff_eq!(m[i], num[i] / den, epsilon = 1e-12);
        }
    }

    #[test]
    fn tweedie_identity_exact() {
        let mut rng = crate::rng::root(13);
        let a = crate::linalg::random_symmetric_with_op_norm(4, 0.6, &mut rng);
        let model = IsingModel::new(a).unwrap();
        let t = 0.9;
        let nl = noise_level(t).unwrap();
        let z = array![0.1, -0.5, 0.7, 2.0];
        let s = model.exact_score(t, z.view()).unwrap();
        let m = model.exact_denoiser(t, z.view()).unwrap();
        for i in 0..4 {
            let lhs = s[i] * nl.sigma2 + z[i];
            let rhs = nl.lambda * m[i];
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-14);
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = crate::rng::root(21);
        let a = crate::linalg::random_symmetric_with_op_norm(4, 0.5, &mut rng);
        let model = IsingModel::new(a).unwrap();
        let t = 0.6;
        let z = array![0.2, -1.0, 0.4, 0.9];
        let s = model.exact_score(t, z.view()).unwrap();
        let h = 1e-4;
        for i in 0..4 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (model.log_noised_density(t, zp.view()).unwrap()
                - model.log_noised_density(t, zm.view()).unwrap())
                / (2.0 * h);
            assert!(
                (fd - s[i]).abs() <= 1e-6 * s[i].abs().max(1.0),
                "coordinate {i}: fd {fd} vs score {}",
                s[i]
            );
        }
    }

    #[test]
    fn deep_time_denoiser_approaches_prior_mean() {
        let mut rng = crate::rng::root(33);
        let a = crate::linalg::random_symmetric_with_op_norm(5, 0.6, &mut rng);
        let model = IsingModel::new(a).unwrap();
        let prior_mean = model.enumerate().unwrap().mean();
        let z = array![1.0, -2.0, 0.5, 3.0, -0.7];
        let m = model.exact_denoiser(20.0, z.view()).unwrap();
        for i in 0..5 {
            assert!((m[i] - prior_mean[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn conditional_ignores_theta_when_uncoupled() {
        let mut rng = crate::rng::root(3);
        let a11 = crate::linalg::random_symmetric_with_op_norm(3, 0.5, &mut rng);
        let model =
            BlockIsingModel::new(a11, Array2::zeros((3, 2)), Array2::zeros((2, 2))).unwrap();
        let z = array![0.3, 0.4, -0.8];
        let m1 = model
            .conditional_denoiser(array![1.0, 1.0].view(), 0.5, z.view())
            .unwrap();
        let m2 = model
            .conditional_denoiser(array![-1.0, 1.0].view(), 0.5, z.view())
            .unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(m1[i], m2[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn marginal_with_no_latent_matches_plain_ising() {
        let mut rng = crate::rng::root(8);
        let a11 = crate::linalg::random_symmetric_with_op_norm(4, 0.5, &mut rng);
        let block = BlockIsingModel::new(a11.clone(), Array2::zeros((4, 0)), Array2::zeros((0, 0)))
            .unwrap();
        let plain = IsingModel::new(a11).unwrap();
        let z = array![0.5, -0.1, 0.2, 1.5];
        let m_block = block.marginal_denoiser(0.8, z.view()).unwrap();
        let m_plain = plain.exact_denoiser(0.8, z.view()).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(m_block[i], m_plain[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn joint_brute_force_matches_marginal_and_conditional() {
        // d = 3, m = 2: direct sums over all 32 joint states.
        let mut rng = crate::rng::root(17);
        let a11 = crate::linalg::random_symmetric_with_op_norm(3, 0.4, &mut rng);
        let a22 = crate::linalg::random_symmetric_with_op_norm(2, 0.4, &mut rng);
        let a12 = Array2::from_shape_fn((3, 2), |_| {
            let g: f64 = rand_distr::Distribution::sample(&StandardNormal, &mut rng);
            0.2 * g
        });
        let model = BlockIsingModel::new(a11.clone(), a12.clone(), a22.clone()).unwrap();
        let t = 0.7;
        let nl = noise_level(t).unwrap();
        let z = array![0.3, -0.6, 0.9];

        // marginal oracle
        let mut num = Array1::<f64>::zeros(3);
        let mut den = 0.0;
        for s in 0..32u32 {
            let xy = spins_of_state(s, 5);
            let x = xy.slice(ndarray::s![..3]).to_owned();
            let th = xy.slice(ndarray::s![3..]).to_owned();
            let energy =
                0.5 * x.dot(&a11.dot(&x)) + x.dot(&a12.dot(&th)) + 0.5 * th.dot(&a22.dot(&th));
            let mut resid = 0.0;
            for i in 0..3 {
                let r = z[i] - nl.lambda * x[i];
                resid += r * r;
            }
            let w = energy.exp() * (-resid / (2.0 * nl.sigma2)).exp();
            den += w;
            num.zip_mut_with(&x, |n, &xi| *n += w * xi);
        }
        let m = model.marginal_denoiser(t, z.view()).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(m[i], num[i] / den, epsilon = 1e-12);
        }

        // conditional oracle at a fixed theta
        let theta = array![1.0, -1.0];
        let mut num_c = Array1::<f64>::zeros(3);
        let mut den_c = 0.0;
        for s in 0..8u32 {
            let x = spins_of_state(s, 3);
            let energy = 0.5 * x.dot(&a11.dot(&x)) + x.dot(&a12.dot(&theta));
            let mut resid = 0.0;
            for i in 0..3 {
                let r = z[i] - nl.lambda * x[i];
                resid += r * r;
            }
            let w = energy.exp() * (-resid / (2.0 * nl.sigma2)).exp();
            den_c += w;
            num_c.zip_mut_with(&x, |n, &xi| *n += w * xi);
        }
        let mc = model
            .conditional_denoiser(theta.view(), t, z.view())
            .unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(mc[i], num_c[i] / den_c, epsilon = 1e-12);
        }
    }

    #[test]
    fn sparse_zero_dictionary_gives_gaussian_score() {
        let model =
            SparseCodingModel::new(Array2::zeros((3, 2)), DiscretePrior::two_point(1.0), 0.5)
                .unwrap();
        let t = 0.4;
        let nl = noise_level(t).unwrap();
        let z = array![0.7, -0.3, 1.2];
        let s = model.exact_score(t, z.view()).unwrap();
        let denom = 0.25 * nl.lambda * nl.lambda + nl.sigma2;
        for i in 0..3 {
            assert_abs_diff_eq!(s[i], -z[i] / denom, epsilon = 1e-13);
        }
    }

    #[test]
    fn sparse_dirac_prior_collapses_to_pure_noise_score() {
        let mut rng = crate::rng::root(2);
        let dict = Array2::from_shape_fn((3, 2), |_| {
            let g: f64 = rand_distr::Distribution::sample(&StandardNormal, &mut rng);
            g
        });
        let model = SparseCodingModel::new(dict, DiscretePrior::dirac(0.0), 0.7).unwrap();
        let t = 0.3;
        let nl = noise_level(t).unwrap();
        let z = array![0.2, 0.9, -0.4];
        let e = model.exact_posterior_mean(t, z.view()).unwrap();
        assert_eq!(e, array![0.0, 0.0]);
        let s = model.exact_score(t, z.view()).unwrap();
        let denom = 0.49 * nl.lambda * nl.lambda + nl.sigma2;
        for i in 0..3 {
            assert_abs_diff_eq!(s[i], -z[i] / denom, epsilon = 1e-13);
        }
    }

    #[test]
    fn sparse_score_matches_mixture_finite_differences() {
        let mut rng = crate::rng::root(77);
        let dict = Array2::from_shape_fn((4, 3), |_| {
            let g: f64 = rand_distr::Distribution::sample(&StandardNormal, &mut rng);
            0.4 * g
        });
        let model = SparseCodingModel::new(dict, DiscretePrior::two_point(1.0), 0.6).unwrap();
        let t = 0.5;
        let z = array![0.3, -0.2, 0.8, -1.1];
        let s = model.exact_score(t, z.view()).unwrap();
        let h = 1e-4;
        for i in 0..4 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (model.log_noised_density(t, zp.view()).unwrap()
                - model.log_noised_density(t, zm.view()).unwrap())
                / (2.0 * h);
            assert!((fd - s[i]).abs() <= 1e-6 * s[i].abs().max(1.0));
        }
    }

    #[test]
    fn sparse_posterior_mean_bounded_by_support() {
        let mut rng = crate::rng::root(4);
        let dict = Array2::from_shape_fn((3, 3), |_| {
            let g: f64 = rand_distr::Distribution::sample(&StandardNormal, &mut rng);
            g
        });
        let model = SparseCodingModel::new(dict, DiscretePrior::two_point(0.8), 0.4).unwrap();
        let e = model
            .exact_posterior_mean(0.2, array![3.0, -2.0, 5.0].view())
            .unwrap();
        for v in e.iter() {
            assert!(v.abs() <= 0.8 + 1e-12);
        }
    }

    #[test]
    fn sparse_sampling_is_deterministic_with_model_moments() {
        let mut rng = crate::rng::root(58);
        let dict = Array2::from_shape_fn((3, 2), |_| {
            let g: f64 = rand_distr::Distribution::sample(&StandardNormal, &mut rng);
            0.5 * g
        });
        let model = SparseCodingModel::new(dict.clone(), DiscretePrior::two_point(1.0), 0.3).unwrap();
        let n = 50_000;
        let xs = model.sample(n, 4);
        assert_eq!(xs, model.sample(n, 4));
        // mean 0, covariance A A^T E[theta^2] + tau^2 I for the two-point prior
        let mut mean = Array1::<f64>::zeros(3);
        for x in &xs {
            mean += x;
        }
        mean.mapv_inplace(|v| v / n as f64);
        for v in mean.iter() {
            assert!(v.abs() < 0.02, "mean component {v}");
        }
        let mut var0 = 0.0;
        for x in &xs {
            var0 += (x[0] - mean[0]) * (x[0] - mean[0]);
        }
        var0 /= n as f64;
        let want = dict.row(0).dot(&dict.row(0)) + 0.09;
        assert!((var0 - want).abs() < 0.05 * want, "var {var0} vs {want}");
    }

    #[test]
    fn sparse_support_cap_enforced() {
        let prior = DiscretePrior::new(vec![(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)]).unwrap();
        let model = SparseCodingModel::new(Array2::zeros((2, 20)), prior, 0.5).unwrap();
        assert!(matches!(
            model.exact_posterior_mean(0.5, array![0.0, 0.0].view()),
            Err(Error::SupportTooLarge { .. })
        ));
    }

    #[test]
    fn rejects_asymmetric_coupling_and_bad_tau() {
        assert!(IsingModel::new(array![[0.0, 1.0], [0.5, 0.0]]).is_err());
        assert!(
            SparseCodingModel::new(Array2::zeros((2, 2)), DiscretePrior::two_point(1.0), 0.0)
                .is_err()
        );
    }

    #[test]
    fn state_round_trip() {
        for s in 0..16u32 {
            let x = spins_of_state(s, 4);
            assert_eq!(state_of_spins(x.view()), s);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // posterior means live in the convex hull of the support
            #[test]
            fn denoiser_is_coordinatewise_bounded(
                seed in 0u64..1000,
                t in 0.05f64..5.0,
                scale in 0.1f64..3.0,
            ) {
                let mut rng = crate::rng::root(seed);
                let a = crate::linalg::random_symmetric_with_op_norm(4, 0.8, &mut rng);
                let model = IsingModel::new(a).unwrap();
                let z = Array1::from_shape_fn(4, |_| {
                    let g: f64 = rand_distr::Distribution::sample(&StandardNormal, &mut rng);
                    scale * g
                });
                let m = model.exact_denoiser(t, z.view()).unwrap();
                for v in m.iter() {
                    prop_assert!(v.abs() <= 1.0 + 1e-12);
                }
                let s = model.exact_score(t, z.view()).unwrap();
                let nl = noise_level(t).unwrap();
                for i in 0..4 {
                    prop_assert!((s[i] * nl.sigma2 + z[i] - nl.lambda * m[i]).abs() <= 1e-14);
                }
            }

            #[test]
            fn noise_pair_is_pythagorean(t in 1e-6f64..30.0) {
                let nl = noise_level(t).unwrap();
                prop_assert!((nl.lambda * nl.lambda + nl.sigma2 - 1.0).abs() <= 1e-14);
                prop_assert!(nl.lambda > 0.0 && nl.lambda < 1.0);
                prop_assert!(nl.sigma2 > 0.0 && nl.sigma2 <= 1.0);
            }
        }
    }
}
