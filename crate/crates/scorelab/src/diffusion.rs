//! Forward noising and the DDPM exponential-integrator reverse sampler.
//!
//! The reverse chain starts at `Y_0 ~ N(0, I)` and steps through the grid
//! with `Y_{k+1} = e^g Y_k + 2(e^g - 1) s_{T - t_k}(Y_k) + sqrt(e^{2g} - 1) G_k`.
//! Chains are embarrassingly parallel; chain `c` draws from the RNG stream
//! `(seed, c)`, so outputs are bit-identical regardless of worker count.

use crate::schedule::{noise_level, TimeGrid};
use crate::unroll::{ResNetWeights, TruncationSpec};
use crate::{Error, Result};
use ndarray::{Array1, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// A score function `(t, z[, theta]) -> R^d` with a provenance tag.
pub trait ScoreOracle: Sync {
    fn dim(&self) -> usize;
    /// Length of the conditioning vector (0 when unconditional).
    fn theta_len(&self) -> usize {
        0
    }
    fn provenance(&self) -> &'static str;
    fn score(
        &self,
        t: f64,
        z: ArrayView1<f64>,
        theta: Option<ArrayView1<f64>>,
    ) -> Result<Array1<f64>>;
}

/// Exact enumeration score of an Ising model.
pub struct ExactIsingOracle(pub crate::models::IsingModel);

impl ScoreOracle for ExactIsingOracle {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn provenance(&self) -> &'static str {
        "exact"
    }

    fn score(
        &self,
        t: f64,
        z: ArrayView1<f64>,
        _theta: Option<ArrayView1<f64>>,
    ) -> Result<Array1<f64>> {
        self.0.exact_score(t, z)
    }
}

/// Exact marginal score of a block Ising model (latent block summed out).
pub struct ExactMarginalOracle(pub crate::models::BlockIsingModel);

impl ScoreOracle for ExactMarginalOracle {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn provenance(&self) -> &'static str {
        "exact"
    }

    fn score(
        &self,
        t: f64,
        z: ArrayView1<f64>,
        _theta: Option<ArrayView1<f64>>,
    ) -> Result<Array1<f64>> {
        self.0.marginal_score(t, z)
    }
}

/// Exact conditional score of a block Ising model, `theta` required.
pub struct ExactConditionalOracle(pub crate::models::BlockIsingModel);

impl ScoreOracle for ExactConditionalOracle {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn theta_len(&self) -> usize {
        self.0.latent_dim()
    }

    fn provenance(&self) -> &'static str {
        "exact"
    }

    fn score(
        &self,
        t: f64,
        z: ArrayView1<f64>,
        theta: Option<ArrayView1<f64>>,
    ) -> Result<Array1<f64>> {
        let theta = theta
            .ok_or_else(|| Error::ShapeMismatch("conditional oracle requires theta".into()))?;
        self.0.conditional_score(theta, t, z)
    }
}

/// Exact score of a sparse coding model.
pub struct ExactSparseOracle(pub crate::models::SparseCodingModel);

impl ScoreOracle for ExactSparseOracle {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn provenance(&self) -> &'static str {
        "exact"
    }

    fn score(
        &self,
        t: f64,
        z: ArrayView1<f64>,
        _theta: Option<ArrayView1<f64>>,
    ) -> Result<Array1<f64>> {
        self.0.exact_score(t, z)
    }
}

/// Which fixed-point problem a [`VariationalOracle`] solves per query.
pub enum VariationalKind {
    /// `m = tanh((A - K) m + (lambda/sigma^2) z)`.
    Ising {
        coupling: ndarray::Array2<f64>,
        correction: ndarray::Array2<f64>,
    },
    /// Joint iteration over `(x, theta)`; score uses the first `d` coordinates.
    Marginal {
        joint: ndarray::Array2<f64>,
        correction: ndarray::Array2<f64>,
        d: usize,
    },
    /// Conditional iteration with `theta` entering the field.
    Conditional {
        a11: ndarray::Array2<f64>,
        a12: ndarray::Array2<f64>,
        correction: ndarray::Array2<f64>,
    },
    /// Sparse-coding posterior iteration with the `G'` nonlinearity.
    Sparse {
        model: crate::models::SparseCodingModel,
        correction: ndarray::Array2<f64>,
        nu: f64,
    },
}

/// Score via the variational fixed point, solved fresh at every query.
pub struct VariationalOracle {
    kind: VariationalKind,
    pub tol: f64,
}

impl VariationalOracle {
    pub fn new(kind: VariationalKind) -> Self {
        Self { kind, tol: 1e-10 }
    }
}

impl ScoreOracle for VariationalOracle {
    fn dim(&self) -> usize {
        match &self.kind {
            VariationalKind::Ising { coupling, .. } => coupling.nrows(),
            VariationalKind::Marginal { d, .. } => *d,
            VariationalKind::Conditional { a11, .. } => a11.nrows(),
            VariationalKind::Sparse { model, .. } => model.dim(),
        }
    }

    fn theta_len(&self) -> usize {
        match &self.kind {
            VariationalKind::Conditional { a12, .. } => a12.ncols(),
            _ => 0,
        }
    }

    fn provenance(&self) -> &'static str {
        "fixed-point"
    }

    fn score(
        &self,
        t: f64,
        z: ArrayView1<f64>,
        theta: Option<ArrayView1<f64>>,
    ) -> Result<Array1<f64>> {
        use crate::variational::{
            fixed_point_solve, FreeEnergySpec, PosteriorDenoiser, SolveMode, TanhDenoiser,
        };
        let nl = noise_level(t)?;
        let mode = SolveMode::Tolerance {
            tol: self.tol,
            max_steps: 10_000,
        };
        match &self.kind {
            VariationalKind::Ising {
                coupling,
                correction,
            } => {
                let spec = FreeEnergySpec::ising(coupling.view(), correction.view(), z, t)?;
                let out = fixed_point_solve(&spec, &TanhDenoiser, mode)?;
                Ok(crate::models::score_from_denoiser(&out.m, z, &nl))
            }
            VariationalKind::Marginal {
                joint,
                correction,
                d,
            } => {
                let spec = FreeEnergySpec::marginal(joint.view(), correction.view(), z, t)?;
                let out = fixed_point_solve(&spec, &TanhDenoiser, mode)?;
                let m = out.m.slice(ndarray::s![..*d]).to_owned();
                Ok(crate::models::score_from_denoiser(&m, z, &nl))
            }
            VariationalKind::Conditional {
                a11,
                a12,
                correction,
            } => {
                let theta = theta.ok_or_else(|| {
                    Error::ShapeMismatch("conditional oracle requires theta".into())
                })?;
                let spec = FreeEnergySpec::conditional(
                    a11.view(),
                    a12.view(),
                    correction.view(),
                    theta,
                    z,
                    t,
                )?;
                let out = fixed_point_solve(&spec, &TanhDenoiser, mode)?;
                Ok(crate::models::score_from_denoiser(&out.m, z, &nl))
            }
            VariationalKind::Sparse {
                model,
                correction,
                nu,
            } => {
                let tau_bar2 = model.tau_bar2(&nl);
                let z_star = z.mapv(|v| v / nl.lambda);
                let spec = FreeEnergySpec::sparse(
                    model.dictionary(),
                    correction.view(),
                    tau_bar2,
                    z_star.view(),
                )?;
                let f = PosteriorDenoiser::new(model.prior().clone(), *nu);
                let out = fixed_point_solve(&spec, &f, mode)?;
                let denom = nl.sigma2 + model.tau() * model.tau() * nl.lambda * nl.lambda;
                let mut s = model.dictionary().dot(&out.m);
                s.zip_mut_with(&z, |si, &zi| *si = (nl.lambda * *si - zi) / denom);
                Ok(s)
            }
        }
    }
}

/// One (time, weights) entry of a per-time network oracle.
pub struct OracleEntry {
    pub t: f64,
    pub weights: ResNetWeights,
    pub truncation: Option<TruncationSpec>,
}

/// Score oracle backed by per-time residual networks (unrolled or trained).
/// Queries must hit one of the prepared times within 1e-9.
pub struct ResNetOracle {
    entries: Vec<OracleEntry>,
    dim: usize,
    theta_len: usize,
    provenance: &'static str,
}

impl ResNetOracle {
    pub fn new(entries: Vec<OracleEntry>, provenance: &'static str) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::ShapeMismatch("oracle needs at least one network".into()))?;
        let dim = first.weights.d;
        let theta_len = first.weights.theta_len();
        for e in &entries {
            e.weights.validate()?;
            if e.weights.d != dim || e.weights.theta_len() != theta_len {
                return Err(Error::ShapeMismatch(
                    "all networks in an oracle must share dimensions".into(),
                ));
            }
        }
        Ok(Self {
            entries,
            dim,
            theta_len,
            provenance,
        })
    }

    fn entry_for(&self, t: f64) -> Result<&OracleEntry> {
        self.entries
            .iter()
            .find(|e| (e.t - t).abs() <= 1e-9)
            .ok_or_else(|| Error::ParameterRange(format!("no network prepared for t = {t}")))
    }
}

impl ScoreOracle for ResNetOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn theta_len(&self) -> usize {
        self.theta_len
    }

    fn provenance(&self) -> &'static str {
        self.provenance
    }

    fn score(
        &self,
        t: f64,
        z: ArrayView1<f64>,
        theta: Option<ArrayView1<f64>>,
    ) -> Result<Array1<f64>> {
        let entry = self.entry_for(t)?;
        let raw = entry.weights.forward(z, theta)?;
        Ok(match &entry.truncation {
            Some(spec) => spec.apply(raw.view(), z),
            None => raw,
        })
    }
}

/// Forward noising `z = lambda_t x + sigma_t g` with `g` from the seeded stream.
pub fn forward_noise(x: ArrayView1<f64>, t: f64, seed: u64) -> Result<Array1<f64>> {
    let nl = noise_level(t)?;
    let mut rng = crate::rng::root(seed);
    let sigma = nl.sigma2.sqrt();
    Ok(x.map(|&xi| {
        let g: f64 = StandardNormal.sample(&mut rng);
        nl.lambda * xi + sigma * g
    }))
}

/// Runs `n_chains` independent reverse chains and returns `Y_N` per chain,
/// in chain order. Aborts on the first non-finite score, reporting the grid
/// step at which it happened.
pub fn ddpm_sample(
    oracle: &dyn ScoreOracle,
    grid: &TimeGrid,
    n_chains: usize,
    seed: u64,
    theta: Option<ArrayView1<f64>>,
) -> Result<Vec<Array1<f64>>> {
    grid.validate()?;
    if let Some(th) = theta {
        if th.len() != oracle.theta_len() {
            return Err(Error::ShapeMismatch(format!(
                "theta has length {}, oracle expects {}",
                th.len(),
                oracle.theta_len()
            )));
        }
    } else if oracle.theta_len() != 0 {
        return Err(Error::ShapeMismatch("oracle requires theta".into()));
    }
    (0..n_chains)
        .into_par_iter()
        .map(|chain| run_chain(oracle, grid, seed, chain as u64, theta))
        .collect()
}

fn run_chain(
    oracle: &dyn ScoreOracle,
    grid: &TimeGrid,
    seed: u64,
    chain: u64,
    theta: Option<ArrayView1<f64>>,
) -> Result<Array1<f64>> {
    let d = oracle.dim();
    let mut rng = crate::rng::stream(seed, chain);
    let mut y = Array1::from_shape_fn(d, |_| {
        let g: f64 = StandardNormal.sample(&mut rng);
        g
    });
    for k in 0..grid.n {
        let gamma = grid.gaps[k];
        let t_query = grid.t_horizon - grid.times[k];
        let s = oracle.score(t_query, y.view(), theta)?;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore {
                t: t_query,
                step: k,
            });
        }
        let growth = gamma.exp();
        let drift = 2.0 * gamma.exp_m1();
        let noise_sd = (2.0 * gamma).exp_m1().sqrt();
        for i in 0..d {
            let g: f64 = StandardNormal.sample(&mut rng);
            y[i] = growth * y[i] + drift * s[i] + noise_sd * g;
        }
    }
    Ok(y)
}

/// Coordinatewise sign rounding (the reporting convention for discrete KL).
pub fn round_to_spins(y: ArrayView1<f64>) -> Array1<f64> {
    y.map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
}
