//! Distributional and score-error measurements.
//!
//! Score error is the Monte Carlo analogue of `E_{z ~ mu_t} ||s_hat - s||^2 / d`;
//! discrete distributions are compared by plug-in KL (with additive smoothing)
//! and total variation after `+-1` rounding; continuous samples by moments and
//! energy distance.

use crate::diffusion::ScoreOracle;
use crate::models::{
    state_of_spins, BlockIsingModel, DiscreteDistribution, IsingModel, SparseCodingModel,
};
use crate::schedule::noise_level;
use crate::{Error, Result};
use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

/// Draws `(x, theta?)` pairs from a model so `z = lambda_t x + sigma_t g`
/// follows `mu_t`.
pub enum NoisedSource {
    Ising {
        table: DiscreteDistribution,
    },
    Joint {
        table: DiscreteDistribution,
        d: usize,
    },
    Sparse {
        model: SparseCodingModel,
    },
}

impl NoisedSource {
    pub fn ising(model: &IsingModel) -> Result<Self> {
        Ok(Self::Ising {
            table: model.enumerate()?,
        })
    }

    pub fn joint(model: &BlockIsingModel) -> Result<Self> {
        Ok(Self::Joint {
            table: model.as_joint_ising()?.enumerate()?,
            d: model.dim(),
        })
    }

    pub fn sparse(model: &SparseCodingModel) -> Self {
        Self::Sparse {
            model: model.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Ising { table } => table.dim(),
            Self::Joint { d, .. } => *d,
            Self::Sparse { model } => model.dim(),
        }
    }

    fn draw(&self, rng: &mut crate::rng::Rng) -> (Array1<f64>, Option<Array1<f64>>) {
        match self {
            Self::Ising { table } => {
                let s = table.sample_states(1, rng)[0];
                (crate::models::spins_of_state(s, table.dim()), None)
            }
            Self::Joint { table, d } => {
                let s = table.sample_states(1, rng)[0];
                let xy = crate::models::spins_of_state(s, table.dim());
                let x = xy.slice(ndarray::s![..*d]).to_owned();
                let th = xy.slice(ndarray::s![*d..]).to_owned();
                (x, Some(th))
            }
            Self::Sparse { model } => {
                let theta = Array1::from_shape_fn(model.n_atoms(), |_| model.prior().sample(rng));
                let mut x = model.dictionary().dot(&theta);
                for v in x.iter_mut() {
                    let g: f64 = StandardNormal.sample(rng);
                    *v += model.tau() * g;
                }
                (x, None)
            }
        }
    }
}

/// Monte Carlo score error estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScoreMse {
    pub mse: f64,
    pub std_err: f64,
    pub n: usize,
}

/// `E_{z ~ mu_t} ||candidate(z) - reference(z)||^2 / d` over `n_mc` draws.
pub fn score_mse(
    candidate: &dyn ScoreOracle,
    reference: &dyn ScoreOracle,
    source: &NoisedSource,
    t: f64,
    n_mc: usize,
    seed: u64,
) -> Result<ScoreMse> {
    if n_mc == 0 {
        return Err(Error::EmptySamples);
    }
    if candidate.dim() != reference.dim() || candidate.dim() != source.dim() {
        return Err(Error::ShapeMismatch(format!(
            "oracle dims {} / {} / source {} disagree",
            candidate.dim(),
            reference.dim(),
            source.dim()
        )));
    }
    let nl = noise_level(t)?;
    let d = source.dim() as f64;
    let sigma = nl.sigma2.sqrt();
    let mut rng = crate::rng::stream(seed, 2);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_mc {
        let (x, theta) = source.draw(&mut rng);
        let z = x.mapv(|xi| {
            let g: f64 = StandardNormal.sample(&mut rng);
            nl.lambda * xi + sigma * g
        });
        let th_view = theta.as_ref().map(|th| th.view());
        let c = candidate.score(t, z.view(), th_view)?;
        let r = reference.score(t, z.view(), th_view)?;
        let diff = &c - &r;
        let v = diff.dot(&diff) / d;
        // symmetric by construction; assert the two orderings agree
        let diff_rev = &r - &c;
        debug_assert_eq!(v, diff_rev.dot(&diff_rev) / d);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n_mc as f64;
    let var = (sum_sq / n_mc as f64 - mean * mean).max(0.0);
    Ok(ScoreMse {
        mse: mean,
        std_err: (var / n_mc as f64).sqrt(),
        n: n_mc,
    })
}

/// Plug-in KL estimate `KL(p || q_hat)` with additive smoothing.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KlEstimate {
    pub kl: f64,
    pub n: usize,
    pub pseudo_count: f64,
}

fn state_counts(p: &DiscreteDistribution, samples: &[Array1<f64>]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let dim = p.dim();
    let mut counts = vec![0.0f64; 1 << dim];
    for s in samples {
        if s.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "sample has length {}, distribution dimension is {dim}",
                s.len()
            )));
        }
        counts[state_of_spins(s.view()) as usize] += 1.0;
    }
    Ok(counts)
}

/// KL of the exact table against smoothed empirical frequencies
/// (Krichevsky-Trofimov style pseudo-count per state).
pub fn discrete_kl(
    p: &DiscreteDistribution,
    q_samples: &[Array1<f64>],
    pseudo_count: f64,
) -> Result<KlEstimate> {
    if !(pseudo_count > 0.0) {
        return Err(Error::ParameterRange(format!(
            "pseudo count must be positive, got {pseudo_count}"
        )));
    }
    let counts = state_counts(p, q_samples)?;
    let n = q_samples.len() as f64;
    let n_states = counts.len() as f64;
    let denom = n + pseudo_count * n_states;
    let mut kl = 0.0;
    for (s, &c) in counts.iter().enumerate() {
        let ps = p.prob(s as u32);
        if ps > 0.0 {
            let qs = (c + pseudo_count) / denom;
            kl += ps * (ps / qs).ln();
        }
    }
    Ok(KlEstimate {
        kl,
        n: q_samples.len(),
        pseudo_count,
    })
}

/// Total variation between the exact table and raw empirical frequencies.
pub fn tv(p: &DiscreteDistribution, q_samples: &[Array1<f64>]) -> Result<f64> {
    let counts = state_counts(p, q_samples)?;
    let n = q_samples.len() as f64;
    let mut total = 0.0;
    for (s, &c) in counts.iter().enumerate() {
        total += (p.prob(s as u32) - c / n).abs();
    }
    Ok(0.5 * total)
}

/// First and second moments of a continuous sample cloud.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
}

pub fn sample_moments(samples: &[Array1<f64>]) -> Result<Moments> {
    let first = samples.first().ok_or(Error::EmptySamples)?;
    let d = first.len();
    let n = samples.len() as f64;
    let mut mean = Array1::<f64>::zeros(d);
    for s in samples {
        if s.len() != d {
            return Err(Error::ShapeMismatch("ragged sample cloud".into()));
        }
        mean += s;
    }
    mean.mapv_inplace(|v| v / n);
    let mut cov = Array2::<f64>::zeros((d, d));
    for s in samples {
        let c = s - &mean;
        for i in 0..d {
            for j in 0..d {
                cov[[i, j]] += c[i] * c[j];
            }
        }
    }
    cov.mapv_inplace(|v| v / n);
    Ok(Moments {
        mean,
        covariance: cov,
    })
}

/// Energy distance `2 E||X - Y|| - E||X - X'|| - E||Y - Y'||` by full
/// pairwise summation in deterministic order.
pub fn energy_distance(xs: &[Array1<f64>], ys: &[Array1<f64>]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptySamples);
    }
    let dist = |a: &Array1<f64>, b: &Array1<f64>| {
        let d = a - b;
        d.dot(&d).sqrt()
    };
    let mut cross = 0.0;
    for x in xs {
        for y in ys {
            cross += dist(x, y);
        }
    }
    cross /= (xs.len() * ys.len()) as f64;
    let self_term = |vs: &[Array1<f64>]| {
        if vs.len() < 2 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..vs.len() {
            for j in (i + 1)..vs.len() {
                s += dist(&vs[i], &vs[j]);
            }
        }
        2.0 * s / ((vs.len() * vs.len()) as f64)
    };
    Ok(2.0 * cross - self_term(xs) - self_term(ys))
}

/// A flat evaluation report with run metadata, serialized by the CLI.
#[derive(Debug, Clone, Serialize, Default)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_mse_std_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrete_kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_mean: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_distance: Option<f64>,
    pub metadata: EvalMetadata,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct EvalMetadata {
    pub model_hash: String,
    pub seed: u64,
    pub t: f64,
    pub candidate: String,
    pub reference: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    /// Rounding to `+-1` is a reporting convention, not part of the sampler.
    pub rounded: bool,
}

impl EvalReport {
    /// All numeric entries finite, KL nonnegative, TV within `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let fin = |v: Option<f64>| v.is_none_or(|x| x.is_finite());
        if !(fin(self.score_mse)
            && fin(self.discrete_kl)
            && fin(self.tv)
            && fin(self.energy_distance))
        {
            return Err(Error::ParameterRange("non-finite report entry".into()));
        }
        if let Some(kl) = self.discrete_kl {
            if kl < 0.0 {
                return Err(Error::ParameterRange(format!("negative KL {kl}")));
            }
        }
        if let Some(tv) = self.tv {
            if !(0.0..=1.0).contains(&tv) {
                return Err(Error::ParameterRange(format!("TV {tv} outside [0, 1]")));
            }
        }
        Ok(())
    }
}
