//! Scalar posterior-mean functions applied coordinatewise by the solver.

use crate::linalg::log_sum_exp;
use crate::models::DiscretePrior;

/// A nondecreasing, Lipschitz scalar function with bounded range: the
/// coordinatewise nonlinearity of a fixed-point iteration.
pub trait ScalarFn {
    fn eval(&self, lambda: f64) -> f64;
    /// `Pi`: a bound on `sup |f|`.
    fn output_bound(&self) -> f64;
    /// `Pi^2`: a bound on the Lipschitz constant.
    fn lipschitz_bound(&self) -> f64;
    /// `(inf f, sup f)`.
    fn range(&self) -> (f64, f64);
}

/// `tanh`, the posterior-mean function of a uniform `{-1,+1}` prior.
#[derive(Debug, Clone, Copy)]
pub struct TanhDenoiser;

impl ScalarFn for TanhDenoiser {
    fn eval(&self, lambda: f64) -> f64 {
        lambda.tanh()
    }

    fn output_bound(&self) -> f64 {
        1.0
    }

    fn lipschitz_bound(&self) -> f64 {
        1.0
    }

    fn range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }
}

/// Posterior-mean function of a finite prior under a quadratic tilt:
/// `G'(lambda)` for `G(lambda) = log E[exp(lambda b - b^2 nu / 2)]`.
/// Evaluated in the log domain.
#[derive(Debug, Clone)]
pub struct PosteriorDenoiser {
    prior: DiscretePrior,
    nu: f64,
}

impl PosteriorDenoiser {
    pub fn new(prior: DiscretePrior, nu: f64) -> Self {
        Self { prior, nu }
    }

    pub fn prior(&self) -> &DiscretePrior {
        &self.prior
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }
}

impl ScalarFn for PosteriorDenoiser {
    fn eval(&self, lambda: f64) -> f64 {
        let lw: Vec<f64> = self
            .prior
            .atoms()
            .iter()
            .map(|&(b, p)| {
                let lp = if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
                lp + lambda * b - b * b * self.nu / 2.0
            })
            .collect();
        let lse = log_sum_exp(&lw);
        self.prior
            .atoms()
            .iter()
            .zip(&lw)
            .map(|(&(b, _), &l)| b * (l - lse).exp())
            .sum()
    }

    fn output_bound(&self) -> f64 {
        self.prior.support_bound()
    }

    fn lipschitz_bound(&self) -> f64 {
        let pi = self.prior.support_bound();
        pi * pi
    }

    fn range(&self) -> (f64, f64) {
        let lo = self
            .prior
            .atoms()
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .prior
            .atoms()
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Convenience constructor mirroring the free-energy notation.
pub fn posterior_scalar(prior: DiscretePrior, nu: f64) -> PosteriorDenoiser {
    PosteriorDenoiser::new(prior, nu)
}
