//! Sherrington-Kirkpatrick overlap and the reaction-term coefficient.
//!
//! The overlap `q*` solves
//! `q = E_G[tanh^2(b^2 q + g + sqrt(b^2 q + g) G)]` with `g = lambda_t^2 /
//! sigma_t^2`; the correction coefficient is `c_t = b^2 (1 - q*)`. The
//! Gaussian expectation uses Gauss-Hermite quadrature.

use crate::schedule::noise_level;
use crate::{Error, Result};
use gauss_quad::GaussHermite;

/// `E_{G ~ N(0,1)}[f(G)]` with an `n`-node Gauss-Hermite rule.
pub fn gauss_hermite_expectation(n: usize, f: impl Fn(f64) -> f64) -> Result<f64> {
    let rule = GaussHermite::new(n)
        .map_err(|e| Error::ParameterRange(format!("Gauss-Hermite rule: {e}")))?;
    // change of variables x = G / sqrt(2)
    Ok(rule.integrate(|x| f(std::f64::consts::SQRT_2 * x)) / std::f64::consts::PI.sqrt())
}

/// Overlap fixed point at inverse temperature `beta` and time `t`, solved by
/// damped iteration to residual 1e-10.
pub fn sk_overlap(beta: f64, t: f64, quad_nodes: usize) -> Result<f64> {
    if !(0.0..=0.25).contains(&beta) {
        return Err(Error::ParameterRange(format!(
            "beta must lie in [0, 1/4], got {beta}"
        )));
    }
    let nl = noise_level(t)?;
    let gamma = nl.lambda * nl.lambda / nl.sigma2;
    let rhs = |q: f64| -> Result<f64> {
        let mean = beta * beta * q + gamma;
        let sd = mean.sqrt();
        gauss_hermite_expectation(quad_nodes, |g| {
            let v = (mean + sd * g).tanh();
            v * v
        })
    };
    let mut q = 0.5;
    for _ in 0..10_000 {
        let r = rhs(q)?;
        if (r - q).abs() <= 1e-10 {
            return Ok(r);
        }
        q = 0.5 * q + 0.5 * r;
    }
    let residual = (rhs(q)? - q).abs();
    Err(Error::NonConvergence {
        steps: 10_000,
        residual,
    })
}

/// Reaction coefficient `c_t = beta^2 (1 - q_t)` with the default 61-node rule.
pub fn sk_correction(beta: f64, t: f64) -> Result<f64> {
    let q = sk_overlap(beta, t, 61)?;
    Ok(beta * beta * (1.0 - q))
}
