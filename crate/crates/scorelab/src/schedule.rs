//! Noise levels and time discretization for the forward/reverse diffusion.
//!
//! The noise pair is `(lambda_t, sigma_t^2) = (e^{-t}, 1 - e^{-2t})`. The
//! reverse sampler runs on a two-phase grid: `N0` uniform steps of length
//! `kappa` followed by geometrically shrinking steps toward a terminal gap
//! `delta` from the horizon `T`.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// `(t, lambda_t, sigma_t^2)` for one noise scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub t: f64,
    pub lambda: f64,
    pub sigma2: f64,
}

/// Noise level at time `t > 0`.
pub fn noise_level(t: f64) -> Result<NoiseLevel> {
    if !(t > 0.0) {
        return Err(Error::NonpositiveTime { t });
    }
    Ok(NoiseLevel {
        t,
        lambda: (-t).exp(),
        // -expm1 keeps sigma2 accurate near t = 0
        sigma2: -(-2.0 * t).exp_m1(),
    })
}

impl NoiseLevel {
    /// Posterior tilt coefficient `lambda_t / sigma_t^2`.
    pub fn tilt(&self) -> f64 {
        self.lambda / self.sigma2
    }
}

/// Discretization grid: times `t_0 = 0 < ... < t_N = T - delta` and the gaps
/// `gamma_k = t_{k+1} - t_k`. Times and gaps are stored redundantly and
/// cross-checked by [`TimeGrid::validate`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeGrid {
    pub kappa: f64,
    pub n0: usize,
    pub n: usize,
    pub t_horizon: f64,
    pub delta: f64,
    pub times: Vec<f64>,
    pub gaps: Vec<f64>,
}

/// Two-phase grid: `t_k = k kappa` for `k <= N0` (so `T = N0 kappa + 1`),
/// then `t_{N0+k} = T - (1+kappa)^{-k}`, ending at `t_N = T - delta` with
/// `delta = (1+kappa)^{N0-N}`.
pub fn two_phase_grid(kappa: f64, n0: usize, n: usize) -> Result<TimeGrid> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::ParameterRange(format!(
            "kappa must lie in (0, 1), got {kappa}"
        )));
    }
    if n0 == 0 || n <= n0 {
        return Err(Error::ParameterRange(format!(
            "need 0 < N0 < N, got N0 = {n0}, N = {n}"
        )));
    }
    let t_horizon = n0 as f64 * kappa + 1.0;
    let mut times = Vec::with_capacity(n + 1);
    for k in 0..=n0 {
        times.push(k as f64 * kappa);
    }
    for k in 1..=(n - n0) {
        times.push(t_horizon - (1.0 + kappa).powi(-(k as i32)));
    }
    let delta = (1.0 + kappa).powi(n0 as i32 - n as i32);
    let mut gaps = Vec::with_capacity(n);
    for k in 0..n {
        if k < n0 {
            gaps.push(kappa);
        } else {
            gaps.push(kappa / (1.0 + kappa).powi((k - n0) as i32 + 1));
        }
    }
    let grid = TimeGrid {
        kappa,
        n0,
        n,
        t_horizon,
        delta,
        times,
        gaps,
    };
    grid.validate()?;
    Ok(grid)
}

/// Uniform grid from 0 to `T - delta` in `n` equal steps. Not part of the
/// two-phase scheme; used for discretization-error ablations.
pub fn uniform_grid(t_horizon: f64, delta: f64, n: usize) -> Result<TimeGrid> {
    if !(t_horizon > 0.0 && delta > 0.0 && delta < t_horizon) {
        return Err(Error::ParameterRange(format!(
            "need 0 < delta < T, got T = {t_horizon}, delta = {delta}"
        )));
    }
    if n == 0 {
        return Err(Error::ParameterRange("need n >= 1 steps".into()));
    }
    let end = t_horizon - delta;
    let times: Vec<f64> = (0..=n).map(|k| end * k as f64 / n as f64).collect();
    let gaps: Vec<f64> = (0..n).map(|k| times[k + 1] - times[k]).collect();
    let kappa = gaps[0];
    Ok(TimeGrid {
        kappa,
        n0: n,
        n,
        t_horizon,
        delta,
        times,
        gaps,
    })
}

impl TimeGrid {
    /// Cross-checks the stored times against the stored gaps and the grid
    /// inequality `gamma_k <= kappa * min(1, T - t_{k+1})`.
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.n + 1 || self.gaps.len() != self.n {
            return Err(Error::ParameterRange(
                "times/gaps length disagrees with N".into(),
            ));
        }
        if self.times[0] != 0.0 {
            return Err(Error::ParameterRange("grid must start at t = 0".into()));
        }
        for k in 0..self.n {
            let g = self.times[k + 1] - self.times[k];
            if (g - self.gaps[k]).abs() > 1e-12 {
                return Err(Error::ParameterRange(format!(
                    "gap {k} inconsistent: times give {g}, stored {}",
                    self.gaps[k]
                )));
            }
            if g <= 0.0 {
                return Err(Error::ParameterRange(format!(
                    "times not strictly increasing at index {k}"
                )));
            }
            let cap = self.kappa * 1.0_f64.min(self.t_horizon - self.times[k + 1]);
            if self.gaps[k] > cap + 1e-12 {
                return Err(Error::ParameterRange(format!(
                    "gap {k} = {} exceeds kappa * min(1, T - t_(k+1)) = {cap}",
                    self.gaps[k]
                )));
            }
        }
        let end = self.t_horizon - self.delta;
        if (self.times[self.n] - end).abs() > 1e-10 {
            return Err(Error::ParameterRange(format!(
                "grid must end at T - delta = {end}, got {}",
                self.times[self.n]
            )));
        }
        Ok(())
    }

    /// Reverse-time score query points `T - t_k`, k = 0..N-1.
    pub fn reverse_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.times[..self.n]
            .iter()
            .map(move |&t| self.t_horizon - t)
    }
}
