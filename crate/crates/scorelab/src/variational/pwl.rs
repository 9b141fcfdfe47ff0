//! Piecewise-linear approximation of scalar denoisers by ReLU combinations.
//!
//! `f(lambda) = a_0 + sum_j a_j ReLU(lambda - w_j)` with breakpoints at the
//! level-set quantiles of the target: `w_j` solves `F(w_j) = Pi_min + j
//! Delta/n` by bisection, where `n = ceil(Delta/zeta)` and `Delta` is the
//! target's range. The interpolant then stays within `zeta` of the target
//! everywhere, with `|a_0| <= Pi` and `|a_j| <= 2 Pi^2`.

use super::scalar::ScalarFn;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// One ReLU term: slope increment `a_j` at breakpoint `w_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PwlKnot {
    pub slope_delta: f64,
    pub breakpoint: f64,
}

/// A piecewise-linear scalar denoiser with a uniform error budget `zeta`
/// against its construction target and output bound `pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlDenoiser {
    a0: f64,
    knots: Vec<PwlKnot>,
    zeta: f64,
    pi: f64,
}

impl PwlDenoiser {
    pub fn new(a0: f64, knots: Vec<PwlKnot>, zeta: f64, pi: f64) -> Result<Self> {
        if !(zeta > 0.0) {
            return Err(Error::ParameterRange(format!(
                "zeta must be positive, got {zeta}"
            )));
        }
        if !(pi >= 0.0)
            || knots
                .iter()
                .any(|k| !k.slope_delta.is_finite() || !k.breakpoint.is_finite())
        {
            return Err(Error::ParameterRange("non-finite knot data".into()));
        }
        let mut sorted = knots;
        sorted.sort_by(|a, b| a.breakpoint.partial_cmp(&b.breakpoint).unwrap());
        Ok(Self {
            a0,
            knots: sorted,
            zeta,
            pi,
        })
    }

    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn knots(&self) -> &[PwlKnot] {
        &self.knots
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    /// Largest breakpoint magnitude (0 for a constant).
    pub fn max_breakpoint(&self) -> f64 {
        self.knots
            .iter()
            .map(|k| k.breakpoint.abs())
            .fold(0.0, f64::max)
    }

    /// Total slope variation `sum_j |a_j|`.
    pub fn total_slope_variation(&self) -> f64 {
        self.knots.iter().map(|k| k.slope_delta.abs()).sum()
    }
}

impl ScalarFn for PwlDenoiser {
    fn eval(&self, lambda: f64) -> f64 {
        let mut v = self.a0;
        for k in &self.knots {
            let r = lambda - k.breakpoint;
            if r > 0.0 {
                v += k.slope_delta * r;
            }
        }
        v
    }

    fn output_bound(&self) -> f64 {
        self.pi
    }

    fn lipschitz_bound(&self) -> f64 {
        self.pi * self.pi
    }

    fn range(&self) -> (f64, f64) {
        (-self.pi, self.pi)
    }
}

/// Builds the quantile-breakpoint approximation of a nondecreasing target
/// with sup error at most `zeta`. A constant target (Dirac prior) degenerates
/// to the constant `a_0`.
pub fn build_pwl(target: &dyn ScalarFn, zeta: f64) -> Result<PwlDenoiser> {
    if !(zeta > 0.0) {
        return Err(Error::ParameterRange(format!(
            "zeta must be positive, got {zeta}"
        )));
    }
    let (lo, hi) = target.range();
    if !lo.is_finite() || !hi.is_finite() || hi < lo {
        return Err(Error::ParameterRange(
            "target range must be finite and ordered".into(),
        ));
    }
    let delta = hi - lo;
    let pi = lo.abs().max(hi.abs());
    if delta == 0.0 {
        // Dirac case: constant at the single value.
        return PwlDenoiser::new(lo, Vec::new(), zeta, pi);
    }
    let n_seg = (delta / zeta).ceil() as usize;
    let a0 = lo + delta / n_seg as f64;
    let n_knots = n_seg - 1;
    let mut breakpoints = Vec::with_capacity(n_knots);
    for j in 1..=n_knots {
        let level = lo + j as f64 * delta / n_seg as f64;
        breakpoints.push(bisect_level(target, level, lo, hi)?);
    }
    // slope on segment j (between w_j and w_{j+1}); flat outside the knots
    let seg = delta / n_seg as f64;
    let mut slopes = vec![0.0; n_knots + 1];
    for j in 1..n_knots {
        slopes[j] = seg / (breakpoints[j] - breakpoints[j - 1]);
    }
    let knots = (0..n_knots)
        .map(|j| PwlKnot {
            slope_delta: slopes[j + 1] - slopes[j],
            breakpoint: breakpoints[j],
        })
        .collect();
    PwlDenoiser::new(a0, knots, zeta, pi)
}

/// Solves `F(w) = level` for a nondecreasing target by bracketed bisection
/// to width 1e-12.
fn bisect_level(target: &dyn ScalarFn, level: f64, lo: f64, hi: f64) -> Result<f64> {
    debug_assert!(level > lo && level < hi);
    let mut a = -1.0;
    let mut b = 1.0;
    let mut grow = 0;
    while target.eval(a) >= level {
        a *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::NonConvergence {
                steps: grow,
                residual: target.eval(a) - level,
            });
        }
    }
    grow = 0;
    while target.eval(b) <= level {
        b *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(Error::NonConvergence {
                steps: grow,
                residual: level - target.eval(b),
            });
        }
    }
    while b - a > 1e-12 * (1.0_f64).max(a.abs()).max(b.abs()) {
        let mid = 0.5 * (a + b);
        if target.eval(mid) < level {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}
