//! Variational free energies and their fixed-point solvers.
//!
//! The denoiser of an Ising-type model is approximated by the minimizer of a
//! free energy whose stationarity condition is the fixed-point equation
//! `m = f(U m + h)` with `U = A - K` and a scalar nonlinearity `f` applied
//! coordinatewise. The solver is plain Picard iteration from zero; the
//! unrolled residual networks reproduce exactly this trace, layer for layer.

mod pwl;
mod scalar;
mod sk;

pub use pwl::{build_pwl, PwlDenoiser, PwlKnot};
pub use scalar::{posterior_scalar, PosteriorDenoiser, ScalarFn, TanhDenoiser};
pub use sk::{gauss_hermite_expectation, sk_correction, sk_overlap};

use crate::linalg::{inf_norm_diff, op_norm};
use crate::schedule::noise_level;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Binary entropy of a `{-1,+1}` mean parameter, `h_bin(0) = ln 2`.
pub fn binary_entropy(m: f64) -> Result<f64> {
    if m.abs() >= 1.0 || !m.is_finite() {
        return Err(Error::BoundaryArgument { index: 0 });
    }
    let p = (1.0 + m) / 2.0;
    let q = (1.0 - m) / 2.0;
    Ok(-(p * p.ln() + q * q.ln()))
}

/// Naive variational-Bayes free energy
/// `sum_i -h_bin(m_i) - <m, A m>/2 - (lambda_t/sigma_t^2) <z, m>`.
pub fn naive_vb_energy(
    a: ArrayView2<f64>,
    z: ArrayView1<f64>,
    t: f64,
    m: ArrayView1<f64>,
) -> Result<f64> {
    let zero = Array2::zeros(a.dim());
    vi_energy(a, zero.view(), z, t, m)
}

/// Corrected free energy: naive VB plus the reaction term `<m, K m>/2`.
pub fn vi_energy(
    a: ArrayView2<f64>,
    k: ArrayView2<f64>,
    z: ArrayView1<f64>,
    t: f64,
    m: ArrayView1<f64>,
) -> Result<f64> {
    let nl = noise_level(t)?;
    if a.nrows() != m.len() || k.dim() != a.dim() || z.len() != m.len() {
        return Err(Error::ShapeMismatch(
            "energy arguments must share the model dimension".into(),
        ));
    }
    let mut e = 0.0;
    for (i, &mi) in m.iter().enumerate() {
        if mi.abs() >= 1.0 || !mi.is_finite() {
            return Err(Error::BoundaryArgument { index: i });
        }
        e -= binary_entropy(mi)?;
    }
    let am = a.dot(&m);
    let km = k.dot(&m);
    e -= 0.5 * m.dot(&am);
    e -= nl.tilt() * z.dot(&m);
    e += 0.5 * m.dot(&km);
    Ok(e)
}

/// Free energy in `(U, h)` form, defined whenever all iterates are interior.
fn interior_energy(u: ArrayView2<f64>, h: ArrayView1<f64>, m: &Array1<f64>) -> Option<f64> {
    let mut e = 0.0;
    for &mi in m.iter() {
        if mi.abs() >= 1.0 {
            return None;
        }
        e -= binary_entropy(mi).ok()?;
    }
    e -= 0.5 * m.dot(&u.dot(m));
    e -= h.dot(m);
    Some(e)
}

/// The data of one fixed-point problem: iterate `m <- f(U m + h)`.
///
/// `a_norm` is the declared contraction bound on `||U||_op`; solver entry
/// points require `Pi^2 * a_norm < 1` for the scalar function in use.
#[derive(Debug, Clone)]
pub struct FreeEnergySpec {
    pub interaction: Array2<f64>,
    pub field: Array1<f64>,
    pub a_norm: f64,
}

impl FreeEnergySpec {
    /// Build from an explicit interaction and field; `a_norm` is measured.
    pub fn new(interaction: Array2<f64>, field: Array1<f64>) -> Result<Self> {
        if interaction.nrows() != interaction.ncols() || interaction.nrows() != field.len() {
            return Err(Error::ShapeMismatch(
                "interaction must be square and match the field length".into(),
            ));
        }
        let a_norm = op_norm(interaction.view());
        Ok(Self {
            interaction,
            field,
            a_norm,
        })
    }

    /// Ising denoising: `U = A - K`, `h = (lambda_t/sigma_t^2) z`.
    pub fn ising(
        a: ArrayView2<f64>,
        k: ArrayView2<f64>,
        z: ArrayView1<f64>,
        t: f64,
    ) -> Result<Self> {
        let nl = noise_level(t)?;
        if a.dim() != k.dim() || a.nrows() != z.len() {
            return Err(Error::ShapeMismatch("A, K, z dimensions disagree".into()));
        }
        let u = &a.to_owned() - &k.to_owned();
        let h = z.mapv(|v| v * nl.tilt());
        Self::new(u, h)
    }

    /// Conditional denoising: the observed block enters the field,
    /// `h = A12 theta + (lambda_t/sigma_t^2) z`.
    pub fn conditional(
        a11: ArrayView2<f64>,
        a12: ArrayView2<f64>,
        k: ArrayView2<f64>,
        theta: ArrayView1<f64>,
        z: ArrayView1<f64>,
        t: f64,
    ) -> Result<Self> {
        let nl = noise_level(t)?;
        if a11.nrows() != z.len() || a12.ncols() != theta.len() || a12.nrows() != a11.nrows() {
            return Err(Error::ShapeMismatch(
                "conditional spec dimensions disagree".into(),
            ));
        }
        let u = &a11.to_owned() - &k.to_owned();
        let mut h = a12.dot(&theta);
        h.zip_mut_with(&z, |hi, &zi| *hi += nl.tilt() * zi);
        Self::new(u, h)
    }

    /// Marginal denoising over the joint `(x, theta)` field:
    /// `h = (lambda_t/sigma_t^2) [z; 0]`.
    pub fn marginal(
        joint: ArrayView2<f64>,
        k: ArrayView2<f64>,
        z: ArrayView1<f64>,
        t: f64,
    ) -> Result<Self> {
        let nl = noise_level(t)?;
        let p = joint.nrows();
        if z.len() > p || joint.dim() != k.dim() {
            return Err(Error::ShapeMismatch(
                "marginal spec dimensions disagree".into(),
            ));
        }
        let u = &joint.to_owned() - &k.to_owned();
        let mut h = Array1::zeros(p);
        for (i, &zi) in z.iter().enumerate() {
            h[i] = nl.tilt() * zi;
        }
        Self::new(u, h)
    }

    /// Sparse-coding posterior: `U = K_t - A^T A / tau_bar^2`,
    /// `h = A^T z* / tau_bar^2` with `z* = z/lambda_t`.
    pub fn sparse(
        dictionary: ArrayView2<f64>,
        k_t: ArrayView2<f64>,
        tau_bar2: f64,
        z_star: ArrayView1<f64>,
    ) -> Result<Self> {
        let m = dictionary.ncols();
        if k_t.dim() != (m, m) || z_star.len() != dictionary.nrows() {
            return Err(Error::ShapeMismatch(
                "sparse spec dimensions disagree".into(),
            ));
        }
        if !(tau_bar2 > 0.0) {
            return Err(Error::ParameterRange(format!(
                "tau_bar^2 must be positive, got {tau_bar2}"
            )));
        }
        let gram = dictionary.t().dot(&dictionary);
        let u = &k_t.to_owned() - &gram.mapv(|v| v / tau_bar2);
        let h = dictionary.t().dot(&z_star).mapv(|v| v / tau_bar2);
        Self::new(u, h)
    }

    pub fn dim(&self) -> usize {
        self.field.len()
    }
}

/// Stopping rule for [`fixed_point_solve`].
#[derive(Debug, Clone, Copy)]
pub enum SolveMode {
    /// Exactly `L` Picard steps from `m0 = 0`.
    Steps(usize),
    /// Iterate until the sup-norm update is at most `tol` (default 1e-10,
    /// step cap 10_000).
    Tolerance { tol: f64, max_steps: usize },
}

impl Default for SolveMode {
    fn default() -> Self {
        SolveMode::Tolerance {
            tol: 1e-10,
            max_steps: 10_000,
        }
    }
}

/// One recorded iteration of the solver.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub iter: usize,
    pub residual: f64,
    pub energy: Option<f64>,
}

/// Solver output. `residual` is the exit fixed-point residual
/// `||m - f(U m + h)||_inf`; `energy_increases` counts recorded steps on
/// which the interior free energy went up (logged, never asserted).
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub m: Array1<f64>,
    pub steps: usize,
    pub residual: f64,
    pub trace: Vec<TraceRow>,
    pub energy_increases: usize,
}

impl SolveOutcome {
    /// Per-iteration trace as CSV text with columns `iter,residual,energy`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,residual,energy\n");
        for row in &self.trace {
            match row.energy {
                Some(e) => {
                    out.push_str(&format!("{},{:.17e},{:.17e}\n", row.iter, row.residual, e))
                }
                None => out.push_str(&format!("{},{:.17e},\n", row.iter, row.residual)),
            }
        }
        out
    }
}

/// Picard iteration `m^{l+1} = f(U m^l + h)` from `m^0 = 0`.
pub fn fixed_point_solve(
    spec: &FreeEnergySpec,
    f: &dyn ScalarFn,
    mode: SolveMode,
) -> Result<SolveOutcome> {
    let lip = f.lipschitz_bound();
    if lip * spec.a_norm >= 1.0 {
        return Err(Error::ContractionViolation(format!(
            "Pi^2 * ||U||_op = {:.6} * {:.6} >= 1",
            lip, spec.a_norm
        )));
    }
    let d = spec.dim();
    let mut m = Array1::zeros(d);
    let mut trace = Vec::new();
    let mut energy_increases = 0usize;
    let mut last_energy = interior_energy(spec.interaction.view(), spec.field.view(), &m);

    let step = |m: &Array1<f64>| -> Array1<f64> {
        let mut arg = spec.interaction.dot(m);
        arg += &spec.field;
        arg.mapv_inplace(|v| f.eval(v));
        arg
    };

    let (max_steps, tol) = match mode {
        SolveMode::Steps(l) => (l, None),
        SolveMode::Tolerance { tol, max_steps } => (max_steps, Some(tol)),
    };

    let mut steps = 0;
    for iter in 0..max_steps {
        let next = step(&m);
        let update = inf_norm_diff(next.view(), m.view());
        let energy = interior_energy(spec.interaction.view(), spec.field.view(), &next);
        if let (Some(prev), Some(cur)) = (last_energy, energy) {
            if cur > prev + 1e-9 {
                energy_increases += 1;
            }
        }
        last_energy = energy;
        trace.push(TraceRow {
            iter: iter + 1,
            residual: update,
            energy,
        });
        m = next;
        steps = iter + 1;
        if let Some(tol) = tol {
            if update <= tol {
                let residual = inf_norm_diff(step(&m).view(), m.view());
                return Ok(SolveOutcome {
                    m,
                    steps,
                    residual,
                    trace,
                    energy_increases,
                });
            }
        }
    }
    let residual = inf_norm_diff(step(&m).view(), m.view());
    if let Some(tol) = tol {
        if residual > tol {
            return Err(Error::NonConvergence { steps, residual });
        }
    }
    Ok(SolveOutcome {
        m,
        steps,
        residual,
        trace,
        energy_increases,
    })
}
