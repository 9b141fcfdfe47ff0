//! Score-oracle construction from CLI provenance strings.

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use scorelab::diffusion::{
    ExactConditionalOracle, ExactIsingOracle, ExactMarginalOracle, ExactSparseOracle, OracleEntry,
    ResNetOracle, ScoreOracle, VariationalKind, VariationalOracle,
};
use scorelab::io::Model;
use scorelab::schedule::noise_level;
use scorelab::unroll::TruncationSpec;
use scorelab::variational::{build_pwl, sk_correction, PosteriorDenoiser, TanhDenoiser};
use std::path::PathBuf;

/// `exact | vi | unrolled | unrolled:<w.json> | trained:<w.json>`.
#[derive(Debug, Clone)]
pub enum Provenance {
    Exact,
    Vi,
    Unrolled(Option<PathBuf>),
    Trained(PathBuf),
}

impl Provenance {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(Self::Exact);
        }
        if s == "vi" {
            return Ok(Self::Vi);
        }
        if s == "unrolled" {
            return Ok(Self::Unrolled(None));
        }
        if let Some(path) = s.strip_prefix("unrolled:") {
            return Ok(Self::Unrolled(Some(PathBuf::from(path))));
        }
        if let Some(path) = s.strip_prefix("trained:") {
            return Ok(Self::Trained(PathBuf::from(path)));
        }
        bail!(
            "unknown score provenance '{s}' (expected exact | vi | unrolled[:file] | trained:file)"
        )
    }

    pub fn weight_file(&self) -> Option<&PathBuf> {
        match self {
            Self::Unrolled(p) => p.as_ref(),
            Self::Trained(p) => Some(p),
            _ => None,
        }
    }
}

/// `none | sk:<beta>`: the correction matrix K used by vi and unrolled routes.
pub fn correction_matrix(spec: &str, n: usize, t: f64) -> Result<Array2<f64>> {
    if spec == "none" {
        return Ok(Array2::zeros((n, n)));
    }
    if let Some(beta) = spec.strip_prefix("sk:") {
        let beta: f64 = beta.parse().context("parsing beta in sk:<beta>")?;
        let c = sk_correction(beta, t)?;
        return Ok(Array2::<f64>::eye(n).mapv(|v| v * c));
    }
    bail!("unknown correction '{spec}' (expected none | sk:<beta>)")
}

/// Extra knobs for constructing unrolled nets on the fly.
pub struct UnrollKnobs {
    pub zeta: f64,
    pub layers: usize,
    pub correction: String,
    pub nu: f64,
}

/// Builds the oracle for a model, provenance and the grid times it must
/// serve. Network routes apply the matching truncation operator.
pub fn build_oracle(
    model: &Model,
    provenance: &Provenance,
    times: &[f64],
    knobs: &UnrollKnobs,
) -> Result<Box<dyn ScoreOracle>> {
    match provenance {
        Provenance::Exact => Ok(match model {
            Model::Ising(m) => Box::new(ExactIsingOracle(m.clone())),
            Model::BlockIsing(m) => Box::new(ExactMarginalOracle(m.clone())),
            Model::Sparse(m) => Box::new(ExactSparseOracle(m.clone())),
        }),
        Provenance::Vi => {
            let kind = match model {
                Model::Ising(m) => VariationalKind::Ising {
                    coupling: m.coupling().to_owned(),
                    correction: correction_for_times(&knobs.correction, m.dim(), times)?,
                },
                Model::BlockIsing(m) => {
                    let p = m.dim() + m.latent_dim();
                    VariationalKind::Marginal {
                        joint: m.joint_coupling(),
                        correction: correction_for_times(&knobs.correction, p, times)?,
                        d: m.dim(),
                    }
                }
                Model::Sparse(m) => VariationalKind::Sparse {
                    model: m.clone(),
                    correction: correction_for_times(&knobs.correction, m.n_atoms(), times)?,
                    nu: knobs.nu,
                },
            };
            Ok(Box::new(VariationalOracle::new(kind)))
        }
        Provenance::Unrolled(None) => {
            let entries = times
                .iter()
                .map(|&t| unroll_entry(model, t, knobs))
                .collect::<Result<Vec<_>>>()?;
            Ok(Box::new(ResNetOracle::new(entries, "unrolled")?))
        }
        Provenance::Unrolled(Some(path)) | Provenance::Trained(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let bundle = scorelab::io::parse_weight_bundle_json(&text)?;
            let entries = bundle
                .into_iter()
                .map(|w| {
                    let nl = noise_level(w.t)?;
                    let trunc = match model {
                        Model::Sparse(m) => TruncationSpec::sparse(m, &nl),
                        _ => TruncationSpec::ising(w.d, &nl),
                    };
                    Ok(OracleEntry {
                        t: w.t,
                        weights: w,
                        truncation: Some(trunc),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let name = match provenance {
                Provenance::Trained(_) => "trained",
                _ => "unrolled",
            };
            Ok(Box::new(ResNetOracle::new(entries, name)?))
        }
    }
}

/// The vi oracle holds one K for all queried times; the SK coefficient is
/// time dependent, so a multi-time vi run requires `none` or a single time.
fn correction_for_times(spec: &str, n: usize, times: &[f64]) -> Result<Array2<f64>> {
    if spec == "none" || times.len() == 1 {
        return correction_matrix(spec, n, times.first().copied().unwrap_or(1.0));
    }
    bail!("correction '{spec}' is time dependent; use --score unrolled or a single-time eval")
}

/// One constructed network plus its truncation, for time `t`.
pub fn unroll_entry(model: &Model, t: f64, knobs: &UnrollKnobs) -> Result<OracleEntry> {
    let nl = noise_level(t)?;
    let (weights, trunc) = match model {
        Model::Ising(m) => {
            let k = correction_matrix(&knobs.correction, m.dim(), t)?;
            let pwl = build_pwl(&TanhDenoiser, knobs.zeta)?;
            let w = scorelab::unroll::unroll_ising(m.coupling(), k.view(), t, knobs.layers, &pwl)?;
            (w, TruncationSpec::ising(m.dim(), &nl))
        }
        Model::BlockIsing(m) => {
            let p = m.dim() + m.latent_dim();
            let k = correction_matrix(&knobs.correction, p, t)?;
            let pwl = build_pwl(&TanhDenoiser, knobs.zeta)?;
            let w = scorelab::unroll::unroll_marginal(
                m.joint_coupling().view(),
                k.view(),
                m.dim(),
                t,
                knobs.layers,
                &pwl,
            )?;
            (w, TruncationSpec::ising(m.dim(), &nl))
        }
        Model::Sparse(m) => {
            let k = correction_matrix(&knobs.correction, m.n_atoms(), t)?;
            let target = PosteriorDenoiser::new(m.prior().clone(), knobs.nu);
            let pwl = build_pwl(&target, knobs.zeta)?;
            let w = scorelab::unroll::unroll_sparse(m, k.view(), t, knobs.layers, &pwl)?;
            (w, TruncationSpec::sparse(m, &nl))
        }
    };
    Ok(OracleEntry {
        t,
        weights,
        truncation: Some(trunc),
    })
}

/// Conditional exact oracle for block models (used when `--theta` is given).
pub fn conditional_exact(model: &Model) -> Result<Box<dyn ScoreOracle>> {
    match model {
        Model::BlockIsing(m) => Ok(Box::new(ExactConditionalOracle(m.clone()))),
        _ => bail!("--theta requires a block_ising model"),
    }
}

/// Conditional vi oracle for block models.
pub fn conditional_vi(model: &Model, correction: &str, t: f64) -> Result<Box<dyn ScoreOracle>> {
    match model {
        Model::BlockIsing(m) => {
            let k = correction_matrix(correction, m.dim(), t)?;
            Ok(Box::new(VariationalOracle::new(
                VariationalKind::Conditional {
                    a11: m.a11().to_owned(),
                    a12: m.a12().to_owned(),
                    correction: k,
                },
            )))
        }
        _ => bail!("--theta requires a block_ising model"),
    }
}

pub fn load_model(path: &std::path::Path) -> Result<Model> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(scorelab::io::parse_model_json(&text)?)
}
