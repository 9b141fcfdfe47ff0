//! JSON schemas and parsing entry points for models, weights, grids and
//! piecewise-linear denoisers.
//!
//! These functions are total on untrusted input: every parse failure or
//! invariant violation surfaces as an error, never a panic, and declared
//! dimensions are bounds-checked against the actual payload before any
//! reshaping. They are the crate's fuzzing surface.

use crate::models::{BlockIsingModel, DiscretePrior, IsingModel, SparseCodingModel};
use crate::schedule::TimeGrid;
use crate::unroll::{ResNetWeights, WeightKind};
use crate::variational::{PwlDenoiser, PwlKnot};
use crate::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Guard against absurd declared dimensions before allocating.
const MAX_MATRIX_ENTRIES: usize = 1 << 26;

fn matrix_from_flat(rows: usize, cols: usize, data: &[f64], name: &str) -> Result<Array2<f64>> {
    let want = rows
        .checked_mul(cols)
        .filter(|&n| n <= MAX_MATRIX_ENTRIES)
        .ok_or_else(|| Error::Parse(format!("{name}: dimensions {rows} x {cols} out of range")))?;
    if data.len() != want {
        return Err(Error::Parse(format!(
            "{name}: expected {want} entries for {rows} x {cols}, got {}",
            data.len()
        )));
    }
    Array2::from_shape_vec((rows, cols), data.to_vec())
        .map_err(|e| Error::Parse(format!("{name}: {e}")))
}

fn flat(a: &ndarray::ArrayView2<f64>) -> Vec<f64> {
    a.iter().cloned().collect()
}

/// Any of the three generative models.
#[derive(Debug, Clone)]
pub enum Model {
    Ising(IsingModel),
    BlockIsing(BlockIsingModel),
    Sparse(SparseCodingModel),
}

impl Model {
    pub fn dim(&self) -> usize {
        match self {
            Model::Ising(m) => m.dim(),
            Model::BlockIsing(m) => m.dim(),
            Model::Sparse(m) => m.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Ising(_) => "ising",
            Model::BlockIsing(_) => "block_ising",
            Model::Sparse(_) => "sparse_coding",
        }
    }
}

/// On-disk model document: matrices as row-major arrays plus dims.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum ModelFile {
    Ising {
        dim: usize,
        coupling: Vec<f64>,
    },
    BlockIsing {
        dim: usize,
        latent: usize,
        a11: Vec<f64>,
        a12: Vec<f64>,
        a22: Vec<f64>,
    },
    SparseCoding {
        dim: usize,
        atoms: usize,
        dictionary: Vec<f64>,
        prior: Vec<(f64, f64)>,
        tau: f64,
    },
}

pub fn parse_model_json(text: &str) -> Result<Model> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    match file {
        ModelFile::Ising { dim, coupling } => {
            let a = matrix_from_flat(dim, dim, &coupling, "coupling")?;
            Ok(Model::Ising(IsingModel::new(a)?))
        }
        ModelFile::BlockIsing {
            dim,
            latent,
            a11,
            a12,
            a22,
        } => {
            let a11 = matrix_from_flat(dim, dim, &a11, "a11")?;
            let a12 = matrix_from_flat(dim, latent, &a12, "a12")?;
            let a22 = matrix_from_flat(latent, latent, &a22, "a22")?;
            Ok(Model::BlockIsing(BlockIsingModel::new(a11, a12, a22)?))
        }
        ModelFile::SparseCoding {
            dim,
            atoms,
            dictionary,
            prior,
            tau,
        } => {
            let a = matrix_from_flat(dim, atoms, &dictionary, "dictionary")?;
            let prior = DiscretePrior::new(prior)?;
            Ok(Model::Sparse(SparseCodingModel::new(a, prior, tau)?))
        }
    }
}

pub fn model_to_json(model: &Model) -> String {
    let file = match model {
        Model::Ising(m) => ModelFile::Ising {
            dim: m.dim(),
            coupling: flat(&m.coupling()),
        },
        Model::BlockIsing(m) => ModelFile::BlockIsing {
            dim: m.dim(),
            latent: m.latent_dim(),
            a11: flat(&m.a11()),
            a12: flat(&m.a12()),
            a22: flat(&m.a22()),
        },
        Model::Sparse(m) => ModelFile::SparseCoding {
            dim: m.dim(),
            atoms: m.n_atoms(),
            dictionary: flat(&m.dictionary()),
            prior: m.prior().atoms().to_vec(),
            tau: m.tau(),
        },
    };
    serde_json::to_string_pretty(&file).expect("model serialization is infallible")
}

/// Weight file: header plus row-major matrices. Floats round-trip exactly
/// (serde_json emits shortest-round-trip decimal).
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    kind: WeightKind,
    d: usize,
    m: usize,
    embed: usize,
    layers: usize,
    width: usize,
    bound: f64,
    t: f64,
    zeta: f64,
    w_in: Vec<f64>,
    blocks: Vec<BlockFile>,
    w_out: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockFile {
    w1: Vec<f64>,
    w2: Vec<f64>,
}

pub fn parse_weights_json(text: &str) -> Result<ResNetWeights> {
    let file: WeightsFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.blocks.len() != file.layers {
        return Err(Error::Parse(format!(
            "declared {} layers but {} blocks present",
            file.layers,
            file.blocks.len()
        )));
    }
    let din = file
        .d
        .checked_add(file.m)
        .and_then(|v| v.checked_add(1))
        .ok_or_else(|| Error::Parse("input dimension overflow".into()))?;
    let w_in = matrix_from_flat(file.embed, din, &file.w_in, "w_in")?;
    let w_out = matrix_from_flat(file.d, file.embed, &file.w_out, "w_out")?;
    let blocks = file
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            Ok((
                matrix_from_flat(file.embed, file.width, &b.w1, &format!("block {i} w1"))?,
                matrix_from_flat(file.width, file.embed, &b.w2, &format!("block {i} w2"))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = ResNetWeights {
        kind: file.kind,
        d: file.d,
        m: file.m,
        embed: file.embed,
        width: file.width,
        bound: file.bound,
        t: file.t,
        zeta: file.zeta,
        w_in,
        blocks,
        w_out,
    };
    weights.validate()?;
    Ok(weights)
}

pub fn weights_to_json(w: &ResNetWeights) -> String {
    let file = WeightsFile {
        kind: w.kind,
        d: w.d,
        m: w.m,
        embed: w.embed,
        layers: w.blocks.len(),
        width: w.width,
        bound: w.bound,
        t: w.t,
        zeta: w.zeta,
        w_in: flat(&w.w_in.view()),
        blocks: w
            .blocks
            .iter()
            .map(|(w1, w2)| BlockFile {
                w1: flat(&w1.view()),
                w2: flat(&w2.view()),
            })
            .collect(),
        w_out: flat(&w.w_out.view()),
    };
    serde_json::to_string(&file).expect("weights serialization is infallible")
}

/// A bundle is either one weight document or a JSON array of them (one per
/// grid time, as written by unrolling over a whole schedule).
pub fn parse_weight_bundle_json(text: &str) -> Result<Vec<ResNetWeights>> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let files: Vec<serde_json::Value> =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if files.len() > 100_000 {
            return Err(Error::Parse("bundle too large".into()));
        }
        files
            .into_iter()
            .map(|v| {
                let s = serde_json::to_string(&v).map_err(|e| Error::Parse(e.to_string()))?;
                parse_weights_json(&s)
            })
            .collect()
    } else {
        Ok(vec![parse_weights_json(text)?])
    }
}

pub fn weight_bundle_to_json(ws: &[ResNetWeights]) -> String {
    if ws.len() == 1 {
        return weights_to_json(&ws[0]);
    }
    let parts: Vec<String> = ws.iter().map(weights_to_json).collect();
    format!("[{}]", parts.join(","))
}

pub fn parse_grid_json(text: &str) -> Result<TimeGrid> {
    let grid: TimeGrid = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if grid.times.len() > 10_000_000 || grid.gaps.len() > 10_000_000 {
        return Err(Error::Parse("grid too large".into()));
    }
    grid.validate()?;
    Ok(grid)
}

pub fn grid_to_json(grid: &TimeGrid) -> String {
    serde_json::to_string_pretty(grid).expect("grid serialization is infallible")
}

/// Pwl document: `(a0, pairs)` plus budget and bound.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PwlFile {
    a0: f64,
    knots: Vec<(f64, f64)>,
    zeta: f64,
    pi: f64,
}

pub fn parse_pwl_json(text: &str) -> Result<PwlDenoiser> {
    let file: PwlFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if file.knots.len() > 10_000_000 {
        return Err(Error::Parse("too many knots".into()));
    }
    let knots = file
        .knots
        .into_iter()
        .map(|(slope_delta, breakpoint)| PwlKnot {
            slope_delta,
            breakpoint,
        })
        .collect();
    PwlDenoiser::new(file.a0, knots, file.zeta, file.pi)
}

pub fn pwl_to_json(p: &PwlDenoiser) -> String {
    let file = PwlFile {
        a0: p.a0(),
        knots: p
            .knots()
            .iter()
            .map(|k| (k.slope_delta, k.breakpoint))
            .collect(),
        zeta: p.zeta(),
        pi: p.pi(),
    };
    serde_json::to_string_pretty(&file).expect("pwl serialization is infallible")
}

/// FNV-1a over a byte string; used for run-manifest hashes.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}
