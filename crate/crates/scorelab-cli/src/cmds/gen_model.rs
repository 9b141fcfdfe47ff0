use crate::manifest::{resolve_out, write_manifest, Manifest};
use anyhow::{bail, Context, Result};
use ndarray::Array2;
use rand_distr::Distribution;
use scorelab::io::{model_to_json, Model};
use scorelab::linalg::random_symmetric_with_op_norm;
use scorelab::models::{BlockIsingModel, DiscretePrior, IsingModel, SparseCodingModel};
use std::path::PathBuf;

#[derive(clap::Args, serde::Serialize)]
pub struct Args {
    /// ising | block_ising | sparse_coding
    #[arg(long)]
    kind: String,
    /// Observation dimension d
    #[arg(long)]
    dim: usize,
    /// Latent block size (block_ising) or atom count (sparse_coding)
    #[arg(long, default_value_t = 0)]
    latent: usize,
    /// Coupling style: goe | ferro | zero
    #[arg(long, default_value = "goe")]
    style: String,
    /// Target operator norm for goe couplings
    #[arg(long, default_value_t = 0.4)]
    op_norm: f64,
    /// Interaction strength for the ferro style (A = beta 11^T / d)
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    /// Cross-block entry scale for block_ising
    #[arg(long, default_value_t = 0.2)]
    cross_scale: f64,
    /// Observation noise for sparse_coding
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Sparse prior as value:prob pairs, e.g. "-1:0.25,0:0.5,1:0.25"
    #[arg(long, default_value = "-1:0.5,1:0.5", allow_hyphen_values = true)]
    prior: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn coupling(
    style: &str,
    d: usize,
    op_norm: f64,
    beta: f64,
    rng: &mut scorelab::rng::Rng,
) -> Result<Array2<f64>> {
    Ok(match style {
        "goe" => random_symmetric_with_op_norm(d, op_norm, rng),
        "ferro" => Array2::from_elem((d, d), beta / d as f64),
        "zero" => Array2::zeros((d, d)),
        other => bail!("unknown style '{other}' (expected goe | ferro | zero)"),
    })
}

fn parse_prior(spec: &str) -> Result<DiscretePrior> {
    let mut atoms = Vec::new();
    for part in spec.split(',') {
        let (v, p) = part
            .split_once(':')
            .with_context(|| format!("prior atom '{part}' is not value:prob"))?;
        atoms.push((v.trim().parse()?, p.trim().parse()?));
    }
    Ok(DiscretePrior::new(atoms)?)
}

pub fn run(args: Args) -> Result<()> {
    let mut rng = scorelab::rng::root(args.seed);
    let model = match args.kind.as_str() {
        "ising" => Model::Ising(IsingModel::new(coupling(
            &args.style,
            args.dim,
            args.op_norm,
            args.beta,
            &mut rng,
        )?)?),
        "block_ising" => {
            let a11 = coupling(&args.style, args.dim, args.op_norm, args.beta, &mut rng)?;
            let a22 = coupling(&args.style, args.latent, args.op_norm, args.beta, &mut rng)?;
            let a12 = Array2::from_shape_fn((args.dim, args.latent), |_| {
                let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
                args.cross_scale * g
            });
            Model::BlockIsing(BlockIsingModel::new(a11, a12, a22)?)
        }
        "sparse_coding" => {
            if args.latent == 0 {
                bail!("sparse_coding needs --latent (atom count) > 0");
            }
            let scale = 1.0 / (args.latent as f64).sqrt();
            let dict = Array2::from_shape_fn((args.dim, args.latent), |_| {
                let g: f64 = rand_distr::StandardNormal.sample(&mut rng);
                scale * g
            });
            Model::Sparse(SparseCodingModel::new(
                dict,
                parse_prior(&args.prior)?,
                args.tau,
            )?)
        }
        other => bail!("unknown kind '{other}'"),
    };

    let out = resolve_out(&args.out);
    std::fs::write(&out, model_to_json(&model))
        .with_context(|| format!("writing {}", out.display()))?;
    write_manifest(
        &out,
        &Manifest {
            command: "gen-model".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(&args)?,
            seeds: vec![args.seed],
            inputs: vec![],
            outputs: vec![out.display().to_string()],
        },
    )?;
    println!(
        "wrote {} ({} model, d = {})",
        out.display(),
        model.kind_name(),
        model.dim()
    );
    Ok(())
}
