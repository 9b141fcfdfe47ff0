use crate::manifest::{input_hash, resolve_out, write_manifest, Manifest};
use crate::oracles::{load_model, unroll_entry, UnrollKnobs};
use anyhow::{bail, Context, Result};
use scorelab::unroll::weight_norm;
use std::path::PathBuf;

#[derive(clap::Args, serde::Serialize)]
pub struct Args {
    #[arg(long)]
    model: PathBuf,
    /// Single construction time (exclusive with the grid flags)
    #[arg(long)]
    t: Option<f64>,
    /// Grid flags: construct one net per reverse time T - t_k
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Residual blocks per net
    #[arg(long)]
    layers: usize,
    /// Uniform budget of the ReLU approximation
    #[arg(long)]
    zeta: f64,
    /// Reaction-term choice: none | sk:<beta>
    #[arg(long, default_value = "none")]
    correction: String,
    /// Quadratic tilt of the sparse-coding scalar denoiser
    #[arg(long, default_value_t = 0.0)]
    nu: f64,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    let model = load_model(&args.model)?;
    let knobs = UnrollKnobs {
        zeta: args.zeta,
        layers: args.layers,
        correction: args.correction.clone(),
        nu: args.nu,
    };
    let times: Vec<f64> = match (args.t, args.kappa, args.n0, args.n) {
        (Some(t), None, None, None) => vec![t],
        (None, Some(kappa), Some(n0), Some(n)) => {
            let grid = scorelab::schedule::two_phase_grid(kappa, n0, n)?;
            grid.reverse_times().collect()
        }
        _ => bail!("give either --t or all of --kappa --n0 --n"),
    };

    let mut bundle = Vec::with_capacity(times.len());
    for &t in &times {
        let entry = unroll_entry(&model, t, &knobs)?;
        let nrm = weight_norm(&entry.weights);
        if nrm > entry.weights.bound + 1e-9 {
            bail!(
                "constructed norm {nrm} exceeds certified bound {} at t = {t}",
                entry.weights.bound
            );
        }
        println!(
            "t = {t:.6}: D = {}, L = {}, M = {}, |||W||| = {nrm:.3} <= B = {:.3}",
            entry.weights.embed,
            entry.weights.layers(),
            entry.weights.width,
            entry.weights.bound
        );
        bundle.push(entry.weights);
    }

    let out = resolve_out(&args.out);
    std::fs::write(&out, scorelab::io::weight_bundle_to_json(&bundle))
        .with_context(|| format!("writing {}", out.display()))?;
    write_manifest(
        &out,
        &Manifest {
            command: "unroll".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(&args)?,
            seeds: vec![],
            inputs: vec![input_hash(&args.model)?],
            outputs: vec![out.display().to_string()],
        },
    )?;
    println!("wrote {} ({} nets)", out.display(), bundle.len());
    Ok(())
}
