use crate::manifest::{resolve_out, write_manifest, Manifest};
use anyhow::{Context, Result};
use scorelab::schedule::two_phase_grid;
use std::path::PathBuf;

#[derive(clap::Args, serde::Serialize)]
pub struct Args {
    #[arg(long)]
    kappa: f64,
    #[arg(long)]
    n0: usize,
    #[arg(long)]
    n: usize,
    /// Optional JSON output path
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let grid = two_phase_grid(args.kappa, args.n0, args.n)?;
    println!(
        "two-phase grid: kappa = {}, N0 = {}, N = {}, T = {}, delta = {}",
        grid.kappa, grid.n0, grid.n, grid.t_horizon, grid.delta
    );
    println!("{:>4}  {:>18}  {:>18}", "k", "t_k", "gamma_k");
    for k in 0..=grid.n {
        if k < grid.n {
            println!("{k:>4}  {:>18.12}  {:>18.12}", grid.times[k], grid.gaps[k]);
        } else {
            println!("{k:>4}  {:>18.12}", grid.times[k]);
        }
    }
    if let Some(out) = &args.out {
        let out = resolve_out(out);
        std::fs::write(&out, scorelab::io::grid_to_json(&grid))
            .with_context(|| format!("writing {}", out.display()))?;
        write_manifest(
            &out,
            &Manifest {
                command: "schedule".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                config: serde_json::to_value(&args)?,
                seeds: vec![],
                inputs: vec![],
                outputs: vec![out.display().to_string()],
            },
        )?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
