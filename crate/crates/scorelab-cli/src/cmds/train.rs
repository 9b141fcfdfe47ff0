use crate::manifest::{input_hash, resolve_out, write_manifest, Manifest};
use crate::oracles::load_model;
use anyhow::{bail, Context, Result};
use scorelab::io::Model;
use scorelab::training::{train_score, TrainConfig, TrainData};
use std::path::PathBuf;

#[derive(clap::Args, serde::Serialize)]
pub struct Args {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t: f64,
    /// Architecture D,L,M (embedding, layers, width)
    #[arg(long)]
    dims: String,
    /// Training-set size (IID model draws with one frozen noise each)
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    lr: f64,
    /// Norm bound enforced by projection
    #[arg(long, visible_alias = "B", default_value_t = 50.0)]
    bound: f64,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 0.5)]
    init_scale: f64,
    /// Disable the truncation operator inside the loss
    #[arg(long, default_value_t = false)]
    no_truncation: bool,
    /// Skip the gradient smoke check
    #[arg(long, default_value_t = false)]
    no_grad_check: bool,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-step loss trace CSV
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|v| v.trim().parse().context("parsing --dims"))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [d, l, m] => Ok((*d, *l, *m)),
        _ => bail!("--dims expects D,L,M"),
    }
}

pub fn run(args: Args) -> Result<()> {
    let model = load_model(&args.model)?;
    let ising = match &model {
        Model::Ising(m) => m.clone(),
        _ => bail!("train currently supports ising models"),
    };
    let arch = parse_dims(&args.dims)?;
    let data = TrainData::for_ising(&ising, args.n, args.seed)?;
    let config = TrainConfig {
        learning_rate: args.lr,
        steps: args.steps,
        batch_size: args.batch,
        bound: args.bound,
        truncation: !args.no_truncation,
        seed: args.seed,
        init_scale: args.init_scale,
        grad_check: !args.no_grad_check,
    };
    let outcome = train_score(&data, args.t, arch, &config, None, None)?;

    let out = resolve_out(&args.out);
    std::fs::write(&out, scorelab::io::weights_to_json(&outcome.weights))
        .with_context(|| format!("writing {}", out.display()))?;
    let mut outputs = vec![out.display().to_string()];
    if let Some(trace_path) = &args.trace {
        let trace_path = resolve_out(trace_path);
        let mut w = csv::Writer::from_path(&trace_path)
            .with_context(|| format!("writing {}", trace_path.display()))?;
        w.write_record(["step", "loss"])?;
        for (i, loss) in outcome.trace.iter().enumerate() {
            w.write_record([i.to_string(), format!("{loss:.17e}")])?;
        }
        w.flush()?;
        outputs.push(trace_path.display().to_string());
    }
    write_manifest(
        &out,
        &Manifest {
            command: "train".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(&args)?,
            seeds: vec![args.seed],
            inputs: vec![input_hash(&args.model)?],
            outputs,
        },
    )?;
    let first = outcome.trace.first().copied().unwrap_or(f64::NAN);
    let last = outcome.trace.last().copied().unwrap_or(f64::NAN);
    println!(
        "wrote {} (loss {first:.4} -> {last:.4} over {} steps)",
        out.display(),
        outcome.trace.len()
    );
    Ok(())
}
