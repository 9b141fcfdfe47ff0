use crate::manifest::{input_hash, resolve_out, write_manifest, Manifest};
use crate::oracles::{build_oracle, load_model, Provenance, UnrollKnobs};
use anyhow::{bail, Context, Result};
use ndarray::Array1;
use scorelab::io::Model;
use scorelab::metrics::{
    discrete_kl, energy_distance, sample_moments, score_mse, tv, EvalMetadata, EvalReport,
    NoisedSource,
};
use std::path::PathBuf;

#[derive(clap::Args, serde::Serialize)]
pub struct Args {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t: f64,
    /// exact | vi | unrolled[:w.json] | trained:w.json
    #[arg(long)]
    candidate: String,
    #[arg(long, default_value = "exact")]
    reference: String,
    /// Monte Carlo draws for the score error
    #[arg(long, default_value_t = 2_000)]
    n_mc: usize,
    #[arg(long)]
    seed: u64,
    /// Samples CSV (from `sample`) for distributional metrics
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Terminal gap at which the rounded reference distribution is taken
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Smoothing pseudo-count for the KL estimator
    #[arg(long, default_value_t = 0.5)]
    pseudo_count: f64,
    /// Unrolled-construction knobs
    #[arg(long, default_value_t = 0.1)]
    zeta: f64,
    #[arg(long, default_value_t = 12)]
    layers: usize,
    #[arg(long, default_value = "none")]
    correction: String,
    #[arg(long, default_value_t = 0.0)]
    nu: f64,
    /// Dump one fixed-point solver trace (iter, residual, energy) at a probe
    /// observation; candidate must be vi and the model ising
    #[arg(long)]
    solver_trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn flatten_json(prefix: &str, value: &serde_json::Value, out: &mut String) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_json(&key, v, out);
            }
        }
        serde_json::Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten_json(&format!("{prefix}.{i}"), v, out);
            }
        }
        other => {
            out.push_str(&format!("{prefix},{other}\n"));
        }
    }
}

fn read_samples_csv(path: &PathBuf, dim: usize) -> Result<Vec<Array1<f64>>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let y_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("y_"))
        .map(|(i, _)| i)
        .collect();
    if y_cols.len() != dim {
        bail!(
            "samples file has {} y-columns, model dimension is {dim}",
            y_cols.len()
        );
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut y = Array1::zeros(dim);
        for (j, &col) in y_cols.iter().enumerate() {
            y[j] = record
                .get(col)
                .context("missing column")?
                .trim()
                .parse()
                .context("parsing sample entry")?;
        }
        out.push(y);
    }
    Ok(out)
}

pub fn run(args: Args) -> Result<()> {
    let model = load_model(&args.model)?;
    let knobs = UnrollKnobs {
        zeta: args.zeta,
        layers: args.layers,
        correction: args.correction.clone(),
        nu: args.nu,
    };
    let times = [args.t];
    let cand_prov = Provenance::parse(&args.candidate)?;
    let ref_prov = Provenance::parse(&args.reference)?;
    let candidate = build_oracle(&model, &cand_prov, &times, &knobs)?;
    let reference = build_oracle(&model, &ref_prov, &times, &knobs)?;
    let source = match &model {
        Model::Ising(m) => NoisedSource::ising(m)?,
        Model::BlockIsing(m) => NoisedSource::joint(m)?,
        Model::Sparse(m) => NoisedSource::sparse(m),
    };

    let mse = score_mse(
        candidate.as_ref(),
        reference.as_ref(),
        &source,
        args.t,
        args.n_mc,
        args.seed,
    )?;

    let model_bytes = std::fs::read(&args.model)?;
    let mut report = EvalReport {
        score_mse: Some(mse.mse),
        score_mse_std_err: Some(mse.std_err),
        metadata: EvalMetadata {
            model_hash: scorelab::io::fnv1a_hex(&model_bytes),
            seed: args.seed,
            t: args.t,
            candidate: args.candidate.clone(),
            reference: args.reference.clone(),
            grid: None,
            rounded: false,
        },
        ..Default::default()
    };

    if let Some(samples_path) = &args.samples {
        let samples = read_samples_csv(samples_path, model.dim())?;
        match &model {
            Model::Ising(m) => {
                let target = m.rounded_noised_distribution(args.delta)?;
                let rounded: Vec<Array1<f64>> = samples
                    .iter()
                    .map(|y| scorelab::diffusion::round_to_spins(y.view()))
                    .collect();
                report.discrete_kl = Some(discrete_kl(&target, &rounded, args.pseudo_count)?.kl);
                report.tv = Some(tv(&target, &rounded)?);
                report.metadata.rounded = true;
            }
            Model::Sparse(m) => {
                // continuous samples: moments and energy distance vs fresh
                // model draws
                let reference_cloud = m.sample(samples.len().min(2_000), args.seed ^ 0x5eed);
                let sub: Vec<Array1<f64>> = samples.iter().take(2_000).cloned().collect();
                report.energy_distance = Some(energy_distance(&sub, &reference_cloud)?);
            }
            Model::BlockIsing(_) => {}
        }
        let moments = sample_moments(&samples)?;
        report.sample_mean = Some(moments.mean.to_vec());
    }

    if let Some(trace_path) = &args.solver_trace {
        let ising = match &model {
            Model::Ising(m) => m,
            _ => bail!("--solver-trace needs an ising model"),
        };
        let d = ising.dim();
        let x = ising.sample(1, args.seed)?.remove(0);
        let z = scorelab::diffusion::forward_noise(x.view(), args.t, args.seed ^ 0x7ace)?;
        let k = crate::oracles::correction_matrix(&args.correction, d, args.t)?;
        let spec = scorelab::variational::FreeEnergySpec::ising(
            ising.coupling(),
            k.view(),
            z.view(),
            args.t,
        )?;
        let outcome = scorelab::variational::fixed_point_solve(
            &spec,
            &scorelab::variational::TanhDenoiser,
            scorelab::variational::SolveMode::default(),
        )?;
        let trace_path = resolve_out(trace_path);
        std::fs::write(&trace_path, outcome.trace_csv())
            .with_context(|| format!("writing {}", trace_path.display()))?;
        println!(
            "solver trace: {} iterations, {} energy increases, at {}",
            outcome.steps,
            outcome.energy_increases,
            trace_path.display()
        );
    }

    report.validate()?;
    let out = resolve_out(&args.out);
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", out.display()))?;
    // flat CSV twin of the JSON report
    let csv_out = out.with_extension("csv");
    let flat = serde_json::to_value(&report)?;
    let mut csv_text = String::from("key,value\n");
    flatten_json("", &flat, &mut csv_text);
    std::fs::write(&csv_out, csv_text).with_context(|| format!("writing {}", csv_out.display()))?;

    let mut inputs = vec![input_hash(&args.model)?];
    if let Some(p) = cand_prov.weight_file() {
        inputs.push(input_hash(p)?);
    }
    if let Some(p) = args.samples.as_ref() {
        inputs.push(input_hash(p)?);
    }
    write_manifest(
        &out,
        &Manifest {
            command: "eval".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(&args)?,
            seeds: vec![args.seed],
            inputs,
            outputs: vec![out.display().to_string()],
        },
    )?;
    println!(
        "score_mse = {:.6e} (se {:.1e}), report at {}",
        mse.mse,
        mse.std_err,
        out.display()
    );
    Ok(())
}
