use crate::manifest::{input_hash, resolve_out, write_manifest, Manifest};
use crate::oracles::{build_oracle, load_model, Provenance, UnrollKnobs};
use anyhow::{bail, Context, Result};
use ndarray::Array1;
use scorelab::diffusion::{ddpm_sample, round_to_spins};
use scorelab::io::Model;
use scorelab::metrics::discrete_kl;
use scorelab::schedule::two_phase_grid;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(clap::Args, Serialize)]
pub struct Args {
    /// TOML experiment config; explicit flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated kappa values, e.g. "0.2,0.1,0.05"
    #[arg(long, visible_alias = "kappa")]
    kappas: Option<String>,
    #[arg(long)]
    chains: Option<usize>,
    /// Number of independent seeds per kappa
    #[arg(long)]
    seeds: Option<usize>,
    /// Base seed; run j of kappa i uses base + i * seeds + j
    #[arg(long)]
    seed: Option<u64>,
    /// Target terminal gap (each grid's delta lands near it)
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    score: Option<String>,
    #[arg(long)]
    pseudo_count: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional SVG plot of the median-KL trend
    #[arg(long)]
    plot: Option<PathBuf>,
}

/// The TOML experiment config: same fields as the flags.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    model: Option<PathBuf>,
    kappas: Option<Vec<f64>>,
    chains: Option<usize>,
    seeds: Option<usize>,
    seed: Option<u64>,
    delta: Option<f64>,
    score: Option<String>,
    pseudo_count: Option<f64>,
    out: Option<PathBuf>,
    plot: Option<PathBuf>,
    /// Unrolled-construction knobs
    zeta: Option<f64>,
    layers: Option<usize>,
    correction: Option<String>,
}

#[derive(Serialize)]
struct Resolved {
    model: PathBuf,
    kappas: Vec<f64>,
    chains: usize,
    seeds: usize,
    seed: u64,
    delta: f64,
    score: String,
    pseudo_count: f64,
    out: PathBuf,
    plot: Option<PathBuf>,
    zeta: f64,
    layers: usize,
    correction: String,
}

fn resolve(args: Args) -> Result<Resolved> {
    let file: ExperimentConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).context("parsing experiment config")?
        }
        None => ExperimentConfig::default(),
    };
    let kappas = match (&args.kappas, file.kappas) {
        (Some(s), _) => s
            .split(',')
            .map(|v| v.trim().parse::<f64>().context("parsing kappa"))
            .collect::<Result<Vec<_>>>()?,
        (None, Some(v)) => v,
        (None, None) => bail!("kappas required (flag --kappas or config)"),
    };
    let model = args.model.or(file.model).context("model path required")?;
    let seed = args
        .seed
        .or(file.seed)
        .context("seed required (explicit, no entropy defaults)")?;
    Ok(Resolved {
        model,
        kappas,
        chains: args.chains.or(file.chains).unwrap_or(20_000),
        seeds: args.seeds.or(file.seeds).unwrap_or(20),
        seed,
        delta: args.delta.or(file.delta).unwrap_or(0.05),
        score: args.score.or(file.score).unwrap_or_else(|| "exact".into()),
        pseudo_count: args.pseudo_count.or(file.pseudo_count).unwrap_or(0.5),
        out: args.out.or(file.out).context("output path required")?,
        plot: args.plot.or(file.plot),
        zeta: file.zeta.unwrap_or(0.1),
        layers: file.layers.unwrap_or(12),
        correction: file.correction.unwrap_or_else(|| "none".into()),
    })
}

pub fn run(args: Args) -> Result<()> {
    let cfg = resolve(args)?;
    let model = load_model(&cfg.model)?;
    let ising = match &model {
        Model::Ising(m) => m.clone(),
        _ => bail!("sweep compares rounded discrete laws; it needs an ising model"),
    };
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        bail!("delta must lie in (0, 1)");
    }
    let provenance = Provenance::parse(&cfg.score)?;
    let knobs = UnrollKnobs {
        zeta: cfg.zeta,
        layers: cfg.layers,
        correction: cfg.correction.clone(),
        nu: 0.0,
    };

    struct Row {
        kappa: f64,
        delta: f64,
        n_steps: usize,
        seed: u64,
        kl: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut medians = Vec::new();
    let mut all_seeds = Vec::new();
    for (i, &kappa) in cfg.kappas.iter().enumerate() {
        let n0 = (1.0 / kappa).round().max(1.0) as usize;
        let tail = ((1.0 / cfg.delta).ln() / (1.0 + kappa).ln()).ceil() as usize;
        let grid = two_phase_grid(kappa, n0, n0 + tail.max(1))?;
        let target = ising.rounded_noised_distribution(grid.delta)?;
        let times: Vec<f64> = grid.reverse_times().collect();
        let oracle = build_oracle(&model, &provenance, &times, &knobs)?;

        let mut kls = Vec::with_capacity(cfg.seeds);
        for j in 0..cfg.seeds {
            let run_seed = cfg.seed + (i * cfg.seeds + j) as u64;
            all_seeds.push(run_seed);
            let ys = ddpm_sample(oracle.as_ref(), &grid, cfg.chains, run_seed, None)?;
            let rounded: Vec<Array1<f64>> = ys.iter().map(|y| round_to_spins(y.view())).collect();
            let est = discrete_kl(&target, &rounded, cfg.pseudo_count)?;
            rows.push(Row {
                kappa,
                delta: grid.delta,
                n_steps: grid.n,
                seed: run_seed,
                kl: est.kl,
            });
            kls.push(est.kl);
        }
        kls.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if kls.len() % 2 == 1 {
            kls[kls.len() / 2]
        } else {
            0.5 * (kls[kls.len() / 2 - 1] + kls[kls.len() / 2])
        };
        println!(
            "kappa = {kappa}: delta = {:.4}, N = {}, median KL = {median:.4e}",
            grid.delta, grid.n
        );
        medians.push((kappa, median));
    }

    let out = resolve_out(&cfg.out);
    let mut writer =
        csv::Writer::from_path(&out).with_context(|| format!("writing {}", out.display()))?;
    writer.write_record(["kappa", "delta", "n_steps", "seed", "kl", "median_kl"])?;
    for row in &rows {
        let median = medians
            .iter()
            .find(|(k, _)| *k == row.kappa)
            .map(|(_, m)| *m)
            .unwrap_or(f64::NAN);
        writer.write_record([
            row.kappa.to_string(),
            row.delta.to_string(),
            row.n_steps.to_string(),
            row.seed.to_string(),
            format!("{:.17e}", row.kl),
            format!("{median:.17e}"),
        ])?;
    }
    writer.flush()?;

    let monotone = medians.windows(2).all(|w| w[0].1 >= w[1].1);
    println!(
        "median KL {} in kappa across {:?}",
        if monotone {
            "non-increasing"
        } else {
            "NOT monotone"
        },
        cfg.kappas
    );

    let mut outputs = vec![out.display().to_string()];
    if let Some(plot_path) = &cfg.plot {
        let plot_path = resolve_out(plot_path);
        let svg = crate::plot::line_plot(
            &[crate::plot::Series {
                name: "median rounded KL".into(),
                points: medians.clone(),
            }],
            "discretization sweep",
            "kappa",
            "median KL",
        );
        std::fs::write(&plot_path, svg)
            .with_context(|| format!("writing {}", plot_path.display()))?;
        outputs.push(plot_path.display().to_string());
    }

    write_manifest(
        &out,
        &Manifest {
            command: "sweep".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(&cfg)?,
            seeds: all_seeds,
            inputs: vec![input_hash(&cfg.model)?],
            outputs,
        },
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
