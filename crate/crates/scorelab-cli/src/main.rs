//! Experiment orchestration for the scorelab library.
//!
//! Every run writes a manifest next to its outputs (resolved config, seeds,
//! input hashes); reruns from the same manifest reproduce outputs byte for
//! byte in single-threaded mode. Seeds are always explicit. Errors exit
//! nonzero with a single machine-parsable line `error[<class>]: ...`.

mod cmds;
mod manifest;
mod oracles;
mod plot;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "scorelab",
    version,
    about = "Score-function laboratory for graphical models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a model file
    GenModel(cmds::gen_model::Args),
    /// Print or save a two-phase discretization grid
    Schedule(cmds::schedule::Args),
    /// Construct unrolled network weights for one time or a whole grid
    Unroll(cmds::unroll::Args),
    /// Run the reverse sampler and write one row per chain
    Sample(cmds::sample::Args),
    /// Fit a score network by projected gradient descent
    Train(cmds::train::Args),
    /// Measure score error and distributional metrics
    Eval(cmds::eval::Args),
    /// Sweep kappa at fixed terminal gap and report the KL trend
    Sweep(cmds::sweep::Args),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenModel(args) => cmds::gen_model::run(args),
        Command::Schedule(args) => cmds::schedule::run(args),
        Command::Unroll(args) => cmds::unroll::run(args),
        Command::Sample(args) => cmds::sample::run(args),
        Command::Train(args) => cmds::train::run(args),
        Command::Eval(args) => cmds::eval::run(args),
        Command::Sweep(args) => cmds::sweep::run(args),
    };
    if let Err(err) = result {
        let class = err
            .downcast_ref::<scorelab::Error>()
            .map(|e| e.class())
            .unwrap_or("cli");
        eprintln!("error[{class}]: {err:#}");
        std::process::exit(1);
    }
}
