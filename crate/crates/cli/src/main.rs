use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fungraph_cli::commands;
use fungraph_cli::config::{self, RunConfig};
use fungraph_cli::error::Result;

#[derive(Parser)]
#[command(
    name = "fungraph",
    about = "Knowledge-graph pipeline for multi-modal longitudinal data",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a planted dependency block
    Simulate(CommonArgs),
    /// Embed a dataset into coefficient tensors
    Embed(CommonArgs),
    /// Estimate the knowledge graph from a graph tensor
    Graph(CommonArgs),
    /// Train the graph convolutional network
    Train(CommonArgs),
    /// Predict and decode targets for a model tensor
    Predict(CommonArgs),
    /// Score predictions, or run the replicated evaluation protocol
    Evaluate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON configuration file; omitted sections use built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configuration patch as a dotted path, e.g. scenario.p=10
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        config::load(
            self.config.as_deref(),
            self.seed,
            self.out.as_deref(),
            &self.overrides,
        )
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => commands::simulate::run(&args.load()?),
        Command::Embed(args) => commands::embed::run(&args.load()?),
        Command::Graph(args) => commands::graph::run(&args.load()?),
        Command::Train(args) => commands::train::run(&args.load()?),
        Command::Predict(args) => commands::predict::run(&args.load()?),
        Command::Evaluate(args) => commands::evaluate::run(&args.load()?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
