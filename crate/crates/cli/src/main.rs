use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stdn_cli::{cmd_cluster, cmd_decompose, cmd_eval, cmd_missing_eval, cmd_synth, cmd_train, Result, RunConfig};

#[derive(Parser)]
#[command(name = "stdn", version, about = "Cluster-based CNN-LSTM traffic forecasting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seasonal, trend and residual components of a panel.
    Decompose(Flags),
    /// Residual DTW distances, merge log and fuzzy clusters.
    Cluster(Flags),
    /// Seeded synthetic corridor.
    Synth(Flags),
    /// Train a forecaster.
    Train(Flags),
    /// Score a model and both baselines.
    Eval(Flags),
    /// Score a model with injected missing data.
    MissingEval(Flags),
}

/// Flags override the matching `seed` and `path.*` config keys.
#[derive(Args)]
struct Flags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    meta: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

impl Flags {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref())?;
        cfg.seed = self.seed.or(cfg.seed);
        let p = &mut cfg.paths;
        for (flag, slot) in [
            (self.data, &mut p.data),
            (self.meta, &mut p.meta),
            (self.out, &mut p.out),
            (self.clusters, &mut p.clusters),
            (self.model, &mut p.model),
            (self.report, &mut p.report),
        ] {
            if flag.is_some() {
                *slot = flag;
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let (flags, cmd): (Flags, fn(&RunConfig) -> Result<()>) = match cli.command {
        Command::Decompose(f) => (f, cmd_decompose),
        Command::Cluster(f) => (f, cmd_cluster),
        Command::Synth(f) => (f, cmd_synth),
        Command::Train(f) => (f, cmd_train),
        Command::Eval(f) => (f, cmd_eval),
        Command::MissingEval(f) => (f, cmd_missing_eval),
    };
    cmd(&flags.resolve()?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
