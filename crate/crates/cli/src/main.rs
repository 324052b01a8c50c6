use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use matmuon_cli::check::run_check;
use matmuon_cli::{execute, CliError, Command, ExperimentConfig};

#[derive(Parser, Debug)]
#[command(name = "matmuon", version, about = "Run Muon/MiMuon experiments and emit CSV traces")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment config (JSON), or a summary.json from an earlier run
    #[arg(long)]
    config: PathBuf,

    /// Output directory, created if missing
    #[arg(long)]
    out: PathBuf,

    /// Also run the acceptance suite and a reproducibility rerun
    #[arg(long)]
    check: bool,

    /// Worker threads for independent runs
    #[arg(long, env = "MATMUON_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train one optimizer and write per-step traces
    Train(Common),
    /// Paired replace-one runs with bound recursions
    Stability(Common),
    /// Singular-subspace perturbation probes
    Probe(Common),
    /// Rate fit of the averaged gradient norm over horizons
    Convergence(Common),
    /// MiMuon threshold sweep
    Sweep(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cmd, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Stability(a) => (Command::Stability, a),
        Cmd::Probe(a) => (Command::Probe, a),
        Cmd::Convergence(a) => (Command::Convergence, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = ExperimentConfig::load(&args.config)?;
    let files = execute(cmd, &cfg, &args.out)?;
    if args.check {
        run_check(cmd, &cfg, &args.out, &files)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("matmuon: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
