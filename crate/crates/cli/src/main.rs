use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use instant_cli::commands::{generate, report, train, verify};
use instant_cli::config::ExperimentConfig;
use instant_cli::error::CliError;

#[derive(Parser)]
#[command(name = "instant", version, about = "Semi-supervised threshold experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset and its ground-truth sidecar.
    Generate(RunArgs),
    /// Train every policy for every seed.
    Train(RunArgs),
    /// Check oracle properties of the dataset and existing runs.
    Verify(RunArgs),
    /// Aggregate run directories into a comparison report.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    #[arg(long, value_delimiter = ',')]
    seed_override: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    policy_filter: Option<Vec<String>>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories, or directories containing them.
    runs: Vec<PathBuf>,
    /// Adds the config's `runs/` directory to the inputs.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.apply_overrides(args.seed_override.as_deref(), args.policy_filter.as_deref())?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => generate::run(&load(&args)?),
        Command::Train(args) => {
            let cfg = load(&args)?;
            let dirs = train::run(&cfg, args.jobs)?;
            log::info!("{} runs written under {}", dirs.len(), cfg.runs_dir().display());
            Ok(())
        }
        Command::Verify(args) => {
            let cfg = load(&args)?;
            let path = cfg.output_dir.join(verify::REPORT_FILE);
            let rep = verify::run(&cfg, &path)?;
            if rep.passed {
                Ok(())
            } else {
                let failed: Vec<&str> = rep.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                Err(CliError::Verification(format!("failed checks: {}; see {}", failed.join(", "), path.display())))
            }
        }
        Command::Report(args) => {
            let mut roots = args.runs;
            if let Some(path) = &args.config {
                roots.push(ExperimentConfig::load(path)?.runs_dir());
            }
            if roots.is_empty() {
                return Err(CliError::Config("report needs run directories or --config".into()));
            }
            report::run(&roots, &args.out).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}
