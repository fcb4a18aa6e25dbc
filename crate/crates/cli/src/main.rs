use std::path::PathBuf;
use std::process::ExitCode;

use cbfl::datagen::Task;
use cbfl_cli::analyze::cmd_analyze;
use cbfl_cli::config::{Arm, ExperimentConfig, Split};
use cbfl_cli::error::{CliError, CliResult};
use cbfl_cli::generate::cmd_generate;
use cbfl_cli::predict::cmd_predict;
use cbfl_cli::train::cmd_train;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cbfl", version, about = "Community-based federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory for the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum TaskArg {
    Mortality,
    StayTime,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort CSV.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_hospitals: Option<usize>,
        #[arg(long)]
        patients_per_hospital: Option<usize>,
    },
    /// Train one arm and write a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        arm: Option<Arm>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long, value_enum)]
        split: Option<Split>,
        /// Cohort CSV; without one the cohort is generated.
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        max_rounds: Option<usize>,
        /// Train clients on a thread pool.
        #[arg(long)]
        parallel: bool,
    },
    /// Derive curve, community, distance and enrichment tables from run directories.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Score a cohort CSV with a trained run directory.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file; defaults to `scored.csv` under `--out` (or the bundle directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> CliResult<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    Ok(config)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate {
            common,
            n_hospitals,
            patients_per_hospital,
        } => {
            let mut config = resolve(&common)?;
            if let Some(n) = n_hospitals {
                config.n_hospitals = n;
            }
            if let Some(n) = patients_per_hospital {
                config.patients_per_hospital = n;
            }
            let out = cmd_generate(&config)?;
            print!("{}", out.summary);
            println!("{}", out.cohort.display());
        }
        Command::Train {
            common,
            arm,
            k,
            task,
            split,
            cohort,
            max_rounds,
            parallel,
        } => {
            let mut config = resolve(&common)?;
            if let Some(arm) = arm {
                config.arm = arm;
                if arm != Arm::Cbfl && k.is_none() {
                    config.k = None;
                }
            }
            if k.is_some() {
                config.k = k;
            }
            if let Some(task) = task {
                config.task = match task {
                    TaskArg::Mortality => Task::Mortality,
                    TaskArg::StayTime => Task::StayTime,
                };
            }
            if let Some(split) = split {
                config.split = split;
            }
            if cohort.is_some() {
                config.cohort = cohort;
            }
            if let Some(r) = max_rounds {
                config.max_rounds = r;
            }
            if parallel {
                config.parallel = true;
            }
            let out = cmd_train(&config)?;
            println!(
                "roc_auc {:.4}  pr_auc {:.4}  rounds {}",
                out.metrics.roc_auc, out.metrics.pr_auc, out.metrics.rounds
            );
            println!("{}", out.run_dir.display());
        }
        Command::Analyze { common, runs } => {
            let config = resolve(&common)?;
            let dir = cmd_analyze(&runs, &config.out)?;
            println!("{}", dir.display());
        }
        Command::Predict {
            common,
            bundle,
            input,
            output,
        } => {
            let output = match (output, &common.out) {
                (Some(path), _) => path,
                (None, Some(out)) => {
                    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
                    out.join("scored.csv")
                }
                (None, None) => bundle.join("scored.csv"),
            };
            let path = cmd_predict(&bundle, &input, &output)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).expect("report serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
