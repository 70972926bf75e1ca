use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cnn_mixture::commands::{self, EvalTarget};
use cnn_mixture::config::{Overrides, Profile, RunConfig};
use cnn_mixture::data::disk::SplitName;
use cnn_mixture::report;
use cnn_mixture::Error;

/// Train a CNN in one session, harvest its best checkpoints and combine them
/// with least-squares mixture weights.
#[derive(Parser)]
#[command(name = "cnnmix", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// desk (64x64, 30 epochs) or full (128x128, 300 epochs).
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Mixture decision threshold on the weighted sum.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    ckpt_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    report_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and split the synthetic dataset.
    GenData,
    /// Train one session and save the top checkpoints.
    Train,
    /// Fit mixture weights and compare against the baselines.
    Ensemble,
    /// Finite-difference gradient check on a 16x16 network.
    Gradcheck,
    /// Score a checkpoint or the fitted mixture on one split.
    Eval {
        #[arg(long, conflicts_with = "weights", required_unless_present = "weights")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitName,
    },
    /// gen-data, train and ensemble in sequence.
    Run,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

fn run(cli: Cli) -> Result<bool, Error> {
    let g = cli.global;
    let overrides = Overrides {
        seed: g.seed,
        threshold: g.threshold,
        epochs: g.epochs,
        data_dir: g.data_dir,
        ckpt_dir: g.ckpt_dir,
        report_dir: g.report_dir,
    };
    let config = RunConfig::resolve(g.config.as_deref(), g.profile, &overrides)?;
    match cli.command {
        Command::GenData => println!("{}", commands::cmd_gen_data(&config)?),
        Command::Train => println!("{}", commands::cmd_train(&config)?),
        Command::Ensemble => println!("{}", commands::cmd_ensemble(&config)?),
        Command::Gradcheck => {
            let r = commands::cmd_gradcheck(&config, None)?;
            print!("{}", report::gradcheck_text(&r));
            return Ok(r.passed());
        }
        Command::Eval {
            checkpoint,
            weights,
            split,
        } => {
            let target = match (checkpoint, weights) {
                (Some(c), _) => EvalTarget::Checkpoint(c),
                (None, Some(w)) => EvalTarget::Mixture { weights: w },
                (None, None) => unreachable!("clap requires one of the two"),
            };
            println!("{}", commands::cmd_eval(&config, &target, split)?);
        }
        Command::Run => {
            println!("{}", commands::cmd_gen_data(&config)?);
            println!("{}", commands::cmd_train(&config)?);
            println!("{}", commands::cmd_ensemble(&config)?);
        }
        Command::ShowConfig => print!("{}{}", report::stamp(&config), config.to_toml()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
