mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Gradient-boosted normal-mixture postprocessing of ensemble forecasts.
#[derive(Debug, Parser)]
#[command(name = "mixreg", version)]
struct Cli {
    /// TOML run configuration. Every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; overrides `run.jobs`.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory; overrides `run.out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic scenario as forecast, observation and truth CSVs.
    Simulate {
        /// Overrides `data.scenario`.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Fit seasonal climatologies of the response and covariates.
    Climatology,
    /// Fit one model per station and save it under `models/`.
    Train,
    /// Predict the test period with saved models.
    Predict {
        /// Directory holding `<station>.model` files [default: <out-dir>/models].
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Score predictions against observations and the raw ensemble.
    Evaluate {
        /// [default: <out-dir>/predictions.csv]
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Permutation importance of the active covariates on the test period.
    Importance {
        /// Directory holding `<station>.model` files [default: <out-dir>/models].
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Boosting coefficient paths and cross-validated stopping iterations.
    Paths,
    /// Train, predict and evaluate in one go.
    Run,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let opts = commands::GlobalOptions {
        config: cli.config,
        seed: cli.seed,
        jobs: cli.jobs,
        out_dir: cli.out_dir,
    };
    let result = commands::Context::new(opts).and_then(|ctx| match cli.command {
        Command::Simulate { scenario } => ctx.simulate(scenario.as_deref()),
        Command::Climatology => ctx.climatology(),
        Command::Train => ctx.train(),
        Command::Predict { models } => ctx.predict(models),
        Command::Evaluate { predictions } => ctx.evaluate(predictions),
        Command::Importance { models } => ctx.importance(models),
        Command::Paths => ctx.paths(),
        Command::Run => ctx.run(),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
