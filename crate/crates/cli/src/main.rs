mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icadetect::ica::IcaConfig;

use crate::commands::{BenchParams, MatrixWeighting};
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "icadetect", version, about = "ICA features and kernel SVMs for short-text reliability detection")]
struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set cv.ica.lambda=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Nested cross-validation, final model fit and report emission.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Separation quality of the ICA optimizer on synthetic mixtures.
    BssBench {
        /// Source families (laplace, uniform, bimodal, gaussian) or `standard`
        /// for 4 Laplace, 2 uniform and 2 bimodal sources.
        #[arg(long, value_delimiter = ',', default_value = "standard")]
        sources: Vec<String>,
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = IcaConfig::default().restarts)]
        restarts: usize,
        #[arg(long, default_value_t = IcaConfig::default().max_iters)]
        max_iters: usize,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Also time one run at order 50 on 560 samples.
        #[arg(long)]
        reference_timing: bool,
        /// Write the JSON report here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Lexicons of the most heavily weighted terms per component.
    Discover {
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short, default_value_t = icadetect::evaluation::DEFAULT_LEXICON_SIZE)]
        k: usize,
        /// Components rendered in the table on stderr.
        #[arg(long, default_value_t = 5)]
        show: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Dump the term-document matrix as `row,col,value` triplets.
    Featurize {
        #[arg(long, short)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "tfidf")]
        weighting: MatrixWeighting,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a saved model on a labeled CSV.
    Eval {
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        data: PathBuf,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))?;

    match cli.command {
        Command::Run { config } => {
            let cfg = RunConfig::load(config.config.as_deref(), &config.overrides)?;
            commands::run(&cfg, threads)
        }
        Command::BssBench {
            sources,
            samples,
            seeds,
            first_seed,
            restarts,
            max_iters,
            lambda,
            reference_timing,
            out,
        } => commands::bss_bench(&BenchParams {
            sources,
            samples,
            seeds,
            first_seed,
            ica: IcaConfig {
                restarts,
                max_iters,
                lambda,
                ..IcaConfig::default()
            },
            reference_timing,
            out,
        }),
        Command::Discover { model, k, show, out } => commands::discover(&model, k, show, out.as_deref()),
        Command::Featurize {
            data,
            weighting,
            out,
            config,
        } => {
            let cfg = RunConfig::load(config.config.as_deref(), &config.overrides)?;
            commands::featurize(&cfg, &data, weighting, out.as_deref())
        }
        Command::Eval { model, data, out } => commands::eval(&model, &data, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
