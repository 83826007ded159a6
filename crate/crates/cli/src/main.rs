//! `uhd`: train, evaluate and compare hyperdimensional image classifiers.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data, format or model
//! errors, 3 resource limits.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<uhd::Error> for CliError {
    fn from(e: uhd::Error) -> Self {
        let code = match e {
            uhd::Error::Capacity { .. } | uhd::Error::Resource { .. } => 3,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "uhd",
    version,
    about = "Hyperdimensional image classification with uHD and baseline encoders"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// IDX directory, a CSV file, or `train.csv,test.csv`.
    #[arg(long, global = true)]
    dataset: Option<String>,

    /// Encoder kind: `uhd` or `baseline`.
    #[arg(long, global = true)]
    encoder: Option<String>,

    /// Hypervector dimension.
    #[arg(long, global = true)]
    dim: Option<usize>,

    /// Comma-separated dimensions for `compare`.
    #[arg(long, global = true, value_delimiter = ',')]
    dims: Option<Vec<usize>>,

    /// Iterations for `sweep` and `compare`.
    #[arg(long, global = true)]
    iters: Option<usize>,

    /// Base seed for baseline hypervectors.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Per-class cap on training images.
    #[arg(long, global = true)]
    train_limit: Option<usize>,

    /// Cap on test images.
    #[arg(long, global = true)]
    test_limit: Option<usize>,

    /// Inference mode: `centered-cosine`, `raw-cosine` or `binarized`.
    #[arg(long, global = true)]
    inference: Option<String>,

    /// Output directory for models, tables and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    emit_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write it to `<out>/model.uhd`.
    Train,
    /// Evaluate a saved model on the test split.
    Eval {
        /// Model file written by `train`.
        model: PathBuf,
    },
    /// Baseline sweep against a single uHD run for each dimension.
    Compare,
    /// Repeated train/evaluate runs with fresh seeds.
    Sweep,
    /// Write the quantized Sobol table and print level balance.
    SobolDump {
        /// Number of positions (pixels).
        #[arg(long, default_value_t = 784)]
        features: usize,
    },
    /// Exhaustive checks of the unary comparator and masked binarizer.
    Selftest,
}

impl Cli {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(spec) = &self.dataset {
            cfg.set_dataset(spec);
        }
        if let Some(kind) = &self.encoder {
            cfg.encoder.kind = kind.clone();
        }
        if let Some(dim) = self.dim {
            cfg.encoder.dim = dim;
        }
        if let Some(dims) = &self.dims {
            cfg.run.dims = dims.clone();
        }
        if let Some(iters) = self.iters {
            cfg.run.iters = iters;
        }
        if let Some(seed) = self.seed {
            cfg.encoder.seed = seed;
        }
        if let Some(workers) = self.workers {
            cfg.run.workers = workers;
        }
        if let Some(limit) = self.train_limit {
            cfg.dataset.train_limit = limit;
        }
        if let Some(limit) = self.test_limit {
            cfg.dataset.test_limit = limit;
        }
        if let Some(mode) = &self.inference {
            cfg.model.inference = mode.clone();
        }
        if let Some(out) = &self.out {
            cfg.run.out = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = cli.resolve()?;
    if cli.emit_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match cli.command {
        None => Err(CliError::usage("no command given; see `uhd --help`")),
        Some(Command::Train) => commands::train(&cfg),
        Some(Command::Eval { model }) => commands::eval(&cfg, &model, cli.inference.is_some()),
        Some(Command::Compare) => commands::compare(&cfg),
        Some(Command::Sweep) => commands::sweep(&cfg),
        Some(Command::SobolDump { features }) => commands::sobol_dump(&cfg, features),
        Some(Command::Selftest) => commands::selftest(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
