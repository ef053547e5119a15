//! `actspec`: Fourier spectra, redundancy maps and interventions for binarized
//! activations.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data-format error,
//! 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CommonKnobs, ExportKnobs, FileConfig, MnistKnobs, SearchKnobs, SettingsKnobs, TrainKnobs};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] actspec::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use actspec::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::InvalidArgument(_)) => 2,
            CliError::Core(E::Numeric(_) | E::BudgetExceeded(_)) => 4,
            CliError::Core(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "actspec", version, about = "Fourier analysis of binarized neural activations")]
struct Cli {
    /// Flat TOML file whose keys are long flag names; flags override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Log progress (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    common: CommonKnobs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact Walsh-Hadamard spectrum of a full truth table, as CSV
    Wht {
        /// Dataset covering every point of the cube (ABF, or JSON lines with .jsonl)
        #[arg(long, conflicts_with = "function")]
        input: Option<PathBuf>,
        /// Built-in function instead of a dataset
        #[arg(long, value_enum)]
        function: Option<commands::Builtin>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search an activation dataset for heavy, non-redundant subsets
    Analyze {
        /// ABF dataset (JSON lines when the extension is .jsonl)
        #[arg(long)]
        input: PathBuf,
        /// Answer off-data queries with a built-in function (query mode)
        #[arg(long, value_enum)]
        oracle: Option<commands::Builtin>,
        /// Report JSON (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        search: SearchKnobs,
    },
    /// Per-variable influence estimated from a report
    Influence {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Total-variation scoreboard of ActSpec and black-box baselines on the
    /// multi-tier function
    SynthBench {
        /// Leave the runtime column empty so reruns are byte-identical
        #[arg(long)]
        no_runtime: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        search: SearchKnobs,
        #[command(flatten)]
        settings: SettingsKnobs,
    },
    /// ActSpec over the 784 binarized pixels of a two-digit MNIST subset
    MnistInput {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        mnist: MnistKnobs,
        #[command(flatten)]
        train: TrainKnobs,
        #[command(flatten)]
        search: SearchKnobs,
        #[command(flatten)]
        export: ExportKnobs,
    },
    /// ActSpec over one binarized hidden layer of an MNIST classifier
    MnistLayer {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        mnist: MnistKnobs,
        #[command(flatten)]
        train: TrainKnobs,
        #[command(flatten)]
        search: SearchKnobs,
        #[command(flatten)]
        export: ExportKnobs,
    },
    /// Train at several dropout rates and tabulate subset size and redundancy
    DropoutSweep {
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        mnist: MnistKnobs,
        #[command(flatten)]
        train: TrainKnobs,
        #[command(flatten)]
        search: SearchKnobs,
        #[command(flatten)]
        settings: SettingsKnobs,
    },
    /// Patch neurons (active to 0, inactive to their mean) and count argmax flips
    Intervene {
        /// Use the built-in two-unit cancellation network
        #[arg(long, conflicts_with = "net")]
        cancellation: bool,
        /// JSON file holding an array of input vectors (default: MNIST images)
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Take subsets from this report's accepted list
        #[arg(long)]
        report: Option<PathBuf>,
        /// A subset of neurons, comma separated; repeatable
        #[arg(long = "subset")]
        subsets: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        mnist: MnistKnobs,
    },
    /// Hypergraph (JSON, DOT) and heatmap (CSV, PGM) renderings of a report
    Export {
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        export: ExportKnobs,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let common = cli.common.or(&file.common);
    if let Some(threads) = common.threads {
        if threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let seed = common.seed;
    match cli.command {
        Command::Wht { input, function, out } => commands::wht(input.as_deref(), function, out.as_deref()),
        Command::Analyze { input, oracle, out, search } => {
            commands::analyze(&input, oracle, &search.or(&file.search), seed, out.as_deref())
        }
        Command::Influence { report, out } => commands::influence(&report, out.as_deref()),
        Command::SynthBench { no_runtime, out, search, settings } => commands::synth_bench(
            &search.or(&file.search),
            &settings.or(&file.settings),
            seed,
            !no_runtime,
            out.as_deref(),
        ),
        Command::MnistInput { out, mnist, train, search, export } => commands::mnist_analyze(
            commands::Target::Pixels,
            &mnist.or(&file.mnist),
            &train.or(&file.train),
            &search.or(&file.search),
            &export.or(&file.export),
            seed,
            out.as_deref(),
        ),
        Command::MnistLayer { out, mnist, train, search, export } => commands::mnist_analyze(
            commands::Target::Layer,
            &mnist.or(&file.mnist),
            &train.or(&file.train),
            &search.or(&file.search),
            &export.or(&file.export),
            seed,
            out.as_deref(),
        ),
        Command::DropoutSweep { out, mnist, train, search, settings } => commands::dropout_sweep(
            &mnist.or(&file.mnist),
            &train.or(&file.train),
            &search.or(&file.search),
            &settings.or(&file.settings),
            seed,
            out.as_deref(),
        ),
        Command::Intervene { cancellation, inputs, report, subsets, out, mnist } => commands::intervene(
            cancellation,
            inputs.as_deref(),
            report.as_deref(),
            &subsets,
            &mnist.or(&file.mnist),
            out.as_deref(),
        ),
        Command::Export { report, export } => commands::export(&report, &export.or(&file.export)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
