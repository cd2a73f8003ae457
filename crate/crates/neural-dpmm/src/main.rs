use clap::{Args, Parser, Subcommand};
use neural_dpmm::app::{
    cmd_bench, cmd_eval, cmd_fit_pf, cmd_make_sparse_bank, cmd_simulate, cmd_train, parse_setting,
    AppError,
};
use neural_dpmm::config::load_config;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "neural-dpmm",
    version,
    about = "Sequential class inference: collapsed filters over an unbounded mixture and a metalearned recurrent predictor"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config JSON; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config entry, e.g. --set train.lr=0.01. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample episodes from the configured generator and write JSONL.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the recurrent predictor on freshly simulated episodes.
    Train {
        /// Run directory for log.csv and checkpoints.
        #[arg(long)]
        out_dir: PathBuf,
        /// Checkpoint with optimizer moments to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fit prior hyperparameters by stochastic search on the exact
    /// sequential score.
    FitPf {
        /// Output JSON for the fitted hyperparameters.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score one method on simulated episodes and write a report.
    Eval {
        /// One of: crp, exact, pf, circuit.
        #[arg(long)]
        method: String,
        /// Trained circuit checkpoint (circuit method only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Fitted hyperparameter JSON from fit-pf.
        #[arg(long)]
        hyper: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// sequential_observation or fully_unobserved; defaults to the
        /// config's eval.setting.
        #[arg(long)]
        setting: Option<String>,
    },
    /// Time methods per sequence in both settings.
    Bench {
        /// Comma-separated method names.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        hyper: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a sparse feature bank for empirical episodes.
    MakeSparseBank {
        #[arg(long)]
        classes: u32,
        /// Items per class.
        #[arg(long)]
        items: usize,
        #[arg(long)]
        dim: usize,
        /// Probability that a coordinate is exactly zero.
        #[arg(long, default_value_t = 0.5)]
        gate_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Base path; <base>.json and <base>.bin are written.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), AppError> {
    if let Some(threads) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| AppError::Usage(format!("cannot set --threads: {e}")))?;
    }
    let load = || load_config(cli.common.config.as_deref(), &cli.common.overrides);
    match cli.command {
        Command::Simulate { out, n, seed } => cmd_simulate(&load()?, &out, n, seed),
        Command::Train { out_dir, resume } => cmd_train(&load()?, &out_dir, resume.as_deref()),
        Command::FitPf { out, seed } => cmd_fit_pf(&load()?, &out, seed),
        Command::Eval {
            method,
            checkpoint,
            hyper,
            out_dir,
            seed,
            setting,
        } => {
            let setting = setting.as_deref().map(parse_setting).transpose()?;
            cmd_eval(
                &load()?,
                &method,
                checkpoint.as_deref(),
                hyper.as_deref(),
                &out_dir,
                seed,
                setting,
            )
        }
        Command::Bench {
            methods,
            checkpoint,
            hyper,
            out_dir,
            seed,
        } => cmd_bench(
            &load()?,
            &methods,
            checkpoint.as_deref(),
            hyper.as_deref(),
            &out_dir,
            seed,
        ),
        Command::MakeSparseBank {
            classes,
            items,
            dim,
            gate_rate,
            seed,
            out,
        } => cmd_make_sparse_bank(classes, items, dim, gate_rate, seed, &out),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("{err}");
        std::process::exit(err.exit_code());
    }
}
