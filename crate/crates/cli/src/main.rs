use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use convbias_cli::config::{CorpusSource, ExperimentConfig};
use convbias_cli::pipeline::{
    cmd_debias, cmd_eval, cmd_prepare, cmd_pretrain, cmd_queries, cmd_reproduce, default_targets, summary_table,
    EvalTarget, Run,
};
use convbias_cli::{CliError, CliResult};
use convbias_core::debias::Method;

/// Retrieval end of the trailing window when no config provides one
/// (2021-01-01T00:00:00Z).
const DEFAULT_UNTIL: i64 = 1_609_459_200;
const DEFAULT_SIZE_LIMIT: usize = 1000;

#[derive(Debug, Parser)]
#[command(
    name = "convbias",
    version,
    about = "Measure and remove a planted or retrieved bias in a small causal LM"
)]
struct Cli {
    /// Experiment config (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed and CONVBIAS_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Read comments from a newline-delimited JSON file.
    #[arg(long, global = true, conflicts_with = "endpoint")]
    fixture: Option<PathBuf>,
    /// Retrieve comments from a search API at this base URL.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the retrieval queries, one per line.
    Queries,
    /// Build phrase instances, splits, references and downstream data.
    Prepare,
    /// Build the tokenizer and train the base model.
    Pretrain {
        /// Continue training from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Debias a checkpoint with one method.
    Debias {
        #[arg(long)]
        method: Method,
        /// Search the loss-weight grid, selecting on dev-split |t|.
        #[arg(long)]
        grid: bool,
        /// Checkpoint to start from (default: the base model).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate bias and downstream performance.
    Eval {
        /// `tag=path` or a checkpoint directory; repeatable. Defaults to
        /// every checkpoint in the output directory.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<String>,
        /// Also write an SVG bar chart of t-values.
        #[arg(long)]
        plot: bool,
    },
    /// Synthetic corpus, pretraining, all methods and evaluation in one go.
    Reproduce {
        #[arg(long)]
        plot: bool,
    },
}

fn build_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default().with_env_seed()?.resolve(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    let (until, size_limit) = match &config.corpus {
        CorpusSource::Fixture { until, size_limit, .. } | CorpusSource::Endpoint { until, size_limit, .. } => {
            (*until, *size_limit)
        }
        _ => (DEFAULT_UNTIL, DEFAULT_SIZE_LIMIT),
    };
    if let Some(path) = &cli.fixture {
        config.corpus = CorpusSource::Fixture {
            path: path.clone(),
            until,
            size_limit,
        };
    } else if let Some(url) = &cli.endpoint {
        config.corpus = CorpusSource::Endpoint {
            url: url.clone(),
            until,
            size_limit,
        };
    }
    Ok(config)
}

fn execute(cli: Cli) -> CliResult<()> {
    let run = Run::new(build_config(&cli)?)?;
    match cli.command {
        Command::Queries => {
            let q = cmd_queries(&run)?;
            println!("{} queries -> {}", q.len(), run.layout.queries().display());
        }
        Command::Prepare => {
            let s = cmd_prepare(&run)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Pretrain { resume } => {
            let s = cmd_pretrain(&run, resume.as_deref())?;
            println!("trained {} steps, checkpoint {}", s.steps, s.checkpoint_hash);
        }
        Command::Debias {
            method,
            grid,
            checkpoint,
        } => {
            let s = cmd_debias(&run, method, grid, checkpoint.as_deref())?;
            println!(
                "{}: {} utterances, {} steps, checkpoint {}",
                s.method,
                s.record.training_utterances,
                s.record.losses.len(),
                s.checkpoint_hash
            );
        }
        Command::Eval { checkpoints, plot } => {
            let targets = if checkpoints.is_empty() {
                default_targets(&run.layout)
            } else {
                checkpoints
                    .iter()
                    .map(|s| EvalTarget::parse(s))
                    .collect::<CliResult<_>>()?
            };
            let s = cmd_eval(&run, &targets, plot)?;
            print!("{}", summary_table(&s, run.config.eval.alpha));
        }
        Command::Reproduce { plot } => {
            let s = cmd_reproduce(&run, plot)?;
            print!("{}", summary_table(&s, run.config.eval.alpha));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Validation(m) => eprintln!("error: {m}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
