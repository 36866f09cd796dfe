//! Command-line driver.
//!
//! Every setting can come from a `--config` file of `key=value` lines or from
//! the matching flag (flag wins). Exit codes: 0 success, 1 usage error,
//! 2 data validation failure, 3 numerical failure.

mod commands;
pub mod config;
pub mod prep;

use std::ffi::OsString;
use std::fmt;
use std::io;
use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

use crate::ckg::DataError;

/// Failure modes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Missing or malformed invocation (exit 1).
    Usage(String),
    /// Unreadable or inconsistent data, config, or checkpoint (exit 2).
    Data(String),
    /// Nonfinite losses or failed numerical checks (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) | CliError::Numeric(msg) => {
                f.write_str(msg)
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(err: DataError) -> Self {
        CliError::Data(err.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(err: io::Error) -> Self {
        CliError::Data(err.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "kgat",
    version,
    about = "Knowledge-aware recommendation: prepare data, train, evaluate, explain"
)]
struct Cli {
    /// Config file of key=value lines; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More stderr detail (-v progress, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Core-filter raw interactions, remap ids densely, split per user.
    Prep(PrepArgs),
    /// Print dataset counts, optionally checking them against expectations.
    Stats(StatsArgs),
    /// Train a model; writes config snapshot, log, metrics, and checkpoint.
    Train(TrainArgs),
    /// Rank all items for every test user from a checkpoint.
    Eval(EvalArgs),
    /// List the highest-attention paths from a user to an item.
    Explain(ExplainArgs),
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Checkpoint utilities.
    Ckpt(CkptArgs),
}

/// Dataset file flags shared by data-consuming subcommands.
#[derive(Args)]
pub struct DataArgs {
    /// Train split: `user item item ...` per line.
    #[arg(long, value_name = "FILE")]
    pub train_file: Option<String>,
    /// Test split, same format.
    #[arg(long, value_name = "FILE")]
    pub test_file: Option<String>,
    /// Optional validation split, same format.
    #[arg(long, value_name = "FILE")]
    pub val_file: Option<String>,
    /// Knowledge graph: `head relation tail` per line.
    #[arg(long, value_name = "FILE")]
    pub kg_file: Option<String>,
}

/// Model shape flags; must match the checkpoint when loading one.
#[derive(Args)]
pub struct ModelArgs {
    /// Entity embedding width.
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Relation embedding width.
    #[arg(long)]
    pub relation_dim: Option<usize>,
    /// Comma-separated propagation layer widths, e.g. 64,32,16.
    #[arg(long)]
    pub hidden_dims: Option<String>,
    /// gcn, graphsage, or bi-interaction.
    #[arg(long)]
    pub aggregator: Option<String>,
    /// softmax (knowledge-aware) or uniform.
    #[arg(long)]
    pub attention: Option<String>,
    /// Per-edge message drop probability during training.
    #[arg(long)]
    pub message_dropout: Option<f64>,
    /// Per-segment node drop probability during training.
    #[arg(long)]
    pub node_dropout: Option<f64>,
}

#[derive(Args)]
pub struct PrepArgs {
    /// Raw interactions: `user item item ...` per line, ids may be sparse.
    #[arg(long, value_name = "FILE")]
    pub interactions_file: Option<String>,
    /// Raw knowledge graph triples; item ids double as entity ids.
    #[arg(long, value_name = "FILE")]
    pub kg_file: Option<String>,
    /// Output directory for splits, remapped kg, and id maps.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<String>,
    /// Minimum interactions per user and per item (applied to fixpoint).
    #[arg(long)]
    pub core: Option<usize>,
    /// Fraction of each user's items held out for test.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Fraction of each user's train items moved to validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub expected_users: Option<usize>,
    #[arg(long)]
    pub expected_items: Option<usize>,
    #[arg(long)]
    pub expected_interactions: Option<usize>,
    #[arg(long)]
    pub expected_entities: Option<usize>,
    #[arg(long)]
    pub expected_relations: Option<usize>,
    #[arg(long)]
    pub expected_triples: Option<usize>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory receiving config.txt, train_log.ndjson, metrics.json, best.ckpt.
    #[arg(long, value_name = "DIR")]
    pub run_dir: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 coefficient on the parameters each batch touches.
    #[arg(long)]
    pub l2_lambda: Option<f64>,
    #[arg(long)]
    pub cf_batch_size: Option<usize>,
    #[arg(long)]
    pub kg_batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Stop after this many epochs without validation improvement.
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    /// Run validation ranking every N epochs.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Cutoff for recall/ndcg.
    #[arg(long)]
    pub eval_k: Option<usize>,
    /// false drops the translation-embedding phase (ablation).
    #[arg(long)]
    pub use_kge: Option<bool>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<String>,
    /// Comma-separated ranking cutoffs, e.g. 10,20.
    #[arg(long)]
    pub eval_k: Option<String>,
    /// Also report per-sparsity-group metrics (0 disables, else >= 2).
    #[arg(long)]
    pub num_groups: Option<usize>,
    /// Optional directory for metrics.json.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<String>,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<String>,
    /// User id in the dataset's dense id space.
    #[arg(long)]
    pub user: Option<usize>,
    /// Item id to explain.
    #[arg(long)]
    pub item: Option<usize>,
    /// Maximum path length in edges.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Beam width per path length; 0 searches exhaustively.
    #[arg(long)]
    pub beam: Option<usize>,
    /// How many paths to print.
    #[arg(long)]
    pub top: Option<usize>,
    /// Optional `id label...` lines naming graph nodes.
    #[arg(long, value_name = "FILE")]
    pub labels_file: Option<String>,
    /// Emit one JSON record per path instead of the arrow rendering.
    #[arg(long, action = ArgAction::SetTrue)]
    pub json: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output directory for interactions.txt and kg_final.txt.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<String>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    /// Total entities including items.
    #[arg(long)]
    pub entities: Option<usize>,
    #[arg(long)]
    pub relations: Option<usize>,
    #[arg(long)]
    pub interactions_per_user: Option<usize>,
    #[arg(long)]
    pub triples_per_item: Option<usize>,
    /// Taste clusters controlling co-interaction structure.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct CkptArgs {
    #[command(subcommand)]
    pub command: CkptCommand,
}

#[derive(Subcommand)]
pub enum CkptCommand {
    /// Print per-parameter shapes and value statistics.
    Inspect(CkptInspectArgs),
}

#[derive(Args)]
pub struct CkptInspectArgs {
    /// Checkpoint file; may also come from the `checkpoint` config key.
    #[arg(value_name = "FILE")]
    pub checkpoint: Option<String>,
}

/// Entry point for the binary: parses, runs, and maps errors to exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive as Err; they are not failures.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => config::FileConfig::load(path)?,
        None => config::FileConfig::empty(),
    };
    match cli.command {
        Command::Prep(args) => commands::prep_cmd(&file, args),
        Command::Stats(args) => commands::stats_cmd(&file, args),
        Command::Train(args) => commands::train_cmd(&file, args),
        Command::Eval(args) => commands::eval_cmd(&file, args),
        Command::Explain(args) => commands::explain_cmd(&file, args),
        Command::Synth(args) => commands::synth_cmd(&file, args),
        Command::Gradcheck(args) => commands::gradcheck_cmd(&file, args),
        Command::Ckpt(args) => match args.command {
            CkptCommand::Inspect(inner) => commands::ckpt_inspect_cmd(&file, inner),
        },
    }
}

struct StderrLogger;

impl log::Log for StderrLogger {
    fn enabled(&self, _: &log::Metadata) -> bool {
        true
    }

    fn log(&self, record: &log::Record) {
        eprintln!(
            "[{}] {}",
            record.level().as_str().to_ascii_lowercase(),
            record.args()
        );
    }

    fn flush(&self) {}
}

static LOGGER: StderrLogger = StderrLogger;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // Already-set is fine: tests may call run() repeatedly in one process.
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(level);
}
