//! `unigraph`: build semantic graphs from annotations, inspect them, run
//! the self-check suite, and train or sample the toy summariser.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "unigraph",
    version,
    about = "Unified semantic graphs for summarization"
)]
pub struct Cli {
    /// Machine-readable JSON output (errors too, on stderr).
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct AugmentFlags {
    /// Apply graph augmentation (reverse edges, self-loops, shortcuts,
    /// supernode).
    #[arg(long)]
    pub augment: bool,
    #[arg(long, requires = "augment")]
    pub no_reverse: bool,
    #[arg(long, requires = "augment")]
    pub no_shortcuts: bool,
    #[arg(long, requires = "augment")]
    pub no_supernode: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ModelFlags {
    /// Model config file (JSON or key = value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Teleport probability of graph propagation.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Propagation steps.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a semantic graph from an annotation file.
    BuildGraph {
        input: PathBuf,
        /// Output path for the graph JSON (stdout if omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write Graphviz DOT here.
        #[arg(long)]
        dot: Option<PathBuf>,
        #[command(flatten)]
        augment: AugmentFlags,
    },
    /// Node/edge statistics per input-length bucket, or for one graph.
    Stats {
        /// Annotation file or graph JSON.
        input: PathBuf,
        #[arg(long, default_value_t = 100)]
        bucket_size: usize,
    },
    /// Render a graph (or the graph of an annotation file) as DOT.
    ExportDot {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        augment: AugmentFlags,
    },
    /// Run the invariant suite; exit 1 if any property fails.
    Selfcheck {
        /// Deliberately break propagation to confirm the suite notices.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Train on the planted-coreference toy task.
    Train {
        /// Checkpoint to write.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 50)]
        examples: usize,
        #[arg(long, default_value_t = 2e-3)]
        lr: f64,
        /// Examples per step (0 = all).
        #[arg(long, default_value_t = 0)]
        batch_size: usize,
        /// Loss curve CSV.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Decode summaries with a trained checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Annotation file to summarise; defaults to the toy task drawn
        /// with --seed.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        examples: usize,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, default_value_t = 0.9)]
        length_penalty: f64,
        /// Greedy decoding instead of beam search.
        #[arg(long)]
        greedy: bool,
        #[arg(long)]
        no_trigram_blocking: bool,
        #[arg(long, default_value_t = 32)]
        max_len: usize,
        #[arg(long)]
        omega: Option<f64>,
        #[arg(long)]
        p: Option<usize>,
        /// JSON lines output (stdout if omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn init_threads() {
    if let Ok(v) = std::env::var("UNIGRAPH_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    log::warn!("could not size thread pool: {e}");
                }
            }
            _ => log::warn!("ignoring UNIGRAPH_THREADS={v:?}: expected a positive integer"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_threads();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if cli.json {
                eprintln!(
                    "{}",
                    serde_json::json!({"error": e.to_string(), "kind": e.kind(), "exit_code": e.exit_code()})
                );
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
