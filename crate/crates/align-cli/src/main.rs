//! `align` - scripted experiments over the full motion-text pipeline.
//!
//! Exit codes: 0 success, 1 bad input (unknown flags, malformed or missing
//! files, validation failures), 2 runtime errors.

mod commands;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "align", version, about = "Motion-text alignment pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate pose/label/attribute files and emit an 80/10/10 split.
    PrepareData {
        /// Pose sequences (JSON lines).
        #[arg(long)]
        poses: PathBuf,
        /// Action labels (JSON lines), for action datasets.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Attribute annotations (JSON lines), for gait datasets.
        #[arg(long)]
        attributes: Option<PathBuf>,
        /// Attribute manifest (JSON), required with --attributes.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the split file; also echoed to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit LLM prompts for external description generation.
    GenPrompts {
        /// "action" or "attribute".
        #[arg(long)]
        kind: String,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        attributes: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Populate an embedding table for every caption text.
    Embed {
        /// Caption store (JSON lines) whose texts are embedded.
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        dim: usize,
        /// Remote embedding service base URL (overrides ALIGN_REMOTE_EMBED_URL).
        #[arg(long)]
        remote: Option<String>,
        /// Hash-fallback seed (used when no remote is configured).
        #[arg(long)]
        hash_seed: Option<u64>,
        /// Output table path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the pose encoder.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Action recognition top-k accuracy against label text embeddings.
    EvalAction {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 5])]
        k: Vec<usize>,
        /// Use generated descriptions instead of raw label names.
        #[arg(long)]
        use_descriptions: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Zero-shot synonym transfer accuracy.
    EvalSynonyms {
        #[arg(long)]
        ckpt: PathBuf,
        /// Synonym map (JSON); defaults to the config's synonyms path.
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 5])]
        k: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Description-based retrieval, scored with NDCG@K.
    EvalRetrieval {
        #[arg(long)]
        ckpt: PathBuf,
        /// cosine | euclidean | random
        #[arg(long, default_value = "cosine")]
        method: String,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 3, 5])]
        k: Vec<usize>,
        /// Also report NDCG@5 per attribute.
        #[arg(long)]
        per_attribute: bool,
        #[arg(long, default_value = "test")]
        split: String,
        /// Seed for the random baseline.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate the multi-label attribute classifier.
    Classify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Optionally persist the trained classifier checkpoint.
        #[arg(long)]
        ckpt_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the desk-scale synthetic datasets.
    MakeSynthetic {
        /// "action" or "retrieval".
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful exits; anything else is usage error 1
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    match commands::run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(if e.is_input_error() { 1 } else { 2 });
        }
    }
}
