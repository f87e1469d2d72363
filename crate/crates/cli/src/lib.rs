//! `raven`: one subcommand per pipeline stage, each reading the previous
//! stage's output from the store and writing its own.

pub mod commands;
pub mod config;
pub mod demo;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::PipelineConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "raven", version, about = "Schema-guided entity extraction over video collections")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline config (JSON). Without one, built-in defaults and an
    /// empty stub provider are used.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Store root; overrides the config's `store_root`.
    #[arg(long, global = true)]
    pub store: Option<PathBuf>,
    /// Replace this command's existing outputs.
    #[arg(long, global = true)]
    pub overwrite: bool,
    /// Highest tolerated share of failed items before exiting with 3.
    #[arg(long, global = true)]
    pub max_failure_rate: Option<f64>,
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Infer a raw category (and generic entities) for every clip.
    Categorize {
        /// Clip manifest, one JSON object per line.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, overrides_with = "no_generic_entities")]
        generic_entities: bool,
        #[arg(long)]
        no_generic_entities: bool,
    },
    /// Merge the most frequent raw categories into a canonical catalog.
    Canonicalize {
        /// Number of raw categories sent for merging.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Generate an entity schema per canonical category and index them.
    Genschema,
    /// Extract schema-conformant entities for every clip.
    Extract {
        /// Further clips, categorized on the fly and matched by retrieval.
        #[arg(long)]
        extra_manifest: Option<PathBuf>,
        #[arg(long)]
        min_similarity: Option<f64>,
        /// Leave transcript and caption text out of extraction prompts.
        #[arg(long)]
        no_text_sidechannel: bool,
    },
    /// Entity recall per method against ground truth.
    Eval {
        /// Ground truth, one JSON object per line.
        #[arg(long)]
        truth: PathBuf,
        /// Method outputs as `name=path`; repeatable. `ours=path` replaces
        /// the outputs read from the store.
        #[arg(long = "method", value_name = "NAME=PATH")]
        methods: Vec<String>,
        #[arg(long)]
        match_jaccard: Option<f64>,
        #[arg(long)]
        match_levenshtein: Option<f64>,
    },
    /// Distribution tables and per-clip case studies.
    Report {
        /// Clip to compare across methods; repeatable.
        #[arg(long = "case-study", value_name = "CLIP_ID")]
        case_studies: Vec<String>,
        /// Baseline outputs as `name=path`; repeatable.
        #[arg(long = "method", value_name = "NAME=PATH")]
        methods: Vec<String>,
        /// Values listed per attribute in top_values.csv.
        #[arg(long, default_value_t = 10)]
        top_n: usize,
    },
    /// Re-check every stream and every entity record against its schema.
    Verify,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("raven: {e}");
            e.exit_code()
        }
    }
}
