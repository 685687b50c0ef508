//! Single-binary command-line surface tying the pipeline stages together:
//! synthesis, ingestion, fitting, comparison, cross-validation, pitch-vector
//! extraction, mapping experiments, and plots. Every run writes one manifest.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub mod commands;
pub mod manifest;
pub mod plot;

/// Exit-code contract: 0 success, 1 runtime/model error, 2 usage/config error.
#[derive(Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<tonelab_core::corpus::CorpusError> for CliError {
    fn from(e: tonelab_core::corpus::CorpusError) -> Self {
        // malformed inputs are the caller's problem, not the model's
        CliError::Usage(e.to_string())
    }
}

impl From<tonelab_core::gam::GamError> for CliError {
    fn from(e: tonelab_core::gam::GamError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<tonelab_core::suite::SuiteError> for CliError {
    fn from(e: tonelab_core::suite::SuiteError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<tonelab_core::dlm::DlmError> for CliError {
    fn from(e: tonelab_core::dlm::DlmError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<tonelab_core::vectorize::VectorizeError> for CliError {
    fn from(e: tonelab_core::vectorize::VectorizeError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TokenFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbFormat {
    Csv,
    Binary,
}

#[derive(Debug, Parser)]
#[command(
    name = "tonelab",
    version,
    about = "Pitch contour modeling toolkit: GAMs, pitch vectors, and form-meaning mappings"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON config file for the subcommand
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; overrides the seed in the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker-pool cap for parallelizable stages
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Output directory (TONELAB_OUT overrides)
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Report format for tabular outputs
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known planted structure
    Synth {
        /// Embedding file flavor to emit
        #[arg(long, value_enum, default_value_t = EmbFormat::Csv)]
        embedding_format: EmbFormat,
    },
    /// Load, validate, and filter a token dataset
    Ingest {
        /// Token metadata file
        #[arg(long)]
        meta: PathBuf,
        /// Long-format F0 samples CSV `token_id,time_s,f0_hz`
        #[arg(long)]
        samples: PathBuf,
        /// Optional glottal-pulse times CSV `token_id,pulse_time_s`
        #[arg(long)]
        pulses: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TokenFormat::Csv)]
        token_format: TokenFormat,
    },
    /// Fit one model from the suite and save it
    Fit {
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        /// Model label, e.g. baseline, word, sense, +vowel1, omnibus-segment
        #[arg(long, default_value = "baseline")]
        model: String,
    },
    /// Fit several models and report AIC, evidence ratios, and concurvity
    Compare {
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        /// Comma-separated model labels
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Cross-validated held-out SSE over stratified splits
    Crossval {
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Extract 50-point pitch vectors from a saved model
    Vectorize {
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        /// Saved model prefix (the path passed to fit's output, without extension)
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Train and evaluate linear / residual-network mappings
    Dlm {
        /// Pitch vector CSV from the vectorize command
        #[arg(long)]
        pitch: PathBuf,
        /// Embedding file (CSV or binary)
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, value_enum, default_value_t = EmbFormat::Csv)]
        embedding_format: EmbFormat,
        /// Token metadata, used for the token-to-word assignment
        #[arg(long)]
        meta: PathBuf,
    },
    /// Render figures (SVG) plus the CSV each figure was drawn from
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Saved model prefix (contour kinds)
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Results CSV (cv and accuracy kinds)
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Fitted population contour with ±2 SE band
    Population,
    /// Per-word partial-effect contours
    Word,
    /// Per-sense partial-effect contours
    Sense,
    /// Cross-validation SSE-reduction boxes
    Cv,
    /// Mapping-accuracy bars with 2·SE error bars
    Accuracy,
}

/// Parses argv and runs the requested command, returning the process exit
/// code. The output directory honors the TONELAB_OUT environment variable
/// over the --out flag.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
