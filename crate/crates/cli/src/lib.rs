//! Command implementations behind the `agentsim` binary.
//!
//! Each `cmd_*` function is independently callable and returns a summary;
//! the binary only parses flags, prints and maps errors to exit codes.

pub mod config;
pub mod metrics;
pub mod review;
pub mod seed;
pub mod simulate;
pub mod synthetic;

use std::path::PathBuf;

use agentsim_client::ClientError;
use agentsim_core::dataset::DatasetError;
use agentsim_core::embedding::EmbeddingError;
use agentsim_core::metrics::MetricsError;
use agentsim_core::seeding::SeedingError;
use agentsim_core::simulation::SimulationError;
use agentsim_core::validation::ValidationError;
use agentsim_review_service::ServiceError;
use serde_json::json;

pub use config::{check, cmd_validate, prepare, Diagnostic, Overrides, RunConfig, Severity};
pub use metrics::{cmd_metrics, MetricsReport};
pub use review::cmd_review_serve;
pub use seed::{cmd_seed_select, SeedSummary};
pub use simulate::{cmd_export, cmd_simulate, read_manifest, ExportReport, ManifestEntry, RunStatus, SimulateSummary};
pub use synthetic::{cmd_synthetic, SyntheticOptions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {}", summarize(.0))]
    InvalidConfig(Vec<Diagnostic>),
    #[error("malformed output tree: {0}")]
    MalformedTree(String),
    #[error("invalid seeds file: {0}")]
    InvalidSeeds(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Seeding(#[from] SeedingError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("{0}")]
    Usage(String),
}

fn summarize(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .filter(|d| d.is_error())
        .map(|d| format!("{}: {}", d.field, d.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidConfig(_) => "invalid_config",
            Self::MalformedTree(_) => "malformed_tree",
            Self::InvalidSeeds(_) => "invalid_seeds",
            Self::Io { .. } => "io",
            Self::Seeding(_) => "seeding",
            Self::Simulation(_) => "simulation",
            Self::Dataset(DatasetError::PendingReviewItems(_)) => "pending_review",
            Self::Dataset(_) => "dataset",
            Self::Validation(_) => "validation",
            Self::Metrics(_) => "metrics",
            Self::Embedding(_) => "embedding",
            Self::Service(ServiceError::PortInUse { .. }) => "port_in_use",
            Self::Service(_) => "service",
            Self::Client(_) => "client",
            Self::Usage(_) => "usage",
        }
    }

    /// 2 for configuration and usage problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::InvalidConfig(_) | Self::InvalidSeeds(_) | Self::Usage(_) => 2,
            _ => 1,
        }
    }

    /// The machine-readable form written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let Self::InvalidConfig(diags) = self {
            v["diagnostics"] = json!(diags);
        }
        if let Self::Client(ClientError::Api { status, body }) = self {
            v["status"] = json!(status);
            v["api_error"] = json!(body);
        }
        v
    }
}

/// Standard locations under the output directory.
#[derive(Debug, Clone)]
pub struct OutputTree {
    pub root: PathBuf,
}

impl OutputTree {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn seeds(&self) -> PathBuf {
        self.root.join("seeds.jsonl")
    }

    pub fn clusters(&self) -> PathBuf {
        self.root.join("clusters.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn review(&self) -> PathBuf {
        self.root.join("review")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }
}
