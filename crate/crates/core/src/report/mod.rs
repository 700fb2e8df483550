//! Corpus-level classification and reporting.

mod pipeline;
mod render;
mod replay;
mod stats;

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationError;
use crate::corpus::CategorySet;
use crate::embedding::EmbedError;
use crate::scoring::ScoringError;

pub use pipeline::{classify_corpus, Classifier, PipelineConfig};
pub use render::{render, render_summary, OutputFormat, Render};
pub use replay::{load_replay_table, CSV_HEADER};
pub use stats::{
    histogram, summarize, CategoryCount, ConfidenceSummary, Histogram, SummaryStats, DEFAULT_BINS,
};

/// One row of a classification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    #[serde(rename = "id")]
    pub paper_id: String,
    pub title: String,
    pub category_key: String,
    pub category_name: String,
    pub confidence: f64,
}

/// Classifications in corpus order, together with the categories they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTable {
    pub rows: Vec<Classification>,
    pub category_set: CategorySet,
}

impl ClassificationTable {
    pub fn new(category_set: CategorySet) -> Self {
        Self {
            rows: Vec::new(),
            category_set,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.confidence).collect()
    }
}

/// Failure inside one pipeline stage.
#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

impl StageError {
    pub fn is_environmental(&self) -> bool {
        matches!(self, StageError::Embed(e) if e.is_environmental())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("paper `{paper_id}`: {source}")]
    Record {
        paper_id: String,
        #[source]
        source: StageError,
    },
    #[error("category `{key}`: {source}")]
    Category {
        key: String,
        #[source]
        source: StageError,
    },
    #[error("embedding backend: {0}")]
    Backend(#[source] EmbedError),
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("cannot summarize an empty table")]
    EmptyTable,
    #[error("replay row {row}: {message}")]
    Replay { row: usize, message: String },
    #[error("invalid histogram: {0}")]
    Histogram(String),
}

impl ReportError {
    /// True when the failure came from the environment (network, service,
    /// disk) rather than from the inputs.
    pub fn is_environmental(&self) -> bool {
        match self {
            ReportError::Record { source, .. } | ReportError::Category { source, .. } => {
                source.is_environmental()
            }
            ReportError::Backend(e) => e.is_environmental(),
            _ => false,
        }
    }
}
