//! Zero-shot classification of document corpora against textual categories.
//!
//! Each document is tokenized and embedded into a `T × e` matrix, pooled into
//! a single vector with a convex weighting, scored against every category
//! vector with a bilinear form, and assigned to the category with the highest
//! softmax posterior. The [`report`] module runs that pipeline over a whole
//! corpus and produces classification tables, category distributions and
//! confidence histograms.

pub mod aggregation;
pub mod corpus;
pub mod embedding;
pub mod matrix;
pub mod report;
pub mod scoring;

#[cfg(any(test, feature = "test-support"))]
pub mod stub;

pub use aggregation::{
    aggregate, attention_weights, uniform_weights, AggregationError, Origin, PooledEmbedding,
    Transform, WeightStrategy, WeightVector,
};
pub use corpus::{
    document_text, parse_categories, parse_corpus, CategorySet, CategorySpec, Corpus, CorpusError,
    Diagnostic, PaperRecord,
};
pub use embedding::{
    tokenize, BackendConfig, BackendKind, EmbedError, Embedder, EmbeddingMatrix, TokenSequence,
};
pub use matrix::DenseMatrix;
pub use report::{
    classify_corpus, histogram, load_replay_table, render, summarize, Classification,
    ClassificationTable, Histogram, OutputFormat, PipelineConfig, ReportError, SummaryStats,
};
pub use scoring::{
    decide, log_posterior, posterior, score, score_continuous, Decision, OmegaFunction,
    PosteriorVector, ScoreVector, ScoringError, ScoringParams,
};
