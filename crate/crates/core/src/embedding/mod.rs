//! Text to `T × e` token-embedding matrices.
//!
//! Three backends sit behind the [`Embedder`] trait: a deterministic
//! feature-hashing backend ([`HashedEmbedder`]), a client for a remote
//! embedding service ([`RemoteEmbedder`]), and a content-addressed disk cache
//! that wraps either ([`CachedEmbedder`]).

mod cache;
mod hashed;
mod remote;
mod tokenize;

pub use url::Url;

pub use cache::{
    cache_key, cached_embed, decode_matrix, default_cache_dir, encode_matrix, CacheStatus,
    CachedEmbedder, CorruptCache, EmbeddingCache, CACHE_DIR_ENV, CACHE_MAGIC,
};
pub use hashed::{embed_hashed, fnv1a64, hashed_slot, HashedEmbedder};
pub use remote::{embed_remote, RemoteEmbedder, RemoteOptions};
pub use tokenize::{tokenize, TokenSequence};

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_SEED: u64 = 0;
pub const MIN_HASHED_DIM: usize = 8;

/// A `T × e` token-embedding matrix; row `t` is the embedding of token `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, EmbedError> {
        if rows == 0 || cols == 0 {
            return Err(EmbedError::EmptyMatrix);
        }
        if values.len() != rows * cols {
            return Err(EmbedError::Protocol(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite { row: i / cols });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, EmbedError> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n * cols);
        for (t, row) in rows.into_iter().enumerate() {
            if row.len() != cols {
                return Err(EmbedError::RaggedRows {
                    row: t,
                    expected: cols,
                    found: row.len(),
                });
            }
            values.extend(row);
        }
        Self::new(n, cols, values)
    }

    /// Number of tokens `T`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Embedding dimension `e`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.cols..(t + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Hashed,
    Remote,
}

impl BackendKind {
    pub fn id(self) -> &'static str {
        match self {
            BackendKind::Hashed => "hashed",
            BackendKind::Remote => "remote",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub dim: usize,
    pub seed: u64,
    pub endpoint: Option<Url>,
    pub normalize_rows: bool,
}

impl BackendConfig {
    pub fn hashed(dim: usize, seed: u64) -> Self {
        Self {
            kind: BackendKind::Hashed,
            dim,
            seed,
            endpoint: None,
            normalize_rows: true,
        }
    }

    pub fn remote(endpoint: Url) -> Self {
        Self {
            kind: BackendKind::Remote,
            dim: DEFAULT_DIM,
            seed: DEFAULT_SEED,
            endpoint: Some(endpoint),
            normalize_rows: true,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        match self.kind {
            BackendKind::Hashed if self.dim < MIN_HASHED_DIM => {
                Err(EmbedError::InvalidConfig(format!(
                    "hashed backend needs dim >= {MIN_HASHED_DIM}, got {}",
                    self.dim
                )))
            }
            BackendKind::Hashed => Ok(()),
            BackendKind::Remote => match &self.endpoint {
                Some(u) if matches!(u.scheme(), "http" | "https") && u.has_host() => Ok(()),
                Some(u) => Err(EmbedError::InvalidConfig(format!(
                    "endpoint `{u}` must be an http(s) URL with a host"
                ))),
                None => Err(EmbedError::InvalidConfig(
                    "remote backend requires an endpoint".into(),
                )),
            },
        }
    }

    /// Canonical byte form of the settings that affect embedding values:
    /// compact JSON with sorted keys. Fields that do not apply to the backend
    /// kind are omitted.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        // Written by hand so key order cannot depend on serde_json features.
        let text = match self.kind {
            BackendKind::Hashed => format!(
                r#"{{"dim":{},"kind":"hashed","normalize_rows":{},"seed":{}}}"#,
                self.dim, self.normalize_rows, self.seed
            ),
            BackendKind::Remote => {
                let endpoint = self.endpoint.as_ref().map_or("null".to_owned(), |u| {
                    serde_json::to_string(u.as_str()).expect("string serialization is infallible")
                });
                format!(
                    r#"{{"endpoint":{},"kind":"remote","normalize_rows":{}}}"#,
                    endpoint, self.normalize_rows
                )
            }
        };
        text.into_bytes()
    }
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::hashed(DEFAULT_DIM, DEFAULT_SEED)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("text is empty after trimming")]
    EmptyText,
    #[error("text contains no alphanumeric tokens")]
    NoTokens,
    #[error("embedding matrix must have at least one row and one column")]
    EmptyMatrix,
    #[error("non-finite value in embedding row {row}")]
    NonFinite { row: usize },
    #[error("row {row} has {found} components, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("embedding service returned {status}: {message}")]
    Service { status: u16, message: String },
    #[error("malformed response from embedding service: {0}")]
    Protocol(String),
    #[error("dimension mismatch for text {index}: expected width {expected}, found {found}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("text {index}: {source}")]
    AtText {
        index: usize,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("cache I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl EmbedError {
    /// True for failures caused by the environment (network, service, disk)
    /// rather than by the input text or configuration.
    pub fn is_environmental(&self) -> bool {
        match self {
            EmbedError::Transport { .. }
            | EmbedError::Service { .. }
            | EmbedError::Protocol(_)
            | EmbedError::DimensionMismatch { .. }
            | EmbedError::Io(_) => true,
            EmbedError::AtText { source, .. } => source.is_environmental(),
            _ => false,
        }
    }

    /// Index of the offending input text, if the error concerns one text.
    pub fn text_index(&self) -> Option<usize> {
        match self {
            EmbedError::AtText { index, .. } | EmbedError::DimensionMismatch { index, .. } => {
                Some(*index)
            }
            _ => None,
        }
    }

    pub(crate) fn at_text(self, index: usize) -> Self {
        match self {
            e @ (EmbedError::AtText { .. } | EmbedError::DimensionMismatch { .. }) => e,
            e => EmbedError::AtText {
                index,
                source: Box::new(e),
            },
        }
    }
}

/// A source of token-embedding matrices.
pub trait Embedder: Send + Sync {
    fn config(&self) -> &BackendConfig;

    /// Embeds every text, returning matrices in input order with a common
    /// embedding width.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingMatrix>, EmbedError>;

    fn embed(&self, text: &str) -> Result<EmbeddingMatrix, EmbedError> {
        let mut out = self.embed_batch(&[text.to_owned()])?;
        out.pop()
            .ok_or_else(|| EmbedError::Protocol("backend returned no embedding".into()))
    }

    fn backend_id(&self) -> &'static str {
        self.config().kind.id()
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn config(&self) -> &BackendConfig {
        (**self).config()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingMatrix>, EmbedError> {
        (**self).embed_batch(texts)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingMatrix, EmbedError> {
        (**self).embed(text)
    }
}

/// Builds the backend a config describes.
pub fn embedder_for(config: &BackendConfig) -> Result<Box<dyn Embedder>, EmbedError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Hashed => Box::new(HashedEmbedder::new(config.clone())?),
        BackendKind::Remote => Box::new(RemoteEmbedder::new(config.clone())?),
    })
}
