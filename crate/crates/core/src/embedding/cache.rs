//! Content-addressed on-disk cache of embedding matrices.
//!
//! Keys are the lowercase hex SHA-256 of
//! `backend id ‖ 0x00 ‖ canonical config ‖ 0x00 ‖ text`. Files hold the magic
//! `ZSEC1`, the row and column counts as little-endian `u32`, then the values
//! as little-endian binary32 in row-major order. Writes go to a temp file in
//! the cache directory and are renamed into place.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use super::{embedder_for, BackendConfig, EmbedError, Embedder, EmbeddingMatrix};

pub const CACHE_MAGIC: &[u8; 5] = b"ZSEC1";
pub const CACHE_DIR_ENV: &str = "CORPUSCLASS_CACHE_DIR";

const HEADER_LEN: usize = CACHE_MAGIC.len() + 8;

pub fn cache_key(backend_id: &str, canonical_config: &[u8], text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(backend_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(canonical_config);
    hasher.update([0u8]);
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

/// `$CORPUSCLASS_CACHE_DIR`, else the user cache directory.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir).join("corpusclass");
    }
    match std::env::var_os("HOME") {
        Some(home) => PathBuf::from(home).join(".cache").join("corpusclass"),
        None => std::env::temp_dir().join("corpusclass"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorruptCache {
    #[error("file shorter than header ({0} bytes)")]
    Truncated(usize),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("header declares {rows}x{cols} but payload is {payload} bytes")]
    Length {
        rows: u32,
        cols: u32,
        payload: usize,
    },
    #[error("invalid matrix contents")]
    Contents,
}

/// Fails if any value is not exactly representable as binary32.
pub fn encode_matrix(m: &EmbeddingMatrix) -> Result<Vec<u8>, EmbedError> {
    let rows = u32::try_from(m.rows())
        .map_err(|_| EmbedError::InvalidConfig("too many rows to cache".into()))?;
    let cols = u32::try_from(m.cols())
        .map_err(|_| EmbedError::InvalidConfig("too many columns to cache".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.values().len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.values() {
        let narrow = v as f32;
        if f64::from(narrow) != v {
            return Err(EmbedError::InvalidConfig(format!(
                "value {v} is not representable in the binary32 cache format"
            )));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<EmbeddingMatrix, CorruptCache> {
    if bytes.len() < HEADER_LEN {
        return Err(CorruptCache::Truncated(bytes.len()));
    }
    if &bytes[..CACHE_MAGIC.len()] != CACHE_MAGIC {
        return Err(CorruptCache::BadMagic);
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let rows = word(5);
    let cols = word(9);
    let payload = &bytes[HEADER_LEN..];
    let expected = (rows as usize)
        .checked_mul(cols as usize)
        .and_then(|n| n.checked_mul(4));
    if expected != Some(payload.len()) {
        return Err(CorruptCache::Length {
            rows,
            cols,
            payload: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    EmbeddingMatrix::new(rows as usize, cols as usize, values).map_err(|_| CorruptCache::Contents)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    /// The cached file was unreadable as a matrix and has been replaced.
    Recovered(CorruptCache),
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

enum Lookup {
    Hit(EmbeddingMatrix),
    Miss,
    Corrupt(CorruptCache),
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.zsec"))
    }

    fn load(&self, key: &str) -> io::Result<Lookup> {
        match fs::read(self.path_for(key)) {
            Ok(bytes) => Ok(match decode_matrix(&bytes) {
                Ok(m) => Lookup::Hit(m),
                Err(e) => Lookup::Corrupt(e),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Lookup::Miss),
            Err(e) => Err(e),
        }
    }

    fn store(&self, key: &str, m: &EmbeddingMatrix) -> Result<(), EmbedError> {
        let bytes = encode_matrix(m)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.path_for(key)).map_err(|e| e.error)?;
        Ok(())
    }
}

/// Wraps a backend with the disk cache. Hit, miss and warning counts are
/// observable for diagnostics.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: EmbeddingCache,
    hits: AtomicUsize,
    misses: AtomicUsize,
    warnings: AtomicUsize,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E, cache: EmbeddingCache) -> Self {
        Self {
            inner,
            cache,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            warnings: AtomicUsize::new(0),
        }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn warnings(&self) -> usize {
        self.warnings.load(Ordering::Relaxed)
    }

    fn key(&self, text: &str) -> String {
        cache_key(
            self.inner.backend_id(),
            &self.inner.config().canonical_bytes(),
            text,
        )
    }

    fn lookup(&self, key: &str) -> Result<(Option<EmbeddingMatrix>, CacheStatus), EmbedError> {
        match self.cache.load(key)? {
            Lookup::Hit(m) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Ok((Some(m), CacheStatus::Hit))
            }
            Lookup::Miss => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                Ok((None, CacheStatus::Miss))
            }
            Lookup::Corrupt(reason) => {
                self.warnings.fetch_add(1, Ordering::Relaxed);
                self.misses.fetch_add(1, Ordering::Relaxed);
                log::warn!(
                    "corrupt cache entry {} ({reason}); recomputing",
                    self.cache.path_for(key).display()
                );
                Ok((None, CacheStatus::Recovered(reason)))
            }
        }
    }

    /// Like [`Embedder::embed`], also reporting what the cache did.
    pub fn embed_with_status(
        &self,
        text: &str,
    ) -> Result<(EmbeddingMatrix, CacheStatus), EmbedError> {
        let key = self.key(text);
        match self.lookup(&key)? {
            (Some(m), status) => Ok((m, status)),
            (None, status) => {
                let m = self.inner.embed(text)?;
                self.cache.store(&key, &m)?;
                Ok((m, status))
            }
        }
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn config(&self) -> &BackendConfig {
        self.inner.config()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingMatrix>, EmbedError> {
        let keys: Vec<String> = texts.iter().map(|t| self.key(t)).collect();
        let mut found = Vec::with_capacity(texts.len());
        for (i, key) in keys.iter().enumerate() {
            found.push(self.lookup(key).map_err(|e| e.at_text(i))?.0);
        }
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| found[i].is_none()).collect();
        if !missing.is_empty() {
            let todo: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let computed = self
                .inner
                .embed_batch(&todo)
                .map_err(|e| match e.text_index() {
                    Some(j) => remap_index(e, missing[j]),
                    None => e,
                })?;
            for (&i, m) in missing.iter().zip(computed) {
                self.cache.store(&keys[i], &m).map_err(|e| e.at_text(i))?;
                found[i] = Some(m);
            }
        }
        Ok(found
            .into_iter()
            .map(|m| m.expect("filled above"))
            .collect())
    }

    fn embed(&self, text: &str) -> Result<EmbeddingMatrix, EmbedError> {
        self.embed_with_status(text).map(|(m, _)| m)
    }
}

fn remap_index(e: EmbedError, index: usize) -> EmbedError {
    match e {
        EmbedError::AtText { source, .. } => EmbedError::AtText { index, source },
        EmbedError::DimensionMismatch {
            expected, found, ..
        } => EmbedError::DimensionMismatch {
            index,
            expected,
            found,
        },
        e => e,
    }
}

/// Embeds one text through the cache in `cache_dir`, building the backend the
/// config describes.
pub fn cached_embed(
    text: &str,
    config: &BackendConfig,
    cache_dir: &Path,
) -> Result<(EmbeddingMatrix, CacheStatus), EmbedError> {
    let cached = CachedEmbedder::new(embedder_for(config)?, EmbeddingCache::new(cache_dir)?);
    cached.embed_with_status(text)
}
