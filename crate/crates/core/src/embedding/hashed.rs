//! Feature-hashing backend: each token maps to a single signed unit entry.

use rayon::prelude::*;

use super::{
    tokenize, BackendConfig, BackendKind, EmbedError, Embedder, EmbeddingMatrix, TokenSequence,
};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over a sequence of byte slices, as if concatenated.
pub fn fnv1a64<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> u64 {
    let mut hash = FNV_OFFSET;
    for part in parts {
        for &b in part {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(FNV_PRIME);
        }
    }
    hash
}

/// Column index and sign assigned to `token`: the hash of the seed's eight
/// little-endian bytes followed by the token bytes, reduced mod `dim`, with the
/// sign taken from bit 63.
pub fn hashed_slot(token: &str, seed: u64, dim: usize) -> (usize, f64) {
    let h = fnv1a64([&seed.to_le_bytes()[..], token.as_bytes()]);
    let index = (h % dim as u64) as usize;
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    (index, sign)
}

pub fn embed_hashed(
    tokens: &TokenSequence,
    config: &BackendConfig,
) -> Result<EmbeddingMatrix, EmbedError> {
    if config.kind != BackendKind::Hashed {
        return Err(EmbedError::InvalidConfig(
            "config is not for the hashed backend".into(),
        ));
    }
    config.validate()?;
    let dim = config.dim;
    let mut values = vec![0.0; tokens.len() * dim];
    for (t, token) in tokens.iter().enumerate() {
        let (index, sign) = hashed_slot(token, config.seed, dim);
        values[t * dim + index] = sign;
    }
    // Rows hold a single ±1 entry, so they are already unit-norm and
    // `normalize_rows` leaves them unchanged.
    EmbeddingMatrix::new(tokens.len(), dim, values)
}

#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    config: BackendConfig,
}

impl HashedEmbedder {
    pub fn new(config: BackendConfig) -> Result<Self, EmbedError> {
        if config.kind != BackendKind::Hashed {
            return Err(EmbedError::InvalidConfig(
                "config is not for the hashed backend".into(),
            ));
        }
        config.validate()?;
        Ok(Self { config })
    }
}

impl Embedder for HashedEmbedder {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingMatrix>, EmbedError> {
        texts
            .par_iter()
            .enumerate()
            .map(|(i, text)| self.embed(text).map_err(|e| e.at_text(i)))
            .collect()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingMatrix, EmbedError> {
        embed_hashed(&tokenize(text)?, &self.config)
    }
}
