use std::fs;
use std::time::Duration;

use corpusclass_core::embedding::{
    cache_key, cached_embed, CacheStatus, CachedEmbedder, CorruptCache, EmbeddingCache,
    HashedEmbedder, RemoteEmbedder, RemoteOptions, Url, CACHE_MAGIC,
};
use corpusclass_core::stub::{StubOptions, StubServer};
use corpusclass_core::{BackendConfig, Embedder};

#[test]
fn hit_is_bit_identical_to_direct_computation() {
    let dir = tempfile::tempdir().unwrap();
    let config = BackendConfig::hashed(64, 3);
    let direct = HashedEmbedder::new(config.clone())
        .unwrap()
        .embed("Long COVID fatigue")
        .unwrap();
    let (first, s1) = cached_embed("Long COVID fatigue", &config, dir.path()).unwrap();
    let (second, s2) = cached_embed("Long COVID fatigue", &config, dir.path()).unwrap();
    assert_eq!((s1, s2), (CacheStatus::Miss, CacheStatus::Hit));
    let bits = |m: &corpusclass_core::EmbeddingMatrix| {
        m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(bits(&first), bits(&direct));
    assert_eq!(bits(&second), bits(&direct));
}

#[test]
fn file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let config = BackendConfig::hashed(8, 0);
    let (m, _) = cached_embed("a", &config, dir.path()).unwrap();
    let key = cache_key("hashed", &config.canonical_bytes(), "a");
    let bytes = fs::read(dir.path().join(format!("{key}.zsec"))).unwrap();
    assert_eq!(&bytes[..5], CACHE_MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 8);
    assert_eq!(bytes.len(), 13 + 4 * 16);
    let stored: Vec<f64> = bytes[13..]
        .chunks(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    assert_eq!(stored.as_slice(), m.values());
}

#[test]
fn corrupt_entry_is_recomputed_and_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let config = BackendConfig::hashed(32, 0);
    let cache = EmbeddingCache::new(dir.path()).unwrap();
    let cached = CachedEmbedder::new(HashedEmbedder::new(config.clone()).unwrap(), cache.clone());
    let (good, _) = cached.embed_with_status("post viral").unwrap();
    let path = cache.path_for(&cache_key(
        "hashed",
        &config.canonical_bytes(),
        "post viral",
    ));
    let original = fs::read(&path).unwrap();
    fs::write(&path, b"ZSEC1garbage!!").unwrap();

    let (again, status) = cached.embed_with_status("post viral").unwrap();
    assert!(
        matches!(status, CacheStatus::Recovered(CorruptCache::Length { .. })),
        "{status:?}"
    );
    assert_eq!(again, good);
    assert_eq!(cached.warnings(), 1);
    assert_eq!(fs::read(&path).unwrap(), original);

    let (_, status) = cached.embed_with_status("post viral").unwrap();
    assert_eq!(status, CacheStatus::Hit);
    assert_eq!(cached.warnings(), 1);
}

#[test]
fn config_change_misses() {
    let dir = tempfile::tempdir().unwrap();
    cached_embed("same text", &BackendConfig::hashed(32, 0), dir.path()).unwrap();
    let (_, status) = cached_embed("same text", &BackendConfig::hashed(32, 1), dir.path()).unwrap();
    assert_eq!(status, CacheStatus::Miss);
}

#[test]
fn remote_results_are_served_from_cache() {
    let stub = StubServer::start(StubOptions::default());
    let dir = tempfile::tempdir().unwrap();
    let config = BackendConfig::remote(Url::parse(&stub.url()).unwrap());
    let options = RemoteOptions {
        backoff_base: Duration::from_millis(1),
        ..RemoteOptions::default()
    };
    let make = || {
        CachedEmbedder::new(
            RemoteEmbedder::with_options(config.clone(), options.clone()).unwrap(),
            EmbeddingCache::new(dir.path()).unwrap(),
        )
    };
    let texts: Vec<String> = ["one two", "three", "four five six"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let first = make().embed_batch(&texts).unwrap();
    assert_eq!(stub.requests(), 1);
    let second = make();
    let again = second.embed_batch(&texts).unwrap();
    assert_eq!(first, again);
    assert_eq!(stub.requests(), 1);
    assert_eq!(second.hits(), 3);
}
