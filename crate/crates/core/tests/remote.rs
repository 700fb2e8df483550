use std::time::Duration;

use corpusclass_core::embedding::{RemoteEmbedder, RemoteOptions, Url};
use corpusclass_core::stub::{
    stub_embedding, unreachable_url, StubOptions, StubServer, RAGGED_MARKER,
};
use corpusclass_core::{BackendConfig, EmbedError, Embedder};

fn client(url: &str, normalize: bool, batch_size: usize) -> RemoteEmbedder {
    let mut config = BackendConfig::remote(Url::parse(url).unwrap());
    config.normalize_rows = normalize;
    let options = RemoteOptions {
        backoff_base: Duration::from_millis(2),
        batch_size,
        ..RemoteOptions::default()
    };
    RemoteEmbedder::with_options(config, options).unwrap()
}

fn texts(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("text number {i} with {} words", "w ".repeat(i % 5)))
        .collect()
}

#[test]
fn order_survives_out_of_order_completion() {
    let stub = StubServer::start(StubOptions {
        max_delay: Duration::from_millis(25),
        ..StubOptions::default()
    });
    let inputs = texts(40);
    let out = client(&stub.url(), false, 3).embed_batch(&inputs).unwrap();
    assert_eq!(out.len(), inputs.len());
    for (text, m) in inputs.iter().zip(&out) {
        let expected: Vec<f64> = stub_embedding(text, 4).concat();
        assert_eq!(m.values(), expected.as_slice(), "{text}");
    }
    assert_eq!(stub.requests(), 14);
    assert!(stub.peak_in_flight() <= 4, "peak {}", stub.peak_in_flight());
}

#[test]
fn batches_carry_the_protocol_fields() {
    let stub = StubServer::start(StubOptions::default());
    client(&stub.url(), true, 16)
        .embed_batch(&texts(20))
        .unwrap();
    let mut sizes: Vec<usize> = stub.batches().iter().map(Vec::len).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![4, 16]);
}

#[test]
fn rows_are_unit_length_when_normalizing() {
    let stub = StubServer::start(StubOptions::default());
    let m = client(&stub.url(), true, 16)
        .embed("some words here")
        .unwrap();
    for row in m.iter_rows() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|v| f64::from(*v as f32) == *v));
    }
}

#[test]
fn width_mismatch_names_the_text() {
    let stub = StubServer::start(StubOptions::default());
    let mut inputs = texts(8);
    inputs[5] = RAGGED_MARKER.to_owned();
    let err = client(&stub.url(), false, 3)
        .embed_batch(&inputs)
        .unwrap_err();
    assert!(
        matches!(
            err,
            EmbedError::DimensionMismatch {
                index: 5,
                expected: 4,
                found: 5
            }
        ),
        "{err}"
    );
}

#[test]
fn recovers_after_two_server_errors() {
    let stub = StubServer::start(StubOptions {
        fail_first: 2,
        ..StubOptions::default()
    });
    let c = client(&stub.url(), false, 16);
    let out = c.embed_batch(&texts(3)).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(stub.requests(), 3);
    assert_eq!(c.retries(), 2);
}

#[test]
fn gives_up_after_three_retries() {
    let stub = StubServer::start(StubOptions {
        fail_first: 10,
        ..StubOptions::default()
    });
    let err = client(&stub.url(), false, 16)
        .embed_batch(&texts(2))
        .unwrap_err();
    assert!(
        matches!(&err, EmbedError::Service { status: 500, message } if message == "injected failure"),
        "{err}"
    );
    assert!(err.is_environmental());
    assert_eq!(stub.requests(), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = StubServer::start(StubOptions {
        status: 400,
        ..StubOptions::default()
    });
    let err = client(&stub.url(), false, 16)
        .embed_batch(&texts(2))
        .unwrap_err();
    assert!(
        matches!(err, EmbedError::Service { status: 400, .. }),
        "{err}"
    );
    assert_eq!(stub.requests(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let err = client(&unreachable_url(), false, 16)
        .embed_batch(&texts(1))
        .unwrap_err();
    assert!(
        matches!(err, EmbedError::Transport { attempts: 4, .. }),
        "{err}"
    );
}

#[test]
fn blank_text_is_rejected_before_sending() {
    let stub = StubServer::start(StubOptions::default());
    let inputs = vec!["fine".to_owned(), "  ".to_owned()];
    let err = client(&stub.url(), false, 16)
        .embed_batch(&inputs)
        .unwrap_err();
    assert_eq!(err.text_index(), Some(1));
    assert_eq!(stub.requests(), 0);
}
