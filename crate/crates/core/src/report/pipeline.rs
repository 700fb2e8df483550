use std::sync::Arc;

use rayon::prelude::*;

use super::{Classification, ClassificationTable, ReportError, StageError};
use crate::aggregation::{aggregate, Origin, PooledEmbedding, Transform, WeightStrategy};
use crate::corpus::{document_text, CategorySet, Corpus, DEFAULT_SEPARATOR};
use crate::embedding::{Embedder, EmbeddingMatrix};
use crate::scoring::{decide, posterior, score_all, Decision, PosteriorVector, ScoringParams};

/// Records embedded per backend call; bounds how many matrices are alive at once.
const CHUNK: usize = 256;

/// Everything a classification run needs besides the corpus and categories.
#[derive(Clone)]
pub struct PipelineConfig {
    pub embedder: Arc<dyn Embedder>,
    pub weights: WeightStrategy,
    pub doc_transform: Transform,
    pub category_transform: Transform,
    /// `None` uses identity `A`, zero biases and normalization on.
    pub scoring: Option<ScoringParams>,
    pub separator: String,
    /// Worker threads for record-level work; `None` uses every logical CPU.
    pub parallelism: Option<usize>,
}

impl PipelineConfig {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            weights: WeightStrategy::Uniform,
            doc_transform: Transform::Identity,
            category_transform: Transform::Identity,
            scoring: None,
            separator: DEFAULT_SEPARATOR.to_owned(),
            parallelism: None,
        }
    }
}

/// Category vectors computed once, ready to score documents against.
pub struct Classifier<'a> {
    categories: &'a CategorySet,
    config: &'a PipelineConfig,
    category_vectors: Vec<PooledEmbedding>,
    params: ScoringParams,
}

impl<'a> Classifier<'a> {
    pub fn new(
        categories: &'a CategorySet,
        config: &'a PipelineConfig,
    ) -> Result<Self, ReportError> {
        let mut params = config
            .scoring
            .clone()
            .unwrap_or_else(|| ScoringParams::identity(categories.len()));
        params
            .validate(categories.len())
            .map_err(|e| ReportError::Config(e.to_string()))?;

        let texts: Vec<String> = categories.iter().map(|c| c.embedding_text()).collect();
        let matrices = config
            .embedder
            .embed_batch(&texts)
            .map_err(|e| match e.text_index() {
                Some(i) => ReportError::Category {
                    key: categories
                        .get(i)
                        .map_or_else(String::new, |c| c.key.clone()),
                    source: e.into(),
                },
                None => ReportError::Backend(e),
            })?;

        let mut category_vectors = Vec::with_capacity(categories.len());
        for (spec, m) in categories.iter().zip(&matrices) {
            let pooled = pool(
                m,
                config.weights,
                &config.category_transform,
                Origin::Category,
                params.pre_normalize,
            )
            .map_err(|source| ReportError::Category {
                key: spec.key.clone(),
                source,
            })?;
            category_vectors.push(pooled);
        }
        // Both sides are unit vectors from here on.
        params.pre_normalize = false;
        Ok(Self {
            categories,
            config,
            category_vectors,
            params,
        })
    }

    pub fn category_vectors(&self) -> &[PooledEmbedding] {
        &self.category_vectors
    }

    fn posterior_for_matrix(&self, m: &EmbeddingMatrix) -> Result<PosteriorVector, StageError> {
        let z = pool(
            m,
            self.config.weights,
            &self.config.doc_transform,
            Origin::Document,
            self.config.scoring.as_ref().is_none_or(|p| p.pre_normalize),
        )?;
        let scores = score_all(&z, &self.category_vectors, &self.params)?;
        Ok(posterior(&scores)?)
    }

    /// Posterior over categories for a single document text.
    pub fn posterior_for(&self, text: &str) -> Result<PosteriorVector, StageError> {
        let m = self.config.embedder.embed(text)?;
        self.posterior_for_matrix(&m)
    }

    pub fn classify_text(&self, text: &str) -> Result<(Decision, PosteriorVector), StageError> {
        let post = self.posterior_for(text)?;
        Ok((decide(&post), post))
    }

    fn classify_chunk(
        &self,
        corpus: &[crate::corpus::PaperRecord],
    ) -> Result<Vec<Classification>, ReportError> {
        let texts: Vec<String> = corpus
            .iter()
            .map(|r| document_text(r, &self.config.separator))
            .collect();
        let matrices =
            self.config
                .embedder
                .embed_batch(&texts)
                .map_err(|e| match e.text_index() {
                    Some(i) => ReportError::Record {
                        paper_id: corpus[i].id.clone(),
                        source: e.into(),
                    },
                    None => ReportError::Backend(e),
                })?;
        corpus
            .par_iter()
            .zip(matrices.par_iter())
            .map(|(record, m)| {
                let post = self
                    .posterior_for_matrix(m)
                    .map_err(|source| ReportError::Record {
                        paper_id: record.id.clone(),
                        source,
                    })?;
                let d = decide(&post);
                let spec = self
                    .categories
                    .get(d.category_index)
                    .expect("index within category set");
                Ok(Classification {
                    paper_id: record.id.clone(),
                    title: record.title.clone(),
                    category_key: spec.key.clone(),
                    category_name: spec.name.clone(),
                    confidence: d.confidence,
                })
            })
            .collect()
    }
}

fn pool(
    m: &EmbeddingMatrix,
    weights: WeightStrategy,
    transform: &Transform,
    origin: Origin,
    normalize: bool,
) -> Result<PooledEmbedding, StageError> {
    let w = weights.weights_for(m)?;
    let pooled = aggregate(m, &w, transform, origin)?;
    Ok(if normalize {
        pooled.normalized()?
    } else {
        pooled
    })
}

/// Classifies every record, returning one row per record in corpus order.
/// Category embeddings are computed once, before any document work.
pub fn classify_corpus(
    corpus: &Corpus,
    categories: &CategorySet,
    config: &PipelineConfig,
) -> Result<ClassificationTable, ReportError> {
    let threads = match config.parallelism {
        Some(0) => return Err(ReportError::Config("parallelism must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ReportError::Config(e.to_string()))?;

    pool.install(|| {
        let classifier = Classifier::new(categories, config)?;
        let mut rows = Vec::with_capacity(corpus.len());
        for chunk in corpus.records().chunks(CHUNK) {
            rows.extend(classifier.classify_chunk(chunk)?);
        }
        Ok(ClassificationTable {
            rows,
            category_set: categories.clone(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_categories, PaperRecord};
    use crate::embedding::{BackendConfig, HashedEmbedder};

    fn hashed(dim: usize) -> PipelineConfig {
        PipelineConfig::new(Arc::new(
            HashedEmbedder::new(BackendConfig::hashed(dim, 0)).unwrap(),
        ))
    }

    fn disjoint_categories() -> CategorySet {
        parse_categories(
            r#"[
                {"key": "fatigue", "name": "Fatigue", "description": "exhaustion tiredness malaise"},
                {"key": "markets", "name": "Markets", "description": "stocks bonds dividends"}
            ]"#,
        )
        .unwrap()
    }

    #[test]
    fn empty_corpus_gives_empty_table() {
        let cats = disjoint_categories();
        let table = classify_corpus(&Corpus::default(), &cats, &hashed(64)).unwrap();
        assert!(table.is_empty());
        assert_eq!(table.category_set, cats);
    }

    #[test]
    fn document_matching_a_category_text_picks_it() {
        let cats = disjoint_categories();
        let text = cats.get(1).unwrap().embedding_text();
        let corpus = Corpus::from_records(vec![PaperRecord::new("p1", text)]).unwrap();
        let table = classify_corpus(&corpus, &cats, &hashed(256)).unwrap();
        assert_eq!(table.rows[0].category_key, "markets");
        assert!(table.rows[0].confidence > 0.5);
    }

    #[test]
    fn errors_name_the_paper() {
        let cats = disjoint_categories();
        let corpus = Corpus::from_records(vec![
            PaperRecord::new("fine", "tired"),
            PaperRecord::new("bad", "?!"),
        ])
        .unwrap();
        let err = classify_corpus(&corpus, &cats, &hashed(64)).unwrap_err();
        assert!(
            matches!(&err, ReportError::Record { paper_id, .. } if paper_id == "bad"),
            "{err}"
        );
        assert!(!err.is_environmental());
    }

    #[test]
    fn bias_length_is_checked() {
        let cats = disjoint_categories();
        let mut cfg = hashed(64);
        cfg.scoring = Some(ScoringParams::identity(3));
        assert!(matches!(
            classify_corpus(&Corpus::default(), &cats, &cfg),
            Err(ReportError::Config(_))
        ));
        cfg.scoring = None;
        cfg.parallelism = Some(0);
        assert!(classify_corpus(&Corpus::default(), &cats, &cfg).is_err());
    }

    #[test]
    fn parallelism_does_not_change_output() {
        let cats = CategorySet::builtin();
        let records = (0..40)
            .map(|i| {
                PaperRecord::new(
                    format!("r{i}"),
                    format!("long covid symptom study {i} reddit twitter support"),
                )
            })
            .collect();
        let corpus = Corpus::from_records(records).unwrap();
        let mut one = hashed(256);
        one.parallelism = Some(1);
        let mut many = hashed(256);
        many.parallelism = Some(8);
        let a = classify_corpus(&corpus, &cats, &one).unwrap();
        let b = classify_corpus(&corpus, &cats, &many).unwrap();
        assert_eq!(a, b);
        let ids: Vec<_> = a.rows.iter().map(|r| r.paper_id.clone()).collect();
        let expected: Vec<_> = corpus.iter().map(|r| r.id.clone()).collect();
        assert_eq!(ids, expected);
    }
}
