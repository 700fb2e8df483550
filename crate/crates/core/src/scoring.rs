//! Category scores, softmax posteriors and the single-label decision.
//!
//! The score of a document against category `k` is the bilinear form
//! `zᵀ A z_k + b_k`. Scores become a posterior through a max-shifted softmax,
//! and the decision is the first category (in declaration order) with the
//! largest posterior.

use serde::Deserialize;

use crate::aggregation::{AggregationError, PooledEmbedding, Transform};
use crate::embedding::EmbeddingMatrix;
use crate::matrix::{dot, DenseMatrix, ShapeError};

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("need at least 2 scores, got {0}")]
    TooFewScores(usize),
    #[error("score {0} is not finite")]
    NonFiniteScore(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("category index {index} out of range for {n} categories")]
    CategoryIndex { index: usize, n: usize },
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error("invalid omega function: {0}")]
    Omega(String),
    #[error("omega covers [0, {covered}] but the token path has length {tokens}")]
    OmegaTooShort { covered: f64, tokens: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid scoring parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Bilinear form `A`, biases `b`, and whether `z`, `z_k` are unit-normalized
/// before scoring. `matrix_a = None` means the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringParams {
    pub matrix_a: Option<DenseMatrix>,
    pub biases: Vec<f64>,
    pub pre_normalize: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    matrix_a: Option<DenseMatrix>,
    biases: Option<Vec<f64>>,
    pre_normalize: Option<bool>,
}

impl ScoringParams {
    /// Identity `A`, zero biases, normalization on.
    pub fn identity(n_categories: usize) -> Self {
        Self {
            matrix_a: None,
            biases: vec![0.0; n_categories],
            pre_normalize: true,
        }
    }

    /// Parses `{"matrix_a": [[...]], "biases": [...], "pre_normalize": bool}`;
    /// missing fields take their defaults.
    pub fn from_json(text: &str, n_categories: usize) -> Result<Self, ScoringError> {
        let file: ParamsFile =
            serde_json::from_str(text).map_err(|e| ScoringError::Params(e.to_string()))?;
        let params = Self {
            matrix_a: file.matrix_a,
            biases: file.biases.unwrap_or_else(|| vec![0.0; n_categories]),
            pre_normalize: file.pre_normalize.unwrap_or(true),
        };
        params.validate(n_categories)?;
        Ok(params)
    }

    pub fn validate(&self, n_categories: usize) -> Result<(), ScoringError> {
        if self.biases.len() != n_categories {
            return Err(ScoringError::Params(format!(
                "{} biases for {n_categories} categories",
                self.biases.len()
            )));
        }
        if self.biases.iter().any(|b| !b.is_finite()) {
            return Err(ScoringError::NonFinite("biases"));
        }
        if let Some(a) = &self.matrix_a {
            if a.rows() != a.cols() {
                return Err(ScoringError::Params(format!(
                    "matrix_a must be square, got {}x{}",
                    a.rows(),
                    a.cols()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self, ScoringError> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(ScoringError::NonFiniteScore(i));
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorVector(Vec<f64>);

impl PosteriorVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub category_index: usize,
    pub confidence: f64,
}

/// `zᵀ A z_k + b_k` for `category_index = k`.
pub fn score(
    doc: &PooledEmbedding,
    cat: &PooledEmbedding,
    params: &ScoringParams,
    category_index: usize,
) -> Result<f64, ScoringError> {
    let bias = *params
        .biases
        .get(category_index)
        .ok_or(ScoringError::CategoryIndex {
            index: category_index,
            n: params.biases.len(),
        })?;
    if doc.dim() != cat.dim() {
        return Err(ScoringError::Dimension(format!(
            "document vector has {} components, category vector {}",
            doc.dim(),
            cat.dim()
        )));
    }
    let (doc, cat) = if params.pre_normalize {
        (doc.normalized()?, cat.normalized()?)
    } else {
        (doc.clone(), cat.clone())
    };
    let bilinear = match &params.matrix_a {
        None => dot(&doc.vector, &cat.vector),
        Some(a) if a.cols() == cat.dim() && a.rows() == doc.dim() => {
            dot(&doc.vector, &a.mul_vec(&cat.vector))
        }
        Some(a) => {
            return Err(ScoringError::Dimension(format!(
                "matrix_a is {}x{} but vectors have {} components",
                a.rows(),
                a.cols(),
                doc.dim()
            )))
        }
    };
    Ok(bilinear + bias)
}

/// Scores one document against every category vector, in category order.
pub fn score_all(
    doc: &PooledEmbedding,
    categories: &[PooledEmbedding],
    params: &ScoringParams,
) -> Result<ScoreVector, ScoringError> {
    let scores = categories
        .iter()
        .enumerate()
        .map(|(k, cat)| score(doc, cat, params, k))
        .collect::<Result<Vec<_>, _>>()?;
    ScoreVector::new(scores)
}

/// A non-negative piecewise-constant weighting over `[0, t_M]`; `values[i]`
/// holds on `[breakpoints[i], breakpoints[i + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl OmegaFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, ScoringError> {
        if breakpoints.len() < 2 || values.len() + 1 != breakpoints.len() {
            return Err(ScoringError::Omega(format!(
                "{} breakpoints need {} values, got {}",
                breakpoints.len(),
                breakpoints.len().saturating_sub(1),
                values.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(ScoringError::Omega("first breakpoint must be 0".into()));
        }
        if breakpoints.iter().any(|b| !b.is_finite())
            || breakpoints.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(ScoringError::Omega(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ScoringError::Omega(
                "values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    /// `ω(t) = c` on `[0, length]`.
    pub fn constant(value: f64, length: f64) -> Result<Self, ScoringError> {
        Self::new(vec![0.0, length], vec![value])
    }

    /// `ω(t) = w_i` on `[i, i + 1)`, the continuous image of discrete token
    /// weights.
    pub fn from_token_weights(weights: &[f64]) -> Result<Self, ScoringError> {
        let breakpoints = (0..=weights.len()).map(|i| i as f64).collect();
        Self::new(breakpoints, weights.to_vec())
    }

    pub fn domain_end(&self) -> f64 {
        *self.breakpoints.last().expect("at least two breakpoints")
    }

    /// Exact `∫_a^b ω(t) dt` for `0 ≤ a ≤ b ≤ domain_end`.
    fn integral(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            let lo = self.breakpoints[i].max(a);
            let hi = self.breakpoints[i + 1].min(b);
            if hi > lo {
                total += (hi - lo) * v;
            }
        }
        total
    }
}

/// `∫_0^T ω(t) ⟨φ(x_t), ψ(c)⟩ dt` with `x_t` constant on `[t, t + 1)`,
/// evaluated exactly over the common refinement of the omega breakpoints and
/// the token boundaries.
pub fn score_continuous(
    token_path: &EmbeddingMatrix,
    omega: &OmegaFunction,
    cat_vector: &PooledEmbedding,
    transform_doc: &Transform,
    transform_cat: &Transform,
) -> Result<f64, ScoringError> {
    let tokens = token_path.rows();
    if omega.domain_end() < tokens as f64 {
        return Err(ScoringError::OmegaTooShort {
            covered: omega.domain_end(),
            tokens,
        });
    }
    if cat_vector.vector.iter().any(|v| !v.is_finite()) {
        return Err(ScoringError::NonFinite("category vector"));
    }
    let doc_dim = transform_doc.output_dim(token_path.cols())?;
    let cat_t = transform_cat.output_dim(cat_vector.dim())?;
    if doc_dim != cat_t {
        return Err(ScoringError::Dimension(format!(
            "transformed tokens have {doc_dim} components, transformed category {cat_t}"
        )));
    }
    let psi = transform_cat.apply(&cat_vector.vector);
    let mut total = 0.0;
    for (t, row) in token_path.iter_rows().enumerate() {
        let mass = omega.integral(t as f64, (t + 1) as f64);
        if mass == 0.0 {
            continue;
        }
        total += mass * dot(&transform_doc.apply(row), &psi);
    }
    if !total.is_finite() {
        return Err(ScoringError::NonFinite("continuous score"));
    }
    Ok(total)
}

/// Max-shifted softmax. Callers guarantee finite input.
pub(crate) fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn check_scores(scores: &ScoreVector) -> Result<(), ScoringError> {
    if scores.len() < 2 {
        return Err(ScoringError::TooFewScores(scores.len()));
    }
    if let Some(i) = scores.0.iter().position(|s| !s.is_finite()) {
        return Err(ScoringError::NonFiniteScore(i));
    }
    Ok(())
}

pub fn posterior(scores: &ScoreVector) -> Result<PosteriorVector, ScoringError> {
    check_scores(scores)?;
    Ok(PosteriorVector(stable_softmax(&scores.0)))
}

/// `s_k − log Σ_j exp(s_j)`, with the log-partition computed by log-sum-exp.
pub fn log_posterior(scores: &ScoreVector) -> Result<Vec<f64>, ScoringError> {
    check_scores(scores)?;
    let log_z = log_sum_exp(&scores.0);
    Ok(scores.0.iter().map(|s| s - log_z).collect())
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// First index holding the maximum probability.
pub fn decide(post: &PosteriorVector) -> Decision {
    let mut best = 0;
    for (k, &p) in post.0.iter().enumerate().skip(1) {
        if p > post.0[best] {
            best = k;
        }
    }
    Decision {
        category_index: best,
        confidence: post.0[best],
    }
}

/// First index minimizing `−log p`; the negative-log-likelihood form of
/// [`decide`].
pub fn argmin_negative_log(log_post: &[f64]) -> usize {
    let mut best = 0;
    for (k, &lp) in log_post.iter().enumerate().skip(1) {
        if -lp < -log_post[best] {
            best = k;
        }
    }
    best
}
