//! Pooling a token-embedding matrix into one vector.
//!
//! A pooled vector is `Σ_t w_t · f(x_t)` where the weights `w` are a convex
//! combination over tokens and `f` is a per-token transform (identity or
//! affine). Documents and categories are pooled the same way, possibly with
//! different transforms.

use std::borrow::Cow;

use serde::Deserialize;

use crate::embedding::EmbeddingMatrix;
use crate::matrix::{l2_norm, DenseMatrix, ShapeError};
use crate::scoring::stable_softmax;

/// Tolerance on `Σ w_t = 1` for caller-supplied weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum AggregationError {
    #[error("weight vector must not be empty")]
    EmptyWeights,
    #[error("weight {index} is {value}; weights must be finite and non-negative")]
    BadWeight { index: usize, value: f64 },
    #[error("weights sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("{weights} weights for {rows} rows")]
    LengthMismatch { weights: usize, rows: usize },
    #[error("transform expects input width {expected}, matrix has {found}")]
    TransformShape { expected: usize, found: usize },
    #[error("affine offset has length {offset}, matrix has {rows} rows")]
    OffsetLength { offset: usize, rows: usize },
    #[error("temperature must be finite and positive, got {0}")]
    BadTemperature(f64),
    #[error("row {0} has a non-finite norm")]
    NonFiniteRow(usize),
    #[error("pooled {0} vector has zero norm")]
    ZeroNorm(Origin),
    #[error("invalid transform matrix: {0}")]
    Shape(#[from] ShapeError),
    #[error("invalid transform file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Validates non-negativity and `|Σ w − 1| ≤ 1e-12`.
    pub fn new(weights: Vec<f64>) -> Result<Self, AggregationError> {
        if weights.is_empty() {
            return Err(AggregationError::EmptyWeights);
        }
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(AggregationError::BadWeight { index, value });
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(AggregationError::NotNormalized(sum));
        }
        Ok(Self(weights))
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

pub fn uniform_weights(len: usize) -> Result<WeightVector, AggregationError> {
    if len == 0 {
        return Err(AggregationError::EmptyWeights);
    }
    Ok(WeightVector(vec![1.0 / len as f64; len]))
}

/// Softmax over row L2 norms divided by `temperature`.
pub fn attention_weights(
    matrix: &EmbeddingMatrix,
    temperature: f64,
) -> Result<WeightVector, AggregationError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(AggregationError::BadTemperature(temperature));
    }
    let mut logits = Vec::with_capacity(matrix.rows());
    for (t, row) in matrix.iter_rows().enumerate() {
        let u = l2_norm(row) / temperature;
        if !u.is_finite() {
            return Err(AggregationError::NonFiniteRow(t));
        }
        logits.push(u);
    }
    Ok(WeightVector(stable_softmax(&logits)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum WeightStrategy {
    #[default]
    Uniform,
    Attention {
        temperature: f64,
    },
}

impl WeightStrategy {
    pub fn weights_for(&self, matrix: &EmbeddingMatrix) -> Result<WeightVector, AggregationError> {
        match *self {
            WeightStrategy::Uniform => uniform_weights(matrix.rows()),
            WeightStrategy::Attention { temperature } => attention_weights(matrix, temperature),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Transform {
    #[default]
    Identity,
    Affine {
        matrix: DenseMatrix,
        offset: Vec<f64>,
    },
}

#[derive(Deserialize)]
struct AffineFile {
    matrix: DenseMatrix,
    offset: Vec<f64>,
}

impl Transform {
    pub fn affine(matrix: DenseMatrix, offset: Vec<f64>) -> Result<Self, AggregationError> {
        if offset.len() != matrix.rows() {
            return Err(AggregationError::OffsetLength {
                offset: offset.len(),
                rows: matrix.rows(),
            });
        }
        if offset.iter().any(|v| !v.is_finite()) {
            return Err(AggregationError::Parse(
                "offset has non-finite entries".into(),
            ));
        }
        Ok(Transform::Affine { matrix, offset })
    }

    /// Parses `{"matrix": [[...]], "offset": [...]}`.
    pub fn from_json(text: &str) -> Result<Self, AggregationError> {
        let file: AffineFile =
            serde_json::from_str(text).map_err(|e| AggregationError::Parse(e.to_string()))?;
        Self::affine(file.matrix, file.offset)
    }

    pub fn output_dim(&self, input_dim: usize) -> Result<usize, AggregationError> {
        match self {
            Transform::Identity => Ok(input_dim),
            Transform::Affine { matrix, .. } if matrix.cols() == input_dim => Ok(matrix.rows()),
            Transform::Affine { matrix, .. } => Err(AggregationError::TransformShape {
                expected: matrix.cols(),
                found: input_dim,
            }),
        }
    }

    /// Applies the transform to one row. The caller checks the width.
    pub fn apply<'a>(&self, row: &'a [f64]) -> Cow<'a, [f64]> {
        match self {
            Transform::Identity => Cow::Borrowed(row),
            Transform::Affine { matrix, offset } => {
                let mut out = matrix.mul_vec(row);
                for (o, b) in out.iter_mut().zip(offset) {
                    *o += b;
                }
                Cow::Owned(out)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Document,
    Category,
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Origin::Document => "document",
            Origin::Category => "category",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledEmbedding {
    pub vector: Vec<f64>,
    pub origin: Origin,
}

impl PooledEmbedding {
    pub fn new(vector: Vec<f64>, origin: Origin) -> Self {
        Self { vector, origin }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Unit-L2 copy; zero vectors are an error rather than left as-is.
    pub fn normalized(&self) -> Result<Self, AggregationError> {
        let norm = l2_norm(&self.vector);
        if norm == 0.0 || !norm.is_finite() {
            return Err(AggregationError::ZeroNorm(self.origin));
        }
        Ok(Self {
            vector: self.vector.iter().map(|v| v / norm).collect(),
            origin: self.origin,
        })
    }
}

pub fn aggregate(
    matrix: &EmbeddingMatrix,
    weights: &WeightVector,
    transform: &Transform,
    origin: Origin,
) -> Result<PooledEmbedding, AggregationError> {
    if weights.len() != matrix.rows() {
        return Err(AggregationError::LengthMismatch {
            weights: weights.len(),
            rows: matrix.rows(),
        });
    }
    let dim = transform.output_dim(matrix.cols())?;
    let mut acc = vec![0.0; dim];
    for (row, &w) in matrix.iter_rows().zip(weights.as_slice()) {
        if w == 0.0 {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(transform.apply(row).iter()) {
            *a += w * v;
        }
    }
    Ok(PooledEmbedding::new(acc, origin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn m(rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_weights(4).unwrap().as_slice(), [0.25; 4]);
        assert_eq!(uniform_weights(1).unwrap().as_slice(), [1.0]);
        let third = uniform_weights(3).unwrap();
        assert!((third.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(uniform_weights(0).is_err());
    }

    #[test]
    fn attention_examples() {
        let equal = m(vec![vec![1.0, 0.0], vec![0.0, -1.0], vec![0.6, 0.8]]);
        for w in attention_weights(&equal, 1.0).unwrap().as_slice() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        // Closed form e/(e+1), 1/(e+1).
        let two = m(vec![vec![2.0, 0.0], vec![0.0, 1.0]]);
        let w = attention_weights(&two, 1.0).unwrap();
        assert!((w.as_slice()[0] - 0.7310585786300049).abs() < 1e-15);
        assert!((w.as_slice()[1] - 0.2689414213699951).abs() < 1e-15);
        let one = m(vec![vec![3.0, 4.0]]);
        assert_eq!(attention_weights(&one, 0.01).unwrap().as_slice(), [1.0]);
        assert!(attention_weights(&one, 0.0).is_err());
        assert!(attention_weights(&one, f64::NAN).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let x = m(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let uni = uniform_weights(2).unwrap();
        let z = aggregate(&x, &uni, &Transform::Identity, Origin::Document).unwrap();
        assert_eq!(z.vector, [0.5, 0.5]);
        let first = WeightVector::new(vec![1.0, 0.0]).unwrap();
        let z = aggregate(&x, &first, &Transform::Identity, Origin::Document).unwrap();
        assert_eq!(z.vector, [1.0, 0.0]);
    }

    #[test]
    fn aggregate_matches_scalar_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let w = [0.2, 0.3, 0.5];
        let mut expected = [0.0f64; 4];
        for j in 0..4 {
            for t in 0..3 {
                expected[j] += w[t] * rows[t][j];
            }
        }
        let x = m(rows);
        let z = aggregate(
            &x,
            &WeightVector::new(w.to_vec()).unwrap(),
            &Transform::Identity,
            Origin::Document,
        )
        .unwrap();
        for (a, b) in z.vector.iter().zip(expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn affine_transform_shapes() {
        let t =
            Transform::from_json(r#"{"matrix": [[1, 0], [0, 2], [1, 1]], "offset": [0, 0, 1]}"#)
                .unwrap();
        let x = m(vec![vec![1.0, 2.0]]);
        let z = aggregate(&x, &uniform_weights(1).unwrap(), &t, Origin::Category).unwrap();
        assert_eq!(z.vector, [1.0, 4.0, 4.0]);
        let wide = m(vec![vec![1.0, 2.0, 3.0]]);
        assert!(matches!(
            aggregate(&wide, &uniform_weights(1).unwrap(), &t, Origin::Category),
            Err(AggregationError::TransformShape {
                expected: 2,
                found: 3
            })
        ));
        assert!(Transform::from_json(r#"{"matrix": [[1]], "offset": [0, 1]}"#).is_err());
    }

    #[test]
    fn errors() {
        let x = m(vec![vec![1.0], vec![2.0]]);
        assert!(matches!(
            aggregate(
                &x,
                &uniform_weights(3).unwrap(),
                &Transform::Identity,
                Origin::Document
            ),
            Err(AggregationError::LengthMismatch { .. })
        ));
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![1.5, -0.5]).is_err());
        let zero = PooledEmbedding::new(vec![0.0, 0.0], Origin::Document);
        assert!(matches!(
            zero.normalized(),
            Err(AggregationError::ZeroNorm(Origin::Document))
        ));
    }

    fn matrix_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..8, 1usize..6).prop_flat_map(|(t, e)| {
            proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, e), t)
        })
    }

    fn weights_for(t: usize, raw: &[f64]) -> WeightVector {
        let w: Vec<f64> = (0..t).map(|i| raw[i % raw.len()]).collect();
        let s: f64 = w.iter().sum();
        let mut w: Vec<f64> = w.iter().map(|v| v / s).collect();
        // Push rounding residue onto the last entry.
        let residue = 1.0 - w.iter().sum::<f64>();
        *w.last_mut().unwrap() += residue;
        WeightVector::new(w.into_iter().map(|v| v.max(0.0)).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn stays_in_row_bounds(rows in matrix_strategy(), raw in proptest::collection::vec(0.01f64..1.0, 1..8)) {
            let x = m(rows.clone());
            let w = weights_for(x.rows(), &raw);
            let z = aggregate(&x, &w, &Transform::Identity, Origin::Document).unwrap();
            for j in 0..x.cols() {
                let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(z.vector[j] >= lo - 1e-12 && z.vector[j] <= hi + 1e-12);
            }
        }

        #[test]
        fn permutation_invariant(rows in matrix_strategy(), raw in proptest::collection::vec(0.01f64..1.0, 1..8), shift in 0usize..8) {
            let t = rows.len();
            let w = weights_for(t, &raw);
            let z = aggregate(&m(rows.clone()), &w, &Transform::Identity, Origin::Document).unwrap();
            let perm: Vec<usize> = (0..t).map(|i| (i + shift) % t).collect();
            let prow: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
            let pw = WeightVector(perm.iter().map(|&i| w.as_slice()[i]).collect());
            let pz = aggregate(&m(prow), &pw, &Transform::Identity, Origin::Document).unwrap();
            for (a, b) in z.vector.iter().zip(&pz.vector) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn linear_in_matrix(rows in matrix_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0, seed: u64) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let other: Vec<Vec<f64>> = rows.iter()
                .map(|r| r.iter().map(|_| rng.random_range(-10.0..10.0)).collect())
                .collect();
            let mixed: Vec<Vec<f64>> = rows.iter().zip(&other)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect())
                .collect();
            let w = uniform_weights(rows.len()).unwrap();
            let zx = aggregate(&m(rows), &w, &Transform::Identity, Origin::Document).unwrap();
            let zy = aggregate(&m(other), &w, &Transform::Identity, Origin::Document).unwrap();
            let zm = aggregate(&m(mixed), &w, &Transform::Identity, Origin::Document).unwrap();
            for j in 0..zm.dim() {
                prop_assert!((zm.vector[j] - (a * zx.vector[j] + b * zy.vector[j])).abs() <= 1e-9);
            }
        }

        #[test]
        fn attention_is_convex(rows in matrix_strategy(), temp in 0.05f64..10.0) {
            let w = attention_weights(&m(rows), temp).unwrap();
            prop_assert!(w.as_slice().iter().all(|v| *v >= 0.0));
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
