use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ClassificationTable, ReportError};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryCount {
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Aggregate statistics over a classification table.
///
/// `per_category` follows category-set order and lists every category,
/// including those with no rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub total: usize,
    pub per_category: IndexMap<String, CategoryCount>,
    pub confidence: ConfidenceSummary,
}

pub fn summarize(table: &ClassificationTable) -> Result<SummaryStats, ReportError> {
    if table.is_empty() {
        return Err(ReportError::EmptyTable);
    }
    let total = table.len();
    let mut counts: IndexMap<String, usize> = table
        .category_set
        .iter()
        .map(|c| (c.key.clone(), 0))
        .collect();
    for row in &table.rows {
        *counts.entry(row.category_key.clone()).or_insert(0) += 1;
    }
    let per_category = counts
        .into_iter()
        .map(|(k, count)| {
            let fraction = count as f64 / total as f64;
            (k, CategoryCount { count, fraction })
        })
        .collect();

    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for c in table.confidences() {
        min = min.min(c);
        max = max.max(c);
        sum += c;
    }
    let mean = (sum / total as f64).clamp(min, max);
    Ok(SummaryStats {
        total,
        per_category,
        confidence: ConfidenceSummary { min, max, mean },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_count: usize,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bin_count as f64
    }

    /// Lower and upper edge of bin `i`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let w = self.width();
        let lo = self.lo + i as f64 * w;
        let hi = if i + 1 == self.bin_count {
            self.hi
        } else {
            self.lo + (i + 1) as f64 * w
        };
        (lo, hi)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Bins `values` into `bin_count` equal-width bins over `[lo, hi]`.
/// Bins are half-open except the last, which includes `hi`.
pub fn histogram(
    values: &[f64],
    bin_count: usize,
    lo: f64,
    hi: f64,
) -> Result<Histogram, ReportError> {
    if bin_count == 0 {
        return Err(ReportError::Histogram(
            "bin count must be at least 1".into(),
        ));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(ReportError::Histogram(format!(
            "invalid range [{lo}, {hi}]"
        )));
    }
    let mut h = Histogram {
        bin_count,
        lo,
        hi,
        counts: vec![0; bin_count],
    };
    let w = h.width();
    for &v in values {
        if !(v >= lo && v <= hi) {
            return Err(ReportError::Histogram(format!(
                "value {v} outside [{lo}, {hi}]"
            )));
        }
        let mut i = (((v - lo) / w).floor() as usize).min(bin_count - 1);
        // Division can land one bin off near an edge; settle against the edges themselves.
        while i > 0 && v < h.edges(i).0 {
            i -= 1;
        }
        while i + 1 < bin_count && v >= h.edges(i + 1).0 {
            i += 1;
        }
        h.counts[i] += 1;
    }
    Ok(h)
}
