//! Ranks, cumulative match curves and their area.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Dense probe × subject score matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, EvalError> {
        if data.len() != rows * cols {
            return Err(EvalError::ShapeMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(ScoreMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EvalError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(EvalError::ShapeMismatch {
                expected: cols,
                actual: r.len(),
            });
        }
        ScoreMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// 1-based rank of each probe's true subject.
///
/// Ties are broken by ascending subject index: a subject tied with the true
/// one outranks it only if its index is smaller.
pub fn ranks_from_scores(
    scores: &ScoreMatrix,
    higher_is_better: bool,
    true_labels: &[usize],
) -> Result<Vec<usize>, EvalError> {
    if true_labels.len() != scores.rows {
        return Err(EvalError::ShapeMismatch {
            expected: scores.rows,
            actual: true_labels.len(),
        });
    }
    let mut ranks = Vec::with_capacity(scores.rows);
    for (i, &label) in true_labels.iter().enumerate() {
        if label >= scores.cols {
            return Err(EvalError::LabelOutOfRange {
                label,
                subjects: scores.cols,
            });
        }
        let row = scores.row(i);
        if row.iter().any(|v| v.is_nan()) {
            return Err(EvalError::NanScore(i));
        }
        let t = row[label];
        let beats = |j: usize, v: f64| {
            let better = if higher_is_better { v > t } else { v < t };
            better || (v == t && j < label)
        };
        let ahead = row.iter().enumerate().filter(|&(j, &v)| beats(j, v)).count();
        ranks.push(ahead + 1);
    }
    Ok(ranks)
}

/// Cumulative match curve in percent; `values[k-1]` is the share of probes ranked ≤ k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CmcCurve {
    pub values: Vec<f64>,
}

impl CmcCurve {
    pub fn rank(&self, k: usize) -> f64 {
        self.values[k.clamp(1, self.values.len()) - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,percent\n");
        for (k, v) in self.values.iter().enumerate() {
            s.push_str(&format!("{},{}\n", k + 1, v));
        }
        s
    }
}

pub fn cmc(ranks: &[usize], num_subjects: usize) -> Result<CmcCurve, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyRanks);
    }
    let mut hist = vec![0usize; num_subjects];
    for &r in ranks {
        if r == 0 || r > num_subjects {
            return Err(EvalError::RankOutOfRange { rank: r, subjects: num_subjects });
        }
        hist[r - 1] += 1;
    }
    let total = ranks.len() as f64;
    let mut cumulative = 0usize;
    let values = hist
        .into_iter()
        .map(|h| {
            cumulative += h;
            100.0 * cumulative as f64 / total
        })
        .collect();
    Ok(CmcCurve { values })
}

/// Rectangular-rule area under the curve: the mean of its values, in percent.
pub fn aucmc(curve: &CmcCurve) -> f64 {
    if curve.values.is_empty() {
        return 0.0;
    }
    curve.values.iter().sum::<f64>() / curve.values.len() as f64
}
