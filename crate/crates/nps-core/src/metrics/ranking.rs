//! Latent-space ranking metrics.
//!
//! Each prediction row is ranked against every reference row by squared
//! Euclidean distance; the matching reference (same row index) should come
//! first. Ties count against the hit (pessimistic rank), which makes the
//! metrics deterministic and conservative.

use crate::array::Array;
use crate::error::{CoreError, Result};

/// Predicted state vectors paired row-for-row with the encoded true states
/// of the same batch; row n of `references` is ground truth for row n of
/// `predictions`.
#[derive(Clone, Debug)]
pub struct RankingBatch {
    predictions: Array,
    references: Array,
}

impl RankingBatch {
    pub fn new(predictions: Array, references: Array) -> Result<Self> {
        if predictions.rows() != references.rows() || predictions.cols() != references.cols() {
            return Err(CoreError::Usage {
                op: "ranking_batch",
                detail: format!(
                    "predictions {} vs references {}",
                    predictions.shape_string(),
                    references.shape_string()
                ),
            });
        }
        if predictions.rows() == 0 {
            return Err(CoreError::Usage { op: "ranking_batch", detail: "empty batch".into() });
        }
        Ok(RankingBatch { predictions, references })
    }

    pub fn len(&self) -> usize {
        self.predictions.rows()
    }

    fn sq_dist(&self, pred_row: usize, ref_row: usize) -> f64 {
        self.predictions
            .row(pred_row)
            .iter()
            .zip(self.references.row(ref_row).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Pessimistic rank of the true reference for each prediction: one plus
    /// the number of other references at distance <= the true one's.
    pub fn ranks(&self) -> Vec<usize> {
        (0..self.len())
            .map(|n| {
                let own = self.sq_dist(n, n);
                1 + (0..self.len()).filter(|m| *m != n && self.sq_dist(n, *m) <= own).count()
            })
            .collect()
    }
}

/// Fraction of predictions whose true reference is ranked first.
pub fn hits_at_1(batch: &RankingBatch) -> f64 {
    let ranks = batch.ranks();
    ranks.iter().filter(|r| **r == 1).count() as f64 / ranks.len() as f64
}

/// Mean reciprocal rank of the true references.
pub fn mrr(batch: &RankingBatch) -> f64 {
    let ranks = batch.ranks();
    ranks.iter().map(|r| 1.0 / *r as f64).sum::<f64>() / ranks.len() as f64
}
