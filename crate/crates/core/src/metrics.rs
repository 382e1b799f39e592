//! Scores for an estimated transition matrix against the ground truth.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Absolute value above which an entry counts as an edge.
pub const EDGE_THRESHOLD: f64 = 1e-10;

/// Relative Frobenius error `‖Â − A‖_F / ‖A‖_F`.
pub fn rmse(a_hat: &Mat, a_true: &Mat) -> Result<f64> {
    if a_hat.shape() != a_true.shape() {
        return Err(Error::Dimension("rmse needs matrices of equal shape".into()));
    }
    let reference = a_true.norm();
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((a_hat - a_true).norm() / reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectionScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_matrices(a_hat: &Mat, a_true: &Mat, threshold: f64) -> Result<Self> {
        if a_hat.shape() != a_true.shape() {
            return Err(Error::Dimension("detection needs matrices of equal shape".into()));
        }
        let mut c = Confusion::default();
        for (est, truth) in a_hat.iter().zip(a_true.iter()) {
            match (est.abs() > threshold, truth.abs() > threshold) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    /// Ratios with an empty denominator count as perfect (nothing to get wrong).
    pub fn scores(&self, threshold: f64) -> DetectionScores {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        DetectionScores {
            accuracy: ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_),
            precision,
            recall,
            specificity: ratio(self.tn, self.tn + self.fp),
            f1,
            threshold,
        }
    }
}

/// Edge-detection scores over all `Nx²` entries.
pub fn detection(a_hat: &Mat, a_true: &Mat, threshold: f64) -> Result<DetectionScores> {
    Ok(Confusion::from_matrices(a_hat, a_true, threshold)?.scores(threshold))
}
