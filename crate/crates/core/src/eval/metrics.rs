use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Pristine (negative) and degraded (positive) scores of one comparison.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        let s = Self { id_scores, ood_scores };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.id_scores.is_empty(), Validation, "score set has no in-distribution scores");
        ensure!(!self.ood_scores.is_empty(), Validation, "score set has no degraded scores");
        ensure!(
            self.id_scores.iter().chain(&self.ood_scores).all(|v| v.is_finite()),
            Validation,
            "score set contains non-finite scores"
        );
        Ok(())
    }

    /// Classes swapped.
    pub fn swapped(&self) -> Self {
        Self {
            id_scores: self.ood_scores.clone(),
            ood_scores: self.id_scores.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            id_scores: self.id_scores.iter().map(|&v| f(v)).collect(),
            ood_scores: self.ood_scores.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Mann–Whitney AUROC with degraded as the positive class, ties counted half.
///
/// Computed from midrank sums; equal to `(wins + ties/2) / (n_id·n_ood)`.
pub fn auroc(s: &ScoreSet) -> Result<f64> {
    s.validate()?;
    let (n0, n1) = (s.id_scores.len(), s.ood_scores.len());
    let mut all: Vec<(f64, bool)> = s
        .id_scores
        .iter()
        .map(|&v| (v, false))
        .chain(s.ood_scores.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the rank sum keeps midranks integral
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, midrank*2 = i+j+2
        let mid_x2 = (i + j + 2) as u128;
        let pos = all[i..=j].iter().filter(|e| e.1).count() as u128;
        rank_sum_x2 += mid_x2 * pos;
        i = j + 1;
    }
    let (n0, n1) = (n0 as u128, n1 as u128);
    // U*2 = 2·R1 − n1(n1+1)
    let u_x2 = rank_sum_x2 - n1 * (n1 + 1);
    Ok(u_x2 as f64 / (2 * n0 * n1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatingPoint {
    /// False-positive rate at 95% true-positive rate.
    Tpr95,
    /// False-negative rate at 95% true-negative rate.
    Tnr95,
}

/// Error rate of one class at the threshold where the other class first
/// reaches 95% correct decisions. A sample is flagged degraded when its
/// score is at or above the threshold; no interpolation.
pub fn rate_at_operating_point(s: &ScoreSet, op: OperatingPoint) -> Result<f64> {
    s.validate()?;
    match op {
        OperatingPoint::Tpr95 => Ok(fpr_at_tpr(&s.id_scores, &s.ood_scores, 0.95)),
        OperatingPoint::Tnr95 => {
            let neg_ood: Vec<f64> = s.ood_scores.iter().map(|v| -v).collect();
            let neg_id: Vec<f64> = s.id_scores.iter().map(|v| -v).collect();
            Ok(fpr_at_tpr(&neg_ood, &neg_id, 0.95))
        }
    }
}

fn fpr_at_tpr(neg: &[f64], pos: &[f64], target: f64) -> f64 {
    let mut sorted = pos.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // the k-th largest positive score is the highest threshold with TPR ≥ target
    let k = ((target * pos.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let threshold = sorted[k.min(sorted.len()) - 1];
    neg.iter().filter(|&&v| v >= threshold).count() as f64 / neg.len() as f64
}

/// `(x − mean) / std`.
pub fn z_score_normalize(scores: &[f64], mean: f64, std: f64) -> Result<Vec<f64>> {
    ensure!(std > 0.0 && std.is_finite(), Validation, "reference std must be positive, got {std}");
    Ok(scores.iter().map(|v| (v - mean) / std).collect())
}

/// Mean and population std of the pooled scores.
pub fn pooled_stats(s: &ScoreSet) -> (f64, f64) {
    let all: Vec<f64> = s.id_scores.iter().chain(&s.ood_scores).copied().collect();
    crate::flow::mean_std(&all)
}
