//! Validation metrics: rank-based AUC (binary and macro one-vs-rest) and RMSE
//! on z-scored regression targets.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance on multiclass probability rows summing to one.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Mann–Whitney AUC, ties credited one half, via a sort and midranks.
///
/// Midranks are kept doubled so the whole computation is integer until the
/// final division: `AUC = (2·R⁺ − n⁺(n⁺+1)) / (2·n⁺·n⁻)`.
pub fn binary_auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidData("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // positions i..j share the midrank ((i+1) + j) / 2
        let midrank_x2 = (i + 1 + j) as u128;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum_x2 += midrank_x2 * pos_in_group;
        i = j;
    }
    let numerator = rank_sum_x2 - n_pos * (n_pos + 1);
    Ok(numerator as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAuc {
    pub value: f64,
    /// Per-class one-vs-rest AUC; `None` for classes that could not be scored.
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// Unweighted mean of one-vs-rest AUCs over classes present in `labels`.
///
/// `probs` is row-major `n × n_classes`, each row a probability vector.
pub fn macro_ovr_auc<T: Scalar>(probs: &[T], n_classes: usize, labels: &[usize]) -> Result<MacroAuc> {
    if n_classes < 2 {
        return Err(Error::InvalidInput("macro AUC needs at least two classes".into()));
    }
    if probs.len() != labels.len() * n_classes {
        return Err(Error::Shape(format!(
            "{} probabilities for {} rows of {} classes",
            probs.len(),
            labels.len(),
            n_classes
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidInput(format!("label {bad} out of range")));
    }
    for (i, row) in probs.chunks_exact(n_classes).enumerate() {
        let s: f64 = row.iter().map(|p| p.to_f64_lossy()).sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidInput(format!("row {i} sums to {s}")));
        }
    }
    let present = (0..n_classes).filter(|k| labels.contains(k)).count();
    if present < 2 {
        return Err(Error::UndefinedMetric("fewer than two classes present".into()));
    }

    let mut per_class = Vec::with_capacity(n_classes);
    let mut skipped = Vec::new();
    let mut column = Vec::with_capacity(labels.len());
    let mut is_k = Vec::with_capacity(labels.len());
    for k in 0..n_classes {
        column.clear();
        is_k.clear();
        column.extend(probs.chunks_exact(n_classes).map(|r| r[k]));
        is_k.extend(labels.iter().map(|&l| l == k));
        match binary_auc(&column, &is_k) {
            Ok(a) => per_class.push(Some(a)),
            Err(Error::UndefinedMetric(_)) => {
                per_class.push(None);
                skipped.push(k);
            }
            Err(e) => return Err(e),
        }
    }
    let scored: Vec<f64> = per_class.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::UndefinedMetric("no class could be scored".into()));
    }
    Ok(MacroAuc {
        value: scored.iter().sum::<f64>() / scored.len() as f64,
        per_class,
        skipped,
    })
}

/// Mean and (population) standard deviation of training-split targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std.is_finite() && std > 0.0) || !mean.is_finite() {
            return Err(Error::InvalidInput(format!("target stats mean {mean}, std {std}")));
        }
        Ok(Self { mean, std })
    }

    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("no training targets".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self::new(mean, var.sqrt())
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseUnits {
    Normalized,
    Original,
}

/// RMSE after z-scoring predictions and targets with training statistics;
/// `Original` reports it scaled back by `stats.std`.
pub fn rmse(preds: &[f64], targets: &[f64], stats: &TargetStats, units: RmseUnits) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("rmse of empty set".into()));
    }
    let mse = preds
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let e = stats.normalize(p) - stats.normalize(t);
            e * e
        })
        .sum::<f64>()
        / preds.len() as f64;
    let normalized = mse.sqrt();
    Ok(match units {
        RmseUnits::Normalized => normalized,
        RmseUnits::Original => normalized * stats.std,
    })
}
