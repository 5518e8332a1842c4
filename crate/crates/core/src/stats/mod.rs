//! Paired nonparametric comparison of encoders across split distributions.

mod bh;
mod report;
mod wilcoxon;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bh::bh_adjust;
pub use report::{
    compare, write_rank_heatmap, write_report_json, write_sig_matrix, write_win_tie_loss, BhFamily,
    CompareConfig, ComparisonReport, PairRecord, ReportMetadata, SkippedTask, TaskReport, VerdictRecord,
    WtlCounts,
};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult, EXACT_MAX_N, MIN_PAIRED};

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const STRONG_ALPHA: f64 = 0.01;

/// Per-split metric values of one encoder on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderDistribution {
    pub encoder_id: String,
    pub values: Vec<f64>,
}

/// All encoders' split distributions for a task, paired by split index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistributions {
    pub task_id: String,
    pub metric: String,
    pub higher_is_better: bool,
    pub encoders: Vec<EncoderDistribution>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Win,
    Tie,
    Loss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
    #[serde(rename = "none")]
    None,
}

impl Sign {
    pub fn as_str(self) -> &'static str {
        match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
            Sign::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    /// Below the strong threshold (0.01 by default).
    Strong,
    /// Between the strong threshold and alpha.
    Weak,
    Ns,
}

impl Bucket {
    pub fn of(p_adj: f64, alpha: f64, strong: f64) -> Self {
        if p_adj < strong {
            Bucket::Strong
        } else if p_adj < alpha {
            Bucket::Weak
        } else {
            Bucket::Ns
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigEntry {
    pub row: String,
    pub col: String,
    pub sign: Sign,
    pub bucket: Bucket,
    pub p_adj: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    /// Indices into [`TaskComparison::encoders`], `a < b`.
    pub a: usize,
    pub b: usize,
    /// `None` when every paired difference is zero.
    pub test: Option<WilcoxonResult>,
    pub p_raw: f64,
    pub p_adj: f64,
}

/// Pairwise tests for one task with encoders sorted best-first.
///
/// Sorting is by mean metric in the task's direction, then by encoder id.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskComparison {
    pub task_id: String,
    pub metric: String,
    pub higher_is_better: bool,
    pub encoders: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub n_splits: usize,
    pairs: Vec<PairTest>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl TaskComparison {
    /// Runs every pairwise test and applies BH within the task. Degenerate
    /// pairs get p = 1 and stay outside the correction family.
    pub fn new(task: &TaskDistributions) -> Result<Self> {
        let k = task.encoders.len();
        if k < 2 {
            return Err(Error::InvalidInput(format!("task {} has {k} encoder(s), need 2", task.task_id)));
        }
        let n = task.encoders[0].values.len();
        if let Some(e) = task.encoders.iter().find(|e| e.values.len() != n) {
            return Err(Error::InvalidInput(format!(
                "task {}: encoder {} has {} splits, expected {n}",
                task.task_id,
                e.encoder_id,
                e.values.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(e) = task.encoders.iter().find(|e| !seen.insert(&e.encoder_id)) {
            return Err(Error::InvalidInput(format!("duplicate encoder {}", e.encoder_id)));
        }
        if task.encoders.iter().flat_map(|e| &e.values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("task {}: non-finite metric", task.task_id)));
        }

        let stats: Vec<(f64, f64)> = task.encoders.iter().map(|e| mean_std(&e.values)).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| {
            let by_mean = stats[i].0.total_cmp(&stats[j].0);
            let by_mean = if task.higher_is_better { by_mean.reverse() } else { by_mean };
            by_mean.then_with(|| task.encoders[i].encoder_id.cmp(&task.encoders[j].encoder_id))
        });

        let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
        for a in 0..k {
            for b in a + 1..k {
                let (x, y) = (&task.encoders[order[a]].values, &task.encoders[order[b]].values);
                let test = match wilcoxon_signed_rank(x, y) {
                    Ok(t) => Some(t),
                    Err(Error::DegeneratePair) => None,
                    Err(e) => return Err(e),
                };
                let p_raw = test.map_or(1.0, |t| t.p_two_sided);
                pairs.push(PairTest { a, b, test, p_raw, p_adj: 1.0 });
            }
        }
        let mut cmp = Self {
            task_id: task.task_id.clone(),
            metric: task.metric.clone(),
            higher_is_better: task.higher_is_better,
            encoders: order.iter().map(|&i| task.encoders[i].encoder_id.clone()).collect(),
            means: order.iter().map(|&i| stats[i].0).collect(),
            stds: order.iter().map(|&i| stats[i].1).collect(),
            n_splits: n,
            pairs,
        };
        let adj = bh_adjust(&cmp.family_pvalues())?;
        cmp.set_adjusted(&adj);
        Ok(cmp)
    }

    /// Raw p-values of the non-degenerate pairs, in pair order.
    pub fn family_pvalues(&self) -> Vec<f64> {
        self.pairs.iter().filter(|p| p.test.is_some()).map(|p| p.p_raw).collect()
    }

    /// Replace adjusted p-values of the non-degenerate pairs, in the order of
    /// [`Self::family_pvalues`].
    pub fn set_adjusted(&mut self, adjusted: &[f64]) {
        let mut it = adjusted.iter();
        for p in self.pairs.iter_mut().filter(|p| p.test.is_some()) {
            p.p_adj = *it.next().expect("one adjusted value per tested pair");
        }
    }

    pub fn pairs(&self) -> &[PairTest] {
        &self.pairs
    }

    pub fn index_of(&self, encoder_id: &str) -> Option<usize> {
        self.encoders.iter().position(|e| e == encoder_id)
    }

    fn pair(&self, i: usize, j: usize) -> &PairTest {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        let k = self.encoders.len();
        // row-major upper triangle
        let idx = a * (2 * k - a - 1) / 2 + (b - a - 1);
        &self.pairs[idx]
    }

    pub fn p_adj(&self, i: usize, j: usize) -> f64 {
        self.pair(i, j).p_adj
    }

    /// Whether encoder `i` has a better mean than `j`, in the task's direction.
    pub fn better(&self, i: usize, j: usize) -> Ordering {
        let o = self.means[i].total_cmp(&self.means[j]);
        if self.higher_is_better {
            o
        } else {
            o.reverse()
        }
    }

    /// Ranks aligned with [`Self::encoders`].
    pub fn ranks(&self, alpha: f64) -> Vec<u32> {
        shared_ranks(self.encoders.len(), |leader, i| self.p_adj(leader, i) < alpha)
    }

    /// Verdict for `focal` against its best competitor, with that competitor's
    /// index and the adjusted p-value.
    pub fn verdict(&self, focal: usize, alpha: f64) -> (Verdict, usize, f64) {
        let rival = if focal == 0 { 1 } else { 0 };
        let p = self.p_adj(focal, rival);
        let v = match self.better(focal, rival) {
            _ if p >= alpha => Verdict::Tie,
            Ordering::Greater => Verdict::Win,
            Ordering::Less => Verdict::Loss,
            Ordering::Equal => Verdict::Tie,
        };
        (v, rival, p)
    }

    /// Off-diagonal entries in row-major order over the sorted encoders.
    pub fn matrix(&self, alpha: f64, strong: f64) -> Vec<SigEntry> {
        let k = self.encoders.len();
        let mut out = Vec::with_capacity(k * (k - 1));
        for r in 0..k {
            for c in 0..k {
                if r == c {
                    continue;
                }
                let p = self.p_adj(r, c);
                let sign = match self.better(r, c) {
                    _ if p >= alpha => Sign::None,
                    Ordering::Greater => Sign::Plus,
                    Ordering::Less => Sign::Minus,
                    Ordering::Equal => Sign::None,
                };
                out.push(SigEntry {
                    row: self.encoders[r].clone(),
                    col: self.encoders[c].clone(),
                    sign,
                    bucket: Bucket::of(p, alpha, strong),
                    p_adj: p,
                });
            }
        }
        out
    }
}

/// Greedy significance-shared ranking over `n` items already sorted best
/// first. A new group starts when `significant(leader, i)` holds for the
/// current group's leader; groups are numbered 1, 2, 3, …
pub fn shared_ranks(n: usize, significant: impl Fn(usize, usize) -> bool) -> Vec<u32> {
    let mut ranks = Vec::with_capacity(n);
    let mut leader = 0;
    let mut rank = 1;
    for i in 0..n {
        if i > 0 && significant(leader, i) {
            rank += 1;
            leader = i;
        }
        ranks.push(rank);
    }
    ranks
}

/// Rank per encoder id with per-task BH correction.
pub fn rank_with_significance(task: &TaskDistributions, alpha: f64) -> Result<BTreeMap<String, u32>> {
    let cmp = TaskComparison::new(task)?;
    Ok(cmp.encoders.iter().cloned().zip(cmp.ranks(alpha)).collect())
}

pub fn win_tie_loss(task: &TaskDistributions, focal: &str, alpha: f64) -> Result<Verdict> {
    let cmp = TaskComparison::new(task)?;
    let i = cmp
        .index_of(focal)
        .ok_or_else(|| Error::InvalidInput(format!("unknown encoder {focal}")))?;
    Ok(cmp.verdict(i, alpha).0)
}

pub fn significance_matrix(task: &TaskDistributions, alpha: f64, strong: f64) -> Result<Vec<SigEntry>> {
    Ok(TaskComparison::new(task)?.matrix(alpha, strong))
}
