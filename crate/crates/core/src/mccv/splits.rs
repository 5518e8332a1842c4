use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::SlideManifest;
use super::task::{TaskSpec, TaskTargets};
use crate::error::{Error, Result};
use crate::gma::Target;
use crate::seed::{rng_from, sha256_hex};

pub const N_SPLITS: usize = 20;
pub const TRAIN_FRACTION: f64 = 0.8;
const MIN_ELIGIBLE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Patients never straddle train and validation; slides without a
    /// patient id form their own group.
    #[default]
    Patient,
    Slide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub n_splits: usize,
    pub train_fraction: f64,
    pub grouping: Grouping,
    /// Draws per split before giving up on class coverage.
    pub max_attempts: usize,
    /// Draws per split that insist on an exact train size before accepting
    /// the closest fill the grouping allows.
    pub exact_size_attempts: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            n_splits: N_SPLITS,
            train_fraction: TRAIN_FRACTION,
            grouping: Grouping::Patient,
            max_attempts: 1000,
            exact_size_attempts: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub index: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub task_id: String,
    pub seed: u64,
    pub grouping: Grouping,
    pub train_fraction: f64,
    pub n_eligible: usize,
    pub splits: Vec<Split>,
}

impl SplitPlan {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    /// SHA-256 of the serialized plan.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_json()?))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Split units: indices into `targets.slides`, in first-appearance order.
fn groups(targets: &TaskTargets, grouping: Grouping) -> Vec<Vec<usize>> {
    let mut by_key: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, s) in targets.slides.iter().enumerate() {
        let key = match (grouping, &s.patient_id) {
            (Grouping::Patient, Some(p)) => Some(p.as_str()),
            _ => None,
        };
        match key.and_then(|k| by_key.get(k).copied()) {
            Some(g) => out[g].push(i),
            None => {
                if let Some(k) = key {
                    by_key.insert(k, out.len());
                }
                out.push(vec![i]);
            }
        }
    }
    out
}

fn covers(targets: &TaskTargets, side: &[usize], need: usize) -> bool {
    let mut seen = vec![false; targets.classes.len()];
    for &i in side {
        if let Some(Target::Class(c)) = targets.slides[i].target {
            seen[c] = true;
        }
    }
    seen.iter().filter(|&&b| b).count() >= need
}

/// Monte-Carlo train/validation partitions shared by every encoder.
///
/// Each draw shuffles the grouping units and fills the training side greedily
/// up to `round(train_fraction · N)` slides, skipping units that would
/// overflow. Draws are rejected until classification tasks have every class
/// in training and at least two classes in validation.
pub fn make_splits(manifest: &SlideManifest, task: &TaskSpec, seed: u64) -> Result<SplitPlan> {
    make_splits_with(manifest, task, seed, &SplitConfig::default())
}

pub fn make_splits_with(manifest: &SlideManifest, task: &TaskSpec, seed: u64, cfg: &SplitConfig) -> Result<SplitPlan> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) || cfg.n_splits == 0 {
        return Err(Error::InvalidInput("train_fraction must be in (0, 1) and n_splits positive".into()));
    }
    let targets = task.resolve(manifest)?;
    let n = targets.slides.len();
    if n < MIN_ELIGIBLE {
        return Err(Error::InfeasibleTask(format!(
            "task {}: {n} eligible slides, need {MIN_ELIGIBLE}",
            task.task_id
        )));
    }
    let counts = targets.class_counts();
    if let Some(c) = counts.iter().position(|&c| c < 2).filter(|_| !targets.classes.is_empty()) {
        return Err(Error::InfeasibleTask(format!(
            "task {}: class {} has {} slide(s)",
            task.task_id, targets.classes[c], counts[c]
        )));
    }
    let n_train = (cfg.train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InfeasibleTask(format!("task {}: {n} slides cannot be split", task.task_id)));
    }
    let units = groups(&targets, cfg.grouping);
    let k = targets.classes.len();
    let mut rng = rng_from(&[b"splits", task.task_id.as_bytes(), &seed.to_le_bytes()]);

    let mut splits = Vec::with_capacity(cfg.n_splits);
    for index in 0..cfg.n_splits {
        let mut order: Vec<usize> = (0..units.len()).collect();
        let mut accepted = None;
        for attempt in 0..cfg.max_attempts {
            order.shuffle(&mut rng);
            let mut in_train = vec![false; n];
            let mut size = 0;
            for &g in &order {
                if size + units[g].len() <= n_train {
                    size += units[g].len();
                    for &i in &units[g] {
                        in_train[i] = true;
                    }
                }
            }
            if size != n_train && attempt < cfg.exact_size_attempts {
                continue;
            }
            let train: Vec<usize> = (0..n).filter(|&i| in_train[i]).collect();
            let val: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
            if val.is_empty() || (k > 0 && !(covers(&targets, &train, k) && covers(&targets, &val, 2))) {
                continue;
            }
            accepted = Some((train, val));
            break;
        }
        let (train, val) = accepted.ok_or_else(|| {
            Error::InfeasibleSplit(format!(
                "task {}: split {index} found no valid partition in {} draws",
                task.task_id, cfg.max_attempts
            ))
        })?;
        let ids = |v: Vec<usize>| v.into_iter().map(|i| targets.slides[i].slide_id.clone()).collect();
        splits.push(Split { index, train_ids: ids(train), val_ids: ids(val) });
    }
    Ok(SplitPlan {
        task_id: task.task_id.clone(),
        seed,
        grouping: cfg.grouping,
        train_fraction: cfg.train_fraction,
        n_eligible: n,
        splits,
    })
}

/// Resample `items` so every class contributes exactly `target` entries
/// (default: the smallest class count). Larger classes are subsampled
/// without replacement; smaller ones keep every item and top up with
/// replacement. The result is shuffled.
pub fn balance_classes<I: Clone, R: Rng>(
    items: &[I],
    labels: &[usize],
    n_classes: usize,
    target: Option<usize>,
    rng: &mut R,
) -> Result<Vec<I>> {
    if items.len() != labels.len() {
        return Err(Error::Shape(format!("{} items vs {} labels", items.len(), labels.len())));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class
            .get_mut(l)
            .ok_or_else(|| Error::InvalidInput(format!("label {l} out of range for {n_classes} classes")))?
            .push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::InfeasibleSplit(format!("class {c} has no training items")));
    }
    let target = target.unwrap_or_else(|| by_class.iter().map(Vec::len).min().unwrap_or(0));
    if target == 0 {
        return Err(Error::InvalidInput("balance target must be positive".into()));
    }
    let mut out = Vec::with_capacity(target * n_classes);
    for members in &by_class {
        if members.len() >= target {
            out.extend(index::sample(rng, members.len(), target).into_iter().map(|j| members[j]));
        } else {
            out.extend_from_slice(members);
            out.extend((members.len()..target).map(|_| members[rng.gen_range(0..members.len())]));
        }
    }
    out.shuffle(rng);
    Ok(out.into_iter().map(|i| items[i].clone()).collect())
}
