use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::manifest::SlideManifest;
use crate::error::{Error, Result};
use crate::gma::Target;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Binary,
    Multiclass { k: usize },
    Regression,
    /// Per-tile classes from a `slide_id,x,y,<label_column>` sidecar.
    TileLevel { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    #[serde(flatten)]
    pub kind: TaskKind,
    pub label_column: String,
    /// Restrict to one manifest cohort; `None` uses every slide.
    #[serde(default)]
    pub cohort: Option<String>,
    /// Tile label CSV, required for tile-level tasks.
    #[serde(default)]
    pub tile_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EligibleSlide {
    pub slide_id: String,
    pub patient_id: Option<String>,
    /// `None` for tile-level tasks, whose labels live on tiles.
    pub target: Option<Target>,
}

/// Slides usable for a task, sorted by slide id, with class names in index
/// order for classification tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTargets {
    pub slides: Vec<EligibleSlide>,
    pub classes: Vec<String>,
}

impl TaskTargets {
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.slides {
            if let Some(Target::Class(c)) = s.target {
                counts[c] += 1;
            }
        }
        counts
    }
}

/// Sort numerically when every name parses as a number, else lexically.
pub fn order_classes(names: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut v: Vec<String> = names.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let nums: Option<Vec<f64>> = v.iter().map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite())).collect();
    if let Some(nums) = nums {
        let mut paired: Vec<(f64, String)> = nums.into_iter().zip(v).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        v = paired.into_iter().map(|p| p.1).collect();
    }
    v
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.task_id.is_empty() || self.task_id.contains(['/', '\\']) {
            return Err(Error::InvalidInput(format!("bad task id {:?}", self.task_id)));
        }
        match self.kind {
            TaskKind::Multiclass { k } | TaskKind::TileLevel { k } if k < 2 => {
                Err(Error::InvalidInput(format!("task {}: k = {k}, need at least 2", self.task_id)))
            }
            TaskKind::TileLevel { .. } if self.tile_labels.is_none() => {
                Err(Error::InvalidInput(format!("task {}: tile_labels path missing", self.task_id)))
            }
            _ => Ok(()),
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self.kind {
            TaskKind::Binary => Some(2),
            TaskKind::Multiclass { k } | TaskKind::TileLevel { k } => Some(k),
            TaskKind::Regression => None,
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self.kind {
            TaskKind::Binary => "auc",
            TaskKind::Multiclass { .. } | TaskKind::TileLevel { .. } => "macro_auc",
            TaskKind::Regression => "rmse",
        }
    }

    pub fn higher_is_better(&self) -> bool {
        !matches!(self.kind, TaskKind::Regression)
    }

    /// Eligible slides (cohort match and, for slide-level tasks, a label)
    /// with parsed targets.
    pub fn resolve(&self, manifest: &SlideManifest) -> Result<TaskTargets> {
        self.validate()?;
        let tile_level = matches!(self.kind, TaskKind::TileLevel { .. });
        if !tile_level && !manifest.label_columns.contains(&self.label_column) {
            return Err(Error::InvalidInput(format!(
                "task {}: manifest has no column {}",
                self.task_id, self.label_column
            )));
        }
        let mut rows: Vec<_> = manifest
            .slides
            .iter()
            .filter(|s| self.cohort.as_ref().is_none_or(|c| &s.cohort == c))
            .filter(|s| tile_level || s.labels.contains_key(&self.label_column))
            .collect();
        rows.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));

        let classes = match self.kind {
            TaskKind::Binary | TaskKind::Multiclass { .. } => {
                order_classes(rows.iter().map(|s| s.labels[&self.label_column].clone()))
            }
            _ => Vec::new(),
        };
        if let (Some(k), false) = (self.n_classes(), tile_level) {
            if classes.len() != k {
                return Err(Error::InfeasibleTask(format!(
                    "task {}: expected {k} classes in {}, found {:?}",
                    self.task_id, self.label_column, classes
                )));
            }
        }

        let mut slides = Vec::with_capacity(rows.len());
        for s in rows {
            let target = match self.kind {
                TaskKind::TileLevel { .. } => None,
                TaskKind::Regression => {
                    let raw = &s.labels[&self.label_column];
                    let v: f64 = raw.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                        Error::InvalidInput(format!("slide {}: {raw:?} is not a number", s.slide_id))
                    })?;
                    Some(Target::Value(v))
                }
                _ => {
                    let raw = &s.labels[&self.label_column];
                    Some(Target::Class(classes.iter().position(|c| c == raw).unwrap()))
                }
            };
            slides.push(EligibleSlide {
                slide_id: s.slide_id.clone(),
                patient_id: s.patient_id.clone(),
                target,
            });
        }
        Ok(TaskTargets { slides, classes })
    }
}
