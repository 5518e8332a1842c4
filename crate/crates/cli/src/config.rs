use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use milbench::mccv::{BenchConfig, Grouping, SplitConfig, TaskSpec};
use milbench::seed::sha256_hex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Optional overrides of the training defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    pub epochs: Option<usize>,
    pub hidden: Option<usize>,
    pub lr_peak: Option<f64>,
    pub weight_decay: Option<f64>,
    pub warmup_fraction: Option<f64>,
    pub balance_target: Option<usize>,
    pub runs_per_split: Option<usize>,
    pub probe_epochs: Option<usize>,
    pub probe_batch_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub feature_root: PathBuf,
    pub output_root: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    pub encoders: Vec<String>,
    #[serde(default)]
    pub grouping: Grouping,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub hyper: HyperOverrides,
    pub tasks: Vec<TaskSpec>,
}

impl RunConfig {
    /// Parse a TOML file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.manifest);
        fix(&mut cfg.feature_root);
        fix(&mut cfg.output_root);
        for t in &mut cfg.tasks {
            if let Some(p) = t.tile_labels.as_mut() {
                fix(p);
            }
        }
        Ok(cfg)
    }

    /// Checks that need no training: paths, ids and task definitions.
    pub fn validate(&self) -> Result<()> {
        if !self.manifest.is_file() {
            bail!("manifest {} not found", self.manifest.display());
        }
        if self.encoders.is_empty() {
            bail!("no encoders configured");
        }
        if self.tasks.is_empty() {
            bail!("no tasks configured");
        }
        for e in &self.encoders {
            if e.is_empty() || e.contains(['/', '\\']) || e.starts_with('.') {
                bail!("bad encoder id {e:?}");
            }
            if !self.feature_root.join(e).is_dir() {
                bail!("unknown encoder {e}: no directory {}", self.feature_root.join(e).display());
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tasks {
            t.validate()?;
            if !seen.insert(&t.task_id) {
                bail!("duplicate task id {}", t.task_id);
            }
            if let Some(p) = &t.tile_labels {
                if !p.is_file() {
                    bail!("task {}: tile labels {} not found", t.task_id, p.display());
                }
            }
        }
        if self.workers == Some(0) {
            bail!("workers must be positive");
        }
        Ok(())
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig { grouping: self.grouping, ..SplitConfig::default() }
    }

    pub fn bench_config(&self) -> BenchConfig {
        let mut b = BenchConfig::default();
        let h = &self.hyper;
        if let Some(v) = h.epochs {
            b.train.epochs = v;
        }
        if let Some(v) = h.hidden {
            b.train.hidden = v;
        }
        if let Some(v) = h.lr_peak {
            b.train.hyper.lr_peak = v;
            b.probe.hyper.lr_peak = v;
        }
        if let Some(v) = h.weight_decay {
            b.train.hyper.weight_decay = v;
            b.probe.hyper.weight_decay = v;
        }
        if let Some(v) = h.warmup_fraction {
            b.train.warmup_fraction = v;
            b.probe.warmup_fraction = v;
        }
        if let Some(v) = h.runs_per_split {
            b.runs_per_split = v;
        }
        if let Some(v) = h.probe_epochs {
            b.probe.epochs = v;
        }
        if let Some(v) = h.probe_batch_size {
            b.probe.batch_size = v;
        }
        b.balance_target = h.balance_target;
        b
    }

    /// Hash of everything that shapes the results (paths excluded).
    pub fn hash(&self) -> Result<String> {
        let key = serde_json::json!({
            "seed": self.seed,
            "encoders": self.encoders,
            "grouping": self.grouping,
            "precision": self.precision,
            "bench": self.bench_config(),
            "tasks": self.tasks.iter().map(|t| serde_json::json!({
                "task_id": t.task_id,
                "kind": t.kind,
                "label_column": t.label_column,
                "cohort": t.cohort,
            })).collect::<Vec<_>>(),
        });
        Ok(sha256_hex(&serde_json::to_vec(&key)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
manifest = "manifest.csv"
feature_root = "features"
output_root = "/abs/out"
seed = 7
encoders = ["a", "b"]
precision = "f32"

[hyper]
epochs = 3

[[tasks]]
task_id = "t"
kind = "binary"
label_column = "label"
"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.manifest, dir.path().join("manifest.csv"));
        assert_eq!(cfg.output_root, PathBuf::from("/abs/out"));
        assert_eq!(cfg.precision, Precision::F32);
        assert_eq!(cfg.bench_config().train.epochs, 3);
        assert_eq!(cfg.grouping, Grouping::Patient);
        assert!(cfg.validate().is_err());
        assert_eq!(cfg.hash().unwrap(), cfg.clone().hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "manifest='m'\nfeature_root='f'\noutput_root='o'\nencoders=[]\ntasks=[]\nbogus=1\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
