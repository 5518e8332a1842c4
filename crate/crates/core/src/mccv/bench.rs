use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::splits::{balance_classes, Split, SplitPlan};
use super::task::{order_classes, TaskKind, TaskSpec, TaskTargets};
use crate::error::{Error, Result};
use crate::featstore::{feature_path, read_features, FeatureMatrix};
use crate::gma::{train_slide_model, Bag, HeadKind, Target, TrainConfig};
use crate::metrics::{rmse, RmseUnits, TargetStats};
use crate::preprocess::TileCoord;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from, sha256_hex};
use crate::stats::{EncoderDistribution, TaskDistributions};
use crate::tileprobe::{probe_train, ProbeConfig, TileSet};

pub const RUNS_PER_SPLIT: usize = 2;

/// Where per-slide feature matrices come from.
pub trait FeatureSource: Sync {
    fn load(&self, encoder_id: &str, slide_id: &str) -> Result<FeatureMatrix>;
}

/// `<root>/<encoder>/<slide>.milf` files.
#[derive(Debug, Clone)]
pub struct DirSource {
    pub root: PathBuf,
}

impl DirSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl FeatureSource for DirSource {
    fn load(&self, encoder_id: &str, slide_id: &str) -> Result<FeatureMatrix> {
        let path = feature_path(&self.root, encoder_id, slide_id);
        if !path.is_file() {
            return Err(Error::MissingFeatures(slide_id.to_string()));
        }
        read_features(&path)
    }
}

/// Feature matrices held in memory, keyed by `(encoder, slide)`.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    map: HashMap<(String, String), FeatureMatrix>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, m: FeatureMatrix) {
        self.map.insert((m.encoder_id.clone(), m.slide_id.clone()), m);
    }
}

impl FeatureSource for MemorySource {
    fn load(&self, encoder_id: &str, slide_id: &str) -> Result<FeatureMatrix> {
        self.map
            .get(&(encoder_id.to_string(), slide_id.to_string()))
            .cloned()
            .ok_or_else(|| Error::MissingFeatures(slide_id.to_string()))
    }
}

/// Per-tile labels: slide id → tile coordinate → label text.
pub type TileLabels = BTreeMap<String, BTreeMap<TileCoord, String>>;

/// Read `slide_id,x,y,<label_column>`; other columns are ignored and empty
/// labels skipped.
pub fn read_tile_labels<R: Read>(reader: R, label_column: &str) -> Result<TileLabels> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("tile label file lacks column {name}")))
    };
    let (si, xi, yi, li) = (col("slide_id")?, col("x")?, col("y")?, col(label_column)?);
    let mut out = TileLabels::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let label = field(li);
        if label.is_empty() {
            continue;
        }
        let parse = |i: usize| {
            field(i)
                .parse::<u32>()
                .map_err(|_| Error::Format(format!("tile label row {}: bad coordinate {:?}", line + 2, field(i))))
        };
        let coord = TileCoord { x: parse(xi)?, y: parse(yi)? };
        out.entry(field(si).to_string()).or_default().insert(coord, label.to_string());
    }
    Ok(out)
}

pub fn read_tile_labels_file(path: &Path, label_column: &str) -> Result<TileLabels> {
    read_tile_labels(std::fs::File::open(path)?, label_column)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    /// Per-class count after rebalancing; `None` uses the smallest class.
    pub balance_target: Option<usize>,
    pub runs_per_split: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig { track_validation: false, ..TrainConfig::default() },
            probe: ProbeConfig::default(),
            balance_target: None,
            runs_per_split: RUNS_PER_SPLIT,
        }
    }
}

impl BenchConfig {
    /// Hash of the settings that change run results, including the scalar width.
    pub fn hash<T: Scalar>(&self) -> Result<String> {
        let mut bytes = serde_json::to_vec(self).map_err(|e| Error::Format(e.to_string()))?;
        bytes.extend_from_slice(std::any::type_name::<T>().as_bytes());
        Ok(sha256_hex(&bytes))
    }
}

/// One training run on one split, persisted for audit and reuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub encoder_id: String,
    pub split: usize,
    pub run: usize,
    pub seed: u64,
    pub plan_hash: String,
    pub config_hash: String,
    pub value: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRow {
    pub split: usize,
    pub runs: Vec<Option<f64>>,
    /// Mean of the runs; `None` when any run failed.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub task_id: String,
    pub encoder_id: String,
    pub metric: String,
    pub higher_is_better: bool,
    pub plan_hash: String,
    pub plan_seed: u64,
    pub config_hash: String,
    pub version: String,
    pub n_splits: usize,
    pub n_valid: usize,
    pub complete: bool,
    pub failed_splits: Vec<usize>,
}

/// Per-split metric values for one (task, encoder) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub meta: TableMeta,
    pub rows: Vec<SplitRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl MetricTable {
    pub fn valid_values(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.value).collect()
    }

    /// Mean and population standard deviation over valid splits.
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.valid_values())
    }

    /// `task,encoder,split,run0,run1,value` then `mean` and `std` summary rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let runs = self.rows.iter().map(|r| r.runs.len()).max().unwrap_or(RUNS_PER_SPLIT);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["task".to_string(), "encoder".into(), "split".into()];
        header.extend((0..runs).map(|r| format!("run{r}")));
        header.push("value".into());
        w.write_record(&header)?;
        let (task, enc) = (&self.meta.task_id, &self.meta.encoder_id);
        for row in &self.rows {
            let mut rec = vec![task.clone(), enc.clone(), row.split.to_string()];
            rec.extend((0..runs).map(|r| cell(row.runs.get(r).copied().flatten())));
            rec.push(cell(row.value));
            w.write_record(&rec)?;
        }
        let (mean, std) = self.mean_std();
        for (name, v) in [("mean", mean), ("std", std)] {
            let mut rec = vec![task.clone(), enc.clone(), name.to_string()];
            rec.extend((0..runs).map(|_| String::new()));
            rec.push(if v.is_finite() { v.to_string() } else { String::new() });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Write `<path>` and the `<path>.meta.json` sidecar.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        let mut meta = serde_json::to_vec_pretty(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        meta.push(b'\n');
        std::fs::write(meta_path(path), meta)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: TableMeta = serde_json::from_slice(&std::fs::read(meta_path(path))?)
            .map_err(|e| Error::Format(format!("{}: {e}", meta_path(path).display())))?;
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        let headers = r.headers()?.clone();
        let runs = headers.iter().filter(|h| h.starts_with("run")).count();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let Ok(split) = rec.get(2).unwrap_or("").parse::<usize>() else {
                continue;
            };
            let num = |i: usize| -> Result<Option<f64>> {
                let s = rec.get(i).unwrap_or("").trim();
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse().map(Some).map_err(|_| Error::Format(format!("bad value {s:?} in {}", path.display())))
            };
            let run_vals = (0..runs).map(|k| num(3 + k)).collect::<Result<Vec<_>>>()?;
            rows.push(SplitRow { split, runs: run_vals, value: num(3 + runs)? });
        }
        Ok(Self { meta, rows })
    }
}

pub fn meta_path(table: &Path) -> PathBuf {
    let mut s = table.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Group tables by task into paired distributions for significance testing.
/// Only splits valid for every encoder of a task are kept so the pairs line
/// up; tables built on different split plans are rejected.
pub fn task_distributions(tables: &[MetricTable]) -> Result<Vec<TaskDistributions>> {
    let mut by_task: BTreeMap<&str, Vec<&MetricTable>> = BTreeMap::new();
    for t in tables {
        by_task.entry(&t.meta.task_id).or_default().push(t);
    }
    let mut out = Vec::new();
    for (task, group) in by_task {
        let first = group[0];
        if let Some(t) = group.iter().find(|t| t.meta.plan_hash != first.meta.plan_hash) {
            return Err(Error::InvalidInput(format!(
                "task {task}: encoders {} and {} used different split plans",
                first.meta.encoder_id, t.meta.encoder_id
            )));
        }
        if let Some(t) = group.iter().find(|t| t.meta.higher_is_better != first.meta.higher_is_better) {
            return Err(Error::InvalidInput(format!("task {task}: encoder {} disagrees on metric direction", t.meta.encoder_id)));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(t) = group.iter().find(|t| !seen.insert(&t.meta.encoder_id)) {
            return Err(Error::InvalidInput(format!("task {task}: duplicate encoder {}", t.meta.encoder_id)));
        }
        let valid = |t: &MetricTable| -> BTreeMap<usize, f64> {
            t.rows.iter().filter_map(|r| r.value.map(|v| (r.split, v))).collect()
        };
        let maps: Vec<BTreeMap<usize, f64>> = group.iter().map(|t| valid(t)).collect();
        let common: Vec<usize> = maps[0].keys().copied().filter(|s| maps.iter().all(|m| m.contains_key(s))).collect();
        out.push(TaskDistributions {
            task_id: task.to_string(),
            metric: first.meta.metric.clone(),
            higher_is_better: first.meta.higher_is_better,
            encoders: group
                .iter()
                .zip(&maps)
                .map(|(t, m)| EncoderDistribution {
                    encoder_id: t.meta.encoder_id.clone(),
                    values: common.iter().map(|s| m[s]).collect(),
                })
                .collect(),
        });
    }
    Ok(out)
}

/// Seed of one training run, shared by every encoder on the task.
pub fn run_seed(task_id: &str, plan_seed: u64, split: usize, run: usize) -> u64 {
    derive_seed(&[
        b"run",
        task_id.as_bytes(),
        &plan_seed.to_le_bytes(),
        &(split as u64).to_le_bytes(),
        &(run as u64).to_le_bytes(),
    ])
}

/// Labelled tiles of each slide for a tile-level task, with class indices in
/// [`order_classes`] order. Tiles without a label are dropped.
pub fn tile_sets<T: Scalar>(task: &TaskSpec, features: &[FeatureMatrix]) -> Result<HashMap<String, TileSet<T>>> {
    let TaskKind::TileLevel { k } = task.kind else {
        return Err(Error::InvalidInput(format!("task {} is not tile-level", task.task_id)));
    };
    let path = task.tile_labels.as_ref().ok_or_else(|| Error::InvalidInput("tile_labels path missing".into()))?;
    let labels = read_tile_labels_file(path, &task.label_column)?;
    let classes = order_classes(labels.values().flat_map(|m| m.values().cloned()));
    if classes.len() != k {
        return Err(Error::InfeasibleTask(format!("task {}: expected {k} tile classes, found {classes:?}", task.task_id)));
    }
    let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut out = HashMap::new();
    for m in features {
        let mut set = TileSet::new(m.dim);
        if let (Some(coords), Some(slide_labels)) = (&m.coords, labels.get(&m.slide_id)) {
            for (r, c) in coords.iter().enumerate() {
                if let Some(l) = slide_labels.get(c) {
                    set.push(m.row(r), index[l.as_str()]);
                }
            }
        }
        out.insert(m.slide_id.clone(), set);
    }
    Ok(out)
}

/// Concatenate the tile sets of `ids`.
pub fn gather_tiles<T: Scalar>(sets: &HashMap<String, TileSet<T>>, ids: &[String], dim: usize) -> Result<TileSet<T>> {
    let mut out = TileSet::new(dim);
    for id in ids {
        let t = sets.get(id).ok_or_else(|| Error::MissingFeatures(id.clone()))?;
        out.features.extend_from_slice(&t.features);
        out.labels.extend_from_slice(&t.labels);
    }
    Ok(out)
}

/// Training data for one encoder, prepared once and shared by every run.
enum Prepared<T> {
    Slides { bags: HashMap<String, Bag<T>>, kind: HeadKind, outputs: usize },
    Tiles { tiles: HashMap<String, TileSet<T>>, classes: usize },
}

fn prepare<T: Scalar>(
    task: &TaskSpec,
    targets: &TaskTargets,
    encoder_id: &str,
    source: &dyn FeatureSource,
) -> Result<Prepared<T>> {
    let loaded: Vec<FeatureMatrix> = targets
        .slides
        .par_iter()
        .map(|s| source.load(encoder_id, &s.slide_id))
        .collect::<Result<_>>()?;
    let dim = loaded.first().map_or(0, |m| m.dim);
    if let Some(m) = loaded.iter().find(|m| m.dim != dim) {
        return Err(Error::Shape(format!("slide {}: dim {} vs {dim}", m.slide_id, m.dim)));
    }
    if let Some(m) = loaded.iter().find(|m| m.rows == 0) {
        return Err(Error::InvalidData(format!("slide {} has no tiles", m.slide_id)));
    }
    match task.kind {
        TaskKind::TileLevel { k } => Ok(Prepared::Tiles { tiles: tile_sets(task, &loaded)?, classes: k }),
        _ => {
            let (kind, outputs) = match task.kind {
                TaskKind::Regression => (HeadKind::Regression, 1),
                _ => (HeadKind::Classification, targets.classes.len()),
            };
            let mut bags = HashMap::new();
            for (m, s) in loaded.iter().zip(&targets.slides) {
                let target = s.target.ok_or_else(|| Error::InvalidInput(format!("slide {} has no target", s.slide_id)))?;
                bags.insert(m.slide_id.clone(), Bag::from_f32(&m.data, dim, target)?);
            }
            Ok(Prepared::Slides { bags, kind, outputs })
        }
    }
}

fn class_of<T>(b: &Bag<T>) -> usize {
    match b.target {
        Target::Class(c) => c,
        Target::Value(_) => 0,
    }
}

fn value_of<T>(b: &Bag<T>) -> f64 {
    match b.target {
        Target::Value(v) => v,
        Target::Class(c) => c as f64,
    }
}

fn run_once<T: Scalar>(
    prepared: &Prepared<T>,
    task_id: &str,
    plan_seed: u64,
    split: &Split,
    run: usize,
    cfg: &BenchConfig,
) -> Result<f64> {
    let seed = run_seed(task_id, plan_seed, split.index, run);
    match prepared {
        Prepared::Tiles { tiles, classes } => {
            let dim = tiles.values().next().map_or(0, |t| t.dim);
            let (train, val) = (gather_tiles(tiles, &split.train_ids, dim)?, gather_tiles(tiles, &split.val_ids, dim)?);
            Ok(probe_train(&train, &val, *classes, &cfg.probe, seed)?.val_macro_auc)
        }
        Prepared::Slides { bags, kind: HeadKind::Classification, outputs } => {
            let train: Vec<&Bag<T>> = split.train_ids.iter().map(|id| &bags[id]).collect();
            let labels: Vec<usize> = train.iter().map(|b| class_of(b)).collect();
            let mut rng = rng_from(&[b"balance", &seed.to_le_bytes()]);
            let train = balance_classes(&train, &labels, *outputs, cfg.balance_target, &mut rng)?;
            let val: Vec<&Bag<T>> = split.val_ids.iter().map(|id| &bags[id]).collect();
            let out = train_slide_model(&train, &val, HeadKind::Classification, Some(*outputs), &cfg.train, seed)?;
            Ok(out.val_metric)
        }
        Prepared::Slides { bags, kind: HeadKind::Regression, .. } => {
            let raw: Vec<f64> = split.train_ids.iter().map(|id| value_of(&bags[id])).collect();
            let stats = TargetStats::from_values(&raw)?;
            let z = |id: &String| {
                let b = &bags[id];
                b.with_target(Target::Value(stats.normalize(value_of(b))))
            };
            let train: Vec<Bag<T>> = split.train_ids.iter().map(z).collect();
            let val: Vec<Bag<T>> = split.val_ids.iter().map(z).collect();
            let train_refs: Vec<&Bag<T>> = train.iter().collect();
            let val_refs: Vec<&Bag<T>> = val.iter().collect();
            let out = train_slide_model(&train_refs, &val_refs, HeadKind::Regression, Some(1), &cfg.train, seed)?;
            let preds: Vec<f64> = out.val_outputs.iter().map(|o| stats.denormalize(o[0].to_f64_lossy())).collect();
            let truth: Vec<f64> = split.val_ids.iter().map(|id| value_of(&bags[id])).collect();
            rmse(&preds, &truth, &stats, RmseUnits::Original)
        }
    }
}

/// Benchmark one encoder on one task over every split of `plan`.
///
/// All features are loaded up front, so a missing file aborts before any
/// training. Failed runs are recorded and their splits excluded. With
/// `cache_dir`, each run is stored as JSON and reused on the next call when
/// the plan and configuration hashes match.
pub fn run_benchmark<T: Scalar>(
    task: &TaskSpec,
    targets: &TaskTargets,
    plan: &SplitPlan,
    encoder_id: &str,
    source: &dyn FeatureSource,
    cfg: &BenchConfig,
    cache_dir: Option<&Path>,
) -> Result<MetricTable> {
    if plan.task_id != task.task_id {
        return Err(Error::InvalidInput(format!("plan is for task {}, not {}", plan.task_id, task.task_id)));
    }
    if cfg.runs_per_split == 0 {
        return Err(Error::InvalidInput("runs_per_split must be positive".into()));
    }
    let known: std::collections::HashSet<&str> = targets.slides.iter().map(|s| s.slide_id.as_str()).collect();
    if let Some(id) = plan.splits.iter().flat_map(|s| s.train_ids.iter().chain(&s.val_ids)).find(|id| !known.contains(id.as_str())) {
        return Err(Error::InvalidInput(format!("plan slide {id} is not eligible for task {}", task.task_id)));
    }
    let plan_hash = plan.hash()?;
    let config_hash = cfg.hash::<T>()?;
    let prepared: Arc<Prepared<T>> = Arc::new(prepare(task, targets, encoder_id, source)?);
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
    }

    let jobs: Vec<(usize, usize)> =
        (0..plan.splits.len()).flat_map(|s| (0..cfg.runs_per_split).map(move |r| (s, r))).collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let split = &plan.splits[s];
            let cache = cache_dir.map(|d| d.join(format!("split{:02}_run{r}.json", split.index)));
            if let Some(rec) = cache.as_deref().and_then(|p| load_cached(p, &plan_hash, &config_hash)) {
                return Ok(rec);
            }
            let result = run_once(&prepared, &task.task_id, plan.seed, split, r, cfg);
            if let Err(e) = &result {
                log::warn!("task {} encoder {encoder_id} split {} run {r}: {e}", task.task_id, split.index);
            }
            let rec = RunRecord {
                task_id: task.task_id.clone(),
                encoder_id: encoder_id.to_string(),
                split: split.index,
                run: r,
                seed: run_seed(&task.task_id, plan.seed, split.index, r),
                plan_hash: plan_hash.clone(),
                config_hash: config_hash.clone(),
                value: result.as_ref().ok().copied(),
                error: result.err().map(|e| e.to_string()),
            };
            if let Some(p) = cache {
                let mut bytes = serde_json::to_vec_pretty(&rec).map_err(|e| Error::Format(e.to_string()))?;
                bytes.push(b'\n');
                std::fs::write(p, bytes)?;
            }
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let rows: Vec<SplitRow> = records
        .chunks(cfg.runs_per_split)
        .map(|runs| {
            let vals: Vec<Option<f64>> = runs.iter().map(|r| r.value).collect();
            let value = vals
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64);
            SplitRow { split: runs[0].split, runs: vals, value }
        })
        .collect();
    let failed_splits: Vec<usize> = rows.iter().filter(|r| r.value.is_none()).map(|r| r.split).collect();
    let meta = TableMeta {
        task_id: task.task_id.clone(),
        encoder_id: encoder_id.to_string(),
        metric: task.metric_name().to_string(),
        higher_is_better: task.higher_is_better(),
        plan_hash,
        plan_seed: plan.seed,
        config_hash,
        version: env!("CARGO_PKG_VERSION").to_string(),
        n_splits: rows.len(),
        n_valid: rows.len() - failed_splits.len(),
        complete: failed_splits.is_empty(),
        failed_splits,
    };
    Ok(MetricTable { meta, rows })
}

fn load_cached(path: &Path, plan_hash: &str, config_hash: &str) -> Option<RunRecord> {
    let rec: RunRecord = serde_json::from_slice(&std::fs::read(path).ok()?).ok()?;
    (rec.plan_hash == plan_hash && rec.config_hash == config_hash).then_some(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mccv::{make_splits, read_manifest};
    use crate::seed::rng_from_seed;
    use rand::Rng;

    const DIM: usize = 4;

    /// 30 slides whose label shifts feature 0 of every tile.
    fn setup(regression: bool) -> (TaskSpec, TaskTargets, SplitPlan, MemorySource) {
        let mut csv = String::from("slide_id,patient_id,cohort,y\n");
        let mut src = MemorySource::new();
        let mut rng = rng_from_seed(9);
        for i in 0..30 {
            let label = i % 2;
            let y = if regression { format!("{}", 10.0 + 5.0 * label as f64 + i as f64 / 30.0) } else { label.to_string() };
            csv.push_str(&format!("s{i:02},,c,{y}\n"));
            let data: Vec<f32> = (0..6 * DIM)
                .map(|j| rng.gen_range(-1.0..1.0) + if j % DIM == 0 { 3.0 * label as f32 } else { 0.0 })
                .collect();
            src.insert(FeatureMatrix::new(format!("s{i:02}"), "enc", DIM, data, None).unwrap());
        }
        let manifest = read_manifest(csv.as_bytes()).unwrap();
        let kind = if regression { TaskKind::Regression } else { TaskKind::Binary };
        let task = TaskSpec { task_id: "t".into(), kind, label_column: "y".into(), cohort: None, tile_labels: None };
        let targets = task.resolve(&manifest).unwrap();
        let plan = make_splits(&manifest, &task, 3).unwrap();
        (task, targets, plan, src)
    }

    fn fast() -> BenchConfig {
        let mut cfg = BenchConfig::default();
        cfg.train.epochs = 5;
        cfg.train.hidden = 4;
        cfg.train.hyper.lr_peak = 1e-2;
        cfg
    }

    #[test]
    fn table_is_deterministic_and_averages_runs() {
        let (task, targets, plan, src) = setup(false);
        let a = run_benchmark::<f64>(&task, &targets, &plan, "enc", &src, &fast(), None).unwrap();
        let b = run_benchmark::<f64>(&task, &targets, &plan, "enc", &src, &fast(), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 20);
        assert!(a.meta.complete);
        for r in &a.rows {
            let (x, y) = (r.runs[0].unwrap(), r.runs[1].unwrap());
            assert_eq!(r.value, Some((x + y) / 2.0));
        }
        assert!(a.mean_std().0 > 0.9, "{:?}", a.mean_std());
        let mut buf1 = Vec::new();
        let mut buf2 = Vec::new();
        a.write_csv(&mut buf1).unwrap();
        b.write_csv(&mut buf2).unwrap();
        assert_eq!(buf1, buf2);
        let text = String::from_utf8(buf1).unwrap();
        assert!(text.starts_with("task,encoder,split,run0,run1,value\nt,enc,0,"));
        assert!(text.contains("\nt,enc,mean,,,"));
    }

    #[test]
    fn regression_reports_rmse_in_target_units() {
        let (task, targets, plan, src) = setup(true);
        let t = run_benchmark::<f64>(&task, &targets, &plan, "enc", &src, &fast(), None).unwrap();
        assert_eq!(t.meta.metric, "rmse");
        assert!(!t.meta.higher_is_better);
        for v in t.valid_values() {
            assert!(v >= 0.0 && v < 20.0, "{v}");
        }
    }

    #[test]
    fn missing_features_abort() {
        let (task, targets, plan, _) = setup(false);
        let empty = MemorySource::new();
        let r = run_benchmark::<f64>(&task, &targets, &plan, "enc", &empty, &fast(), None);
        assert!(matches!(r, Err(Error::MissingFeatures(_))));
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(DirSource::new(dir.path()).load("enc", "s00"), Err(Error::MissingFeatures(_))));
    }

    #[test]
    fn numerical_failures_mark_splits() {
        let (task, targets, plan, src) = setup(false);
        let mut cfg = fast();
        cfg.train.hyper.lr_peak = f64::INFINITY;
        let t = run_benchmark::<f64>(&task, &targets, &plan, "enc", &src, &cfg, None).unwrap();
        assert!(!t.meta.complete);
        assert_eq!(t.meta.n_valid, 0);
        assert_eq!(t.meta.failed_splits.len(), 20);
    }

    #[test]
    fn cache_roundtrip_and_table_io() {
        let (task, targets, plan, src) = setup(false);
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("runs");
        let a = run_benchmark::<f64>(&task, &targets, &plan, "enc", &src, &fast(), Some(&cache)).unwrap();
        assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 40);
        let b = run_benchmark::<f64>(&task, &targets, &plan, "enc", &src, &fast(), Some(&cache)).unwrap();
        assert_eq!(a, b);

        let path = dir.path().join("t__enc.csv");
        a.write(&path).unwrap();
        let back = MetricTable::read(&path).unwrap();
        assert_eq!(back.meta, a.meta);
        for (x, y) in back.rows.iter().zip(&a.rows) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn distributions_pair_on_common_splits() {
        let row = |split, value| SplitRow { split, runs: vec![value, value], value };
        let meta = |enc: &str| TableMeta {
            task_id: "t".into(),
            encoder_id: enc.into(),
            metric: "auc".into(),
            higher_is_better: true,
            plan_hash: "h".into(),
            plan_seed: 0,
            config_hash: "c".into(),
            version: "0".into(),
            n_splits: 3,
            n_valid: 2,
            complete: false,
            failed_splits: vec![],
        };
        let a = MetricTable { meta: meta("a"), rows: vec![row(0, Some(0.1)), row(1, None), row(2, Some(0.3))] };
        let b = MetricTable { meta: meta("b"), rows: vec![row(0, Some(0.5)), row(1, Some(0.6)), row(2, Some(0.7))] };
        let d = task_distributions(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(d[0].encoders[0].values, vec![0.1, 0.3]);
        assert_eq!(d[0].encoders[1].values, vec![0.5, 0.7]);
        let mut c = b.clone();
        c.meta.plan_hash = "other".into();
        assert!(task_distributions(&[a, c]).is_err());
    }

    #[test]
    fn tile_label_csv() {
        let csv = "slide_id,x,y,region,extra\ns1,0,0,tumor,z\ns1,448,0,,z\ns2,0,448,normal,z\n";
        let l = read_tile_labels(csv.as_bytes(), "region").unwrap();
        assert_eq!(l["s1"].len(), 1);
        assert_eq!(l["s2"][&TileCoord { x: 0, y: 448 }], "normal");
        assert!(read_tile_labels(csv.as_bytes(), "nope").is_err());
        assert!(read_tile_labels("slide_id,x,y,r\ns,a,0,1\n".as_bytes(), "r").is_err());
    }
}
