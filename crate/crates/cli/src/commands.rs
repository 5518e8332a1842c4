use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use milbench::featstore::{self, feature_path, read_features, write_features};
use milbench::mccv::{
    gather_tiles, make_splits_with, read_manifest_file, run_benchmark, task_distributions, tile_sets, DirSource,
    FeatureSource, MetricTable, SplitPlan, TaskKind, TaskSpec,
};
use milbench::preprocess::io::{read_geometry, read_thumbnail, read_tile_grid_file, write_mask_png, write_tile_grid_file};
use milbench::preprocess::{build_tissue_mask, enumerate_tiles, PenConfig, TileParams};
use milbench::scalar::Scalar;
use milbench::seed::{derive_seed, sha256_hex};
use milbench::stats::{self, BhFamily, CompareConfig};
use milbench::synthbench::{self, SynthKind, SynthSpec};
use milbench::tileprobe;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Precision, RunConfig};
use crate::{CompareArgs, ConfigArgs, FamilyArg, MockEncodeArgs, RegionMapArgs, SynthArgs, SynthKindArg, TileArgs, TrainProbeArgs};

/// Completed command: `Partial` means some items failed but the rest were written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Partial,
}

impl Outcome {
    fn from_failures(n: usize) -> Self {
        if n == 0 {
            Outcome::Done
        } else {
            Outcome::Partial
        }
    }
}

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct Provenance<'a, P: Serialize> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    config_hash: String,
    seed: u64,
    params: P,
}

/// `provenance.json`: tool version, hash of the parameters, and seed.
fn write_provenance<P: Serialize>(dir: &Path, command: &str, seed: u64, params: P) -> Result<()> {
    let config_hash = sha256_hex(&serde_json::to_vec(&params)?);
    write_json(&dir.join("provenance.json"), &Provenance { tool: "milbench", version: VERSION, command, config_hash, seed, params })
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            bail!("workers must be positive");
        }
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

/// Files in `dir` whose names end with `suffix`, sorted, with the stem before it.
fn list_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(stem) = name.strip_suffix(suffix) {
            if path.is_file() && !stem.is_empty() {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn report_failures(failures: &[(String, String)]) {
    for (item, err) in failures {
        eprintln!("failed: {item}: {err}");
    }
}

pub fn tile(a: &TileArgs) -> Result<Outcome> {
    let inputs = list_with_suffix(&a.thumbnails, ".png")?;
    if inputs.is_empty() {
        log::warn!("no thumbnails in {}", a.thumbnails.display());
        eprintln!("warning: no thumbnails in {}", a.thumbnails.display());
        return Ok(Outcome::Done);
    }
    fs::create_dir_all(&a.out)?;
    let params = TileParams { tile_px: a.tile_px, target_mpp: a.target_mpp, min_tissue_frac: a.min_tissue_frac };
    let pen = if a.no_pen_filter { PenConfig::none() } else { PenConfig::default() };
    let results: Vec<(String, milbench::Result<usize>)> = pool(a.workers)?.install(|| {
        inputs
            .par_iter()
            .map(|(stem, png)| {
                let run = || -> milbench::Result<usize> {
                    let geom = read_geometry(&a.geometry.join(format!("{stem}.json")))?;
                    let thumb = read_thumbnail(png, &geom)?.fit_long_side(a.thumbnail_long_side);
                    let mask = build_tissue_mask(&thumb, &pen)?;
                    let grid = enumerate_tiles(&mask, &geom, &params)?;
                    if mask.degenerate || grid.is_empty() {
                        log::warn!("slide {}: no tissue tiles", geom.slide_id);
                    }
                    write_tile_grid_file(&grid, &a.out.join(format!("{}.tiles.csv", geom.slide_id)))?;
                    write_mask_png(&mask, &a.out.join(format!("{}.mask.png", geom.slide_id)))?;
                    Ok(grid.len())
                };
                (stem.clone(), run())
            })
            .collect()
    });
    let failures: Vec<(String, String)> =
        results.iter().filter_map(|(s, r)| r.as_ref().err().map(|e| (s.clone(), e.to_string()))).collect();
    report_failures(&failures);
    let tiles: usize = results.iter().filter_map(|(_, r)| r.as_ref().ok()).sum();
    log::info!("tiled {} slides, {tiles} tiles", results.len() - failures.len());
    write_provenance(&a.out, "tile", 0, serde_json::json!({
        "tile_px": a.tile_px,
        "target_mpp": a.target_mpp,
        "min_tissue_frac": a.min_tissue_frac,
        "thumbnail_long_side": a.thumbnail_long_side,
        "pen_filter": !a.no_pen_filter,
    }))?;
    Ok(Outcome::from_failures(failures.len()))
}

pub fn mock_encode(a: &MockEncodeArgs) -> Result<Outcome> {
    if a.encoder.is_empty() || a.encoder.contains(['/', '\\']) {
        bail!("bad encoder id {:?}", a.encoder);
    }
    let grids = list_with_suffix(&a.tiles, ".tiles.csv")?;
    let dir = a.feature_root.join(&a.encoder);
    fs::create_dir_all(&dir)?;
    let results: Vec<(String, milbench::Result<()>)> = pool(a.workers)?.install(|| {
        grids
            .par_iter()
            .map(|(stem, path)| {
                let run = || -> milbench::Result<()> {
                    let grid = read_tile_grid_file(path)?;
                    let m = featstore::mock_encode(&grid, a.dim, a.seed, &a.encoder)?;
                    write_features(&m, &feature_path(&a.feature_root, &a.encoder, &grid.slide_id))
                };
                (stem.clone(), run())
            })
            .collect()
    });
    let failures: Vec<(String, String)> =
        results.iter().filter_map(|(s, r)| r.as_ref().err().map(|e| (s.clone(), e.to_string()))).collect();
    report_failures(&failures);
    write_provenance(&dir, "mock-encode", a.seed, serde_json::json!({ "encoder": a.encoder, "dim": a.dim }))?;
    Ok(Outcome::from_failures(failures.len()))
}

pub fn synth(a: &SynthArgs) -> Result<Outcome> {
    let kind = match a.kind {
        SynthKindArg::MilBinary => SynthKind::MilBinary,
        SynthKindArg::MilMulticlass => SynthKind::MilMulticlass { k: a.k },
        SynthKindArg::Regression => SynthKind::Regression,
        SynthKindArg::TileLevel => SynthKind::TileLevel { k: a.k },
    };
    let mut spec = SynthSpec { kind, seed: a.seed, ..SynthSpec::default() };
    if let Some(n) = a.n_slides {
        spec.n_slides = n;
    }
    if let Some(d) = a.dim {
        spec.dim = d;
    }
    spec.validate()?;
    let encoders: BTreeSet<&String> = a.encoders.iter().collect();
    if encoders.len() != a.encoders.len() || a.encoders.is_empty() {
        bail!("encoder ids must be unique and nonempty");
    }
    if a.encoders.len() > 1 && matches!(kind, SynthKind::Regression | SynthKind::TileLevel { .. }) {
        bail!("several encoders need a kind whose labels do not depend on the draw (mil-binary or mil-multiclass)");
    }
    let first = synthbench::gen_mil_dataset(&spec, &a.encoders[0])?;
    let mut ds = first.clone();
    if a.permute_labels {
        ds.manifest = synthbench::permute_labels(&ds.manifest, synthbench::LABEL_COLUMN, a.seed);
    }
    synthbench::write_dataset(&ds, &a.out)?;
    let feat_root = a.out.join("features");
    for enc in &a.encoders[1..] {
        let other = SynthSpec { seed: derive_seed(&[b"synth-encoder", &a.seed.to_le_bytes(), enc.as_bytes()]), ..spec };
        let d = synthbench::gen_mil_dataset(&other, enc)?;
        for s in &d.slides {
            let path = feature_path(&feat_root, enc, &s.features.slide_id);
            fs::create_dir_all(path.parent().unwrap())?;
            write_features(&s.features, &path)?;
        }
    }
    let tile_labels = matches!(kind, SynthKind::TileLevel { .. }).then(|| PathBuf::from(synthbench::TILE_LABELS_FILE));
    let cfg = RunConfig {
        manifest: synthbench::MANIFEST_FILE.into(),
        feature_root: "features".into(),
        output_root: "out".into(),
        seed: a.seed,
        workers: None,
        encoders: a.encoders.clone(),
        grouping: Default::default(),
        precision: Precision::F64,
        hyper: Default::default(),
        tasks: vec![spec.task("synth", tile_labels.as_deref())],
    };
    fs::write(a.out.join("run.toml"), toml::to_string(&cfg)?)?;
    write_provenance(&a.out, "synth", a.seed, serde_json::json!({ "spec": spec, "encoders": a.encoders, "permute_labels": a.permute_labels }))?;
    Ok(Outcome::Done)
}

fn load_config(a: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.workers {
        cfg.workers = Some(w);
    }
    if let Some(o) = &a.output_root {
        cfg.output_root = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Planned {
    task: TaskSpec,
    targets: milbench::mccv::TaskTargets,
    plan: SplitPlan,
}

/// Resolve every task and write its split plan; infeasible tasks are
/// reported as failures.
fn plan_tasks(cfg: &RunConfig) -> Result<(Vec<Planned>, Vec<(String, String)>)> {
    let manifest = read_manifest_file(&cfg.manifest).with_context(|| format!("reading {}", cfg.manifest.display()))?;
    let dir = cfg.output_root.join("splits");
    fs::create_dir_all(&dir)?;
    let mut planned = Vec::new();
    let mut failures = Vec::new();
    for task in &cfg.tasks {
        let result = task
            .resolve(&manifest)
            .and_then(|targets| Ok((make_splits_with(&manifest, task, cfg.seed, &cfg.split_config())?, targets)));
        match result {
            Ok((plan, targets)) => {
                plan.write(&dir.join(format!("{}.json", task.task_id)))?;
                planned.push(Planned { task: task.clone(), targets, plan });
            }
            Err(e) => failures.push((format!("task {}", task.task_id), e.to_string())),
        }
    }
    Ok((planned, failures))
}

pub fn splits(a: &ConfigArgs) -> Result<Outcome> {
    let cfg = load_config(a)?;
    let (_, failures) = plan_tasks(&cfg)?;
    report_failures(&failures);
    write_provenance(&cfg.output_root.join("splits"), "splits", cfg.seed, cfg.hash()?)?;
    Ok(Outcome::from_failures(failures.len()))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    task: &'a str,
    encoder: &'a str,
    metric: &'a str,
    mean: Option<f64>,
    std: Option<f64>,
    n_valid: usize,
    n_splits: usize,
    complete: bool,
}

fn bench_one<T: Scalar>(p: &Planned, encoder: &str, source: &DirSource, cfg: &RunConfig) -> milbench::Result<MetricTable> {
    let cache = cfg.output_root.join("runs").join(&p.task.task_id).join(encoder);
    run_benchmark::<T>(&p.task, &p.targets, &p.plan, encoder, source, &cfg.bench_config(), Some(&cache))
}

pub fn benchmark(a: &ConfigArgs) -> Result<Outcome> {
    let cfg = load_config(a)?;
    let pool = pool(cfg.workers)?;
    let (planned, mut failures) = plan_tasks(&cfg)?;
    let source = DirSource::new(&cfg.feature_root);
    let tables_dir = cfg.output_root.join("tables");
    fs::create_dir_all(&tables_dir)?;
    let mut summary = csv::Writer::from_path(cfg.output_root.join("summary.csv"))?;
    for p in &planned {
        for enc in &cfg.encoders {
            log::info!("task {} encoder {enc}", p.task.task_id);
            let table = pool.install(|| match cfg.precision {
                Precision::F64 => bench_one::<f64>(p, enc, &source, &cfg),
                Precision::F32 => bench_one::<f32>(p, enc, &source, &cfg),
            });
            let table = match table {
                Ok(t) => t,
                Err(e) => {
                    failures.push((format!("task {} encoder {enc}", p.task.task_id), e.to_string()));
                    continue;
                }
            };
            table.write(&tables_dir.join(format!("{}__{enc}.csv", p.task.task_id)))?;
            if !table.meta.complete {
                failures.push((
                    format!("task {} encoder {enc}", p.task.task_id),
                    format!("failed splits {:?}", table.meta.failed_splits),
                ));
            }
            let (mean, std) = table.mean_std();
            summary.serialize(SummaryRow {
                task: &p.task.task_id,
                encoder: enc,
                metric: &table.meta.metric,
                mean: mean.is_finite().then_some(mean),
                std: std.is_finite().then_some(std),
                n_valid: table.meta.n_valid,
                n_splits: table.meta.n_splits,
                complete: table.meta.complete,
            })?;
        }
    }
    summary.flush()?;
    report_failures(&failures);
    write_provenance(&cfg.output_root, "benchmark", cfg.seed, cfg.hash()?)?;
    Ok(Outcome::from_failures(failures.len()))
}

pub fn compare(a: &CompareArgs) -> Result<Outcome> {
    let mut tables = Vec::new();
    for (_, path) in list_with_suffix(&a.tables, ".csv")? {
        if milbench::mccv::meta_path(&path).is_file() {
            tables.push(MetricTable::read(&path).with_context(|| format!("reading {}", path.display()))?);
        }
    }
    let encoders: BTreeSet<&str> = tables.iter().map(|t| t.meta.encoder_id.as_str()).collect();
    if encoders.len() < 2 {
        bail!("need metric tables from at least two encoders, found {}", encoders.len());
    }
    let dists = task_distributions(&tables)?;
    let cc = CompareConfig {
        alpha: a.alpha,
        strong_alpha: a.strong_alpha,
        family: match a.family {
            FamilyArg::PerTask => BhFamily::PerTask,
            FamilyArg::Global => BhFamily::Global,
        },
        min_valid_splits: a.min_valid_splits,
    };
    let report = stats::compare(&dists, &cc)?;
    fs::create_dir_all(&a.out)?;
    stats::write_report_json(&report, fs::File::create(a.out.join("report.json"))?)?;
    stats::write_rank_heatmap(&report, fs::File::create(a.out.join("rank_heatmap.csv"))?)?;
    stats::write_sig_matrix(&report, fs::File::create(a.out.join("significance.csv"))?)?;
    stats::write_win_tie_loss(&report, fs::File::create(a.out.join("win_tie_loss.csv"))?)?;
    for s in &report.skipped {
        eprintln!("skipped task {}: {}", s.task_id, s.reason);
    }
    let plan_hashes: BTreeSet<&str> = tables.iter().map(|t| t.meta.plan_hash.as_str()).collect();
    write_provenance(&a.out, "compare", 0, serde_json::json!({ "compare": cc, "plan_hashes": plan_hashes }))?;
    Ok(Outcome::Done)
}

pub fn train_probe(a: &TrainProbeArgs) -> Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let task = cfg.tasks.iter().find(|t| t.task_id == a.task).with_context(|| format!("no task {}", a.task))?;
    if !matches!(task.kind, TaskKind::TileLevel { .. }) {
        bail!("task {} is not tile-level", task.task_id);
    }
    if !cfg.encoders.contains(&a.encoder) {
        bail!("unknown encoder {}", a.encoder);
    }
    let manifest = read_manifest_file(&cfg.manifest)?;
    let targets = task.resolve(&manifest)?;
    let plan = make_splits_with(&manifest, task, cfg.seed, &cfg.split_config())?;
    let split = plan.splits.get(a.split).with_context(|| format!("split {} out of range", a.split))?;
    let source = DirSource::new(&cfg.feature_root);
    let features = targets
        .slides
        .iter()
        .map(|s| source.load(&a.encoder, &s.slide_id))
        .collect::<milbench::Result<Vec<_>>>()?;
    let dim = features.first().map_or(0, |m| m.dim);
    let sets = tile_sets::<f64>(task, &features)?;
    let train = gather_tiles(&sets, &split.train_ids, dim)?;
    let val = gather_tiles(&sets, &split.val_ids, dim)?;
    let k = task.n_classes().unwrap_or(2);
    let seed = milbench::mccv::run_seed(&task.task_id, plan.seed, split.index, 0);
    let out = tileprobe::probe_train(&train, &val, k, &cfg.bench_config().probe, seed)?;
    tileprobe::write_params(&out.params, &format!("{}/{}", task.task_id, a.encoder), &a.out)?;
    println!("validation macro AUC {:.4}", out.val_macro_auc);
    Ok(Outcome::Done)
}

pub fn region_map(a: &RegionMapArgs) -> Result<Outcome> {
    let (params, _) = tileprobe::read_params::<f64>(&a.probe)?;
    let grid = read_tile_grid_file(&a.tiles)?;
    let features = read_features(&a.features)?;
    if features.slide_id != grid.slide_id {
        bail!("features are for slide {}, grid for {}", features.slide_id, grid.slide_id);
    }
    let cells = tileprobe::region_map(&params, &grid, &features)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    tileprobe::write_region_map(&grid.slide_id, &cells, fs::File::create(&a.out)?)?;
    Ok(Outcome::Done)
}
