//! Synthetic slides with a known amount of planted signal.
//!
//! Negative bags hold isotropic Gaussian tiles. Positive bags replace
//! `⌈signal_fraction · n⌉` of them with tiles shifted by a fixed signal vector,
//! so the label is carried by a handful of tiles and a model has to find them.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::{feature_path, write_features, FeatureMatrix};
use crate::mccv::{write_manifest_file, SlideManifest, SlideRecord, TaskKind, TaskSpec};
use crate::metrics::binary_auc;
use crate::preprocess::TileCoord;
use crate::seed::rng_from;

pub const LABEL_COLUMN: &str = "label";
pub const TILE_LABELS_FILE: &str = "tile_labels.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";
const GRID_COLUMNS: u32 = 16;
const TILE_STRIDE: u32 = 448;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    MilBinary,
    MilMulticlass { k: usize },
    /// Target is the realised fraction of signal tiles.
    Regression,
    /// Every tile drawn around one of `k` class centres.
    TileLevel { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_slides: usize,
    pub tiles_min: usize,
    pub tiles_max: usize,
    pub dim: usize,
    pub signal_fraction: f64,
    pub noise_sigma: f64,
    /// Signal vector norm in units of `noise_sigma`.
    pub signal_norm: f64,
    pub slides_per_patient: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub kind: SynthKind,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_slides: 300,
            tiles_min: 40,
            tiles_max: 80,
            dim: 64,
            signal_fraction: 0.05,
            noise_sigma: 1.0,
            signal_norm: 4.0,
            slides_per_patient: 2,
            seed: 0,
            kind: SynthKind::MilBinary,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.n_slides == 0 || self.dim == 0 || self.slides_per_patient == 0 {
            return bad("n_slides, dim and slides_per_patient must be positive");
        }
        if self.tiles_min == 0 || self.tiles_min > self.tiles_max {
            return bad("need 1 <= tiles_min <= tiles_max");
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return bad("signal_fraction must be in (0, 1]");
        }
        if !(self.noise_sigma > 0.0 && self.signal_norm.is_finite()) {
            return bad("noise_sigma must be positive");
        }
        match self.kind {
            SynthKind::MilMulticlass { k } | SynthKind::TileLevel { k } if k < 2 => bad("k must be at least 2"),
            _ => Ok(()),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self.kind {
            SynthKind::MilBinary => 2,
            SynthKind::MilMulticlass { k } | SynthKind::TileLevel { k } => k,
            SynthKind::Regression => 1,
        }
    }

    /// Matching task definition for the generated manifest.
    pub fn task(&self, task_id: &str, tile_labels: Option<&Path>) -> TaskSpec {
        let kind = match self.kind {
            SynthKind::MilBinary => TaskKind::Binary,
            SynthKind::MilMulticlass { k } => TaskKind::Multiclass { k },
            SynthKind::Regression => TaskKind::Regression,
            SynthKind::TileLevel { k } => TaskKind::TileLevel { k },
        };
        TaskSpec {
            task_id: task_id.to_string(),
            kind,
            label_column: LABEL_COLUMN.to_string(),
            cohort: None,
            tile_labels: tile_labels.map(Path::to_path_buf),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSlide {
    pub features: FeatureMatrix,
    /// Class index, or 0 for regression.
    pub class: usize,
    pub n_signal: usize,
    /// Per-tile class for tile-level data; per-tile signal flag (0/1) otherwise.
    pub tile_classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    pub manifest: SlideManifest,
    pub slides: Vec<SynthSlide>,
    /// Unit directions; for binary and regression only the first is used.
    pub directions: Vec<Vec<f64>>,
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn slide_id(i: usize) -> String {
    format!("synth_{i:04}")
}

fn coord(i: usize) -> TileCoord {
    TileCoord {
        x: (i as u32 % GRID_COLUMNS) * TILE_STRIDE,
        y: (i as u32 / GRID_COLUMNS) * TILE_STRIDE,
    }
}

/// Generate the manifest and per-slide feature matrices for `spec`.
///
/// Each slide draws from its own stream keyed by `(seed, slide index)`, so
/// generation parallelises without changing the output.
pub fn gen_mil_dataset(spec: &SynthSpec, encoder_id: &str) -> Result<SynthDataset> {
    spec.validate()?;
    let k = spec.n_classes();
    let mut dir_rng = rng_from(&[b"synth-directions", &spec.seed.to_le_bytes()]);
    let directions: Vec<Vec<f64>> = (0..k.max(1)).map(|_| unit_vector(&mut dir_rng, spec.dim)).collect();
    let shift = spec.signal_norm * spec.noise_sigma;

    let slides: Vec<SynthSlide> = (0..spec.n_slides)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(&[b"synth-slide", &spec.seed.to_le_bytes(), &(i as u64).to_le_bytes()]);
            let n = rng.gen_range(spec.tiles_min..=spec.tiles_max);
            // labels cycle per patient so classes stay balanced
            let class = (i / spec.slides_per_patient) % k.max(1);
            let mut tile_classes = vec![0usize; n];
            let (n_signal, dir): (usize, Option<usize>) = match spec.kind {
                SynthKind::MilBinary => {
                    let s = if class == 1 { (spec.signal_fraction * n as f64).ceil() as usize } else { 0 };
                    (s.min(n), Some(0))
                }
                SynthKind::MilMulticlass { .. } => {
                    (((spec.signal_fraction * n as f64).ceil() as usize).min(n), Some(class))
                }
                SynthKind::Regression => {
                    let f = rng.gen_range(0.0..=(4.0 * spec.signal_fraction).min(1.0));
                    (((f * n as f64).round() as usize).min(n), Some(0))
                }
                SynthKind::TileLevel { k } => {
                    for c in tile_classes.iter_mut() {
                        *c = rng.gen_range(0..k);
                    }
                    (0, None)
                }
            };
            let mut signal_rows: Vec<usize> = (0..n).collect();
            signal_rows.shuffle(&mut rng);
            signal_rows.truncate(n_signal);
            if dir.is_some() {
                for &r in &signal_rows {
                    tile_classes[r] = 1;
                }
            }
            let mut data = Vec::with_capacity(n * spec.dim);
            for &tc in &tile_classes {
                let centre = match dir {
                    None => Some(&directions[tc]),
                    Some(d) if tc == 1 => Some(&directions[d]),
                    Some(_) => None,
                };
                for j in 0..spec.dim {
                    let noise: f64 = rng.sample(StandardNormal);
                    let mean = centre.map_or(0.0, |c| c[j] * shift);
                    data.push((mean + spec.noise_sigma * noise) as f32);
                }
            }
            let coords = (0..n).map(coord).collect();
            let features = FeatureMatrix::new(slide_id(i), encoder_id, spec.dim, data, Some(coords))?;
            Ok(SynthSlide {
                features,
                class: if matches!(spec.kind, SynthKind::Regression) { 0 } else { class },
                n_signal,
                tile_classes,
            })
        })
        .collect::<Result<_>>()?;

    let label_columns = match spec.kind {
        SynthKind::TileLevel { .. } => Vec::new(),
        _ => vec![LABEL_COLUMN.to_string()],
    };
    let manifest = SlideManifest {
        label_columns,
        slides: slides
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut labels = BTreeMap::new();
                match spec.kind {
                    SynthKind::MilBinary | SynthKind::MilMulticlass { .. } => {
                        labels.insert(LABEL_COLUMN.to_string(), s.class.to_string());
                    }
                    SynthKind::Regression => {
                        let frac = s.n_signal as f64 / s.features.rows as f64;
                        labels.insert(LABEL_COLUMN.to_string(), frac.to_string());
                    }
                    SynthKind::TileLevel { .. } => {}
                }
                SlideRecord {
                    slide_id: slide_id(i),
                    patient_id: Some(format!("patient_{:04}", i / spec.slides_per_patient)),
                    cohort: "synthetic".to_string(),
                    labels,
                }
            })
            .collect(),
    };
    Ok(SynthDataset { spec: *spec, manifest, slides, directions })
}

/// `slide_id,x,y,label` for tile-level datasets.
pub fn write_tile_labels<W: std::io::Write>(ds: &SynthDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slide_id", "x", "y", LABEL_COLUMN])?;
    for s in &ds.slides {
        let coords = s.features.coords.as_deref().unwrap_or_default();
        for (c, &tc) in coords.iter().zip(&s.tile_classes) {
            w.write_record([&s.features.slide_id, &c.x.to_string(), &c.y.to_string(), &tc.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write `manifest.csv`, features under `<root>/features/<encoder>/`, and for
/// tile-level data `tile_labels.csv`.
pub fn write_dataset(ds: &SynthDataset, root: &Path) -> Result<()> {
    std::fs::create_dir_all(root)?;
    write_manifest_file(&ds.manifest, &root.join(MANIFEST_FILE))?;
    let feat_root = root.join("features");
    for s in &ds.slides {
        let path = feature_path(&feat_root, &s.features.encoder_id, &s.features.slide_id);
        std::fs::create_dir_all(path.parent().unwrap())?;
        write_features(&s.features, &path)?;
    }
    if matches!(ds.spec.kind, SynthKind::TileLevel { .. }) {
        write_tile_labels(ds, std::fs::File::create(root.join(TILE_LABELS_FILE))?)?;
    }
    Ok(())
}

/// Copy of `manifest` with the values of `column` shuffled across slides.
pub fn permute_labels(manifest: &SlideManifest, column: &str, seed: u64) -> SlideManifest {
    let mut out = manifest.clone();
    let mut values: Vec<Option<String>> = out.slides.iter().map(|s| s.labels.get(column).cloned()).collect();
    values.shuffle(&mut rng_from(&[b"permute", column.as_bytes(), &seed.to_le_bytes()]));
    for (s, v) in out.slides.iter_mut().zip(values) {
        match v {
            Some(v) => s.labels.insert(column.to_string(), v),
            None => s.labels.remove(column),
        };
    }
    out
}

fn projections(s: &SynthSlide, u: &[f64]) -> Vec<f64> {
    (0..s.features.rows)
        .map(|r| s.features.row(r).iter().zip(u).map(|(&x, &w)| x as f64 * w).sum())
        .collect()
}

/// AUC of a binary dataset scored by the mean of the top `⌈signal_fraction·n⌉`
/// tile projections onto the true signal direction.
pub fn oracle_topk_auc(ds: &SynthDataset) -> Result<f64> {
    binary_scores(ds, |s, p| {
        let mut p = p.to_vec();
        p.sort_by(|a, b| b.total_cmp(a));
        let k = ((ds.spec.signal_fraction * s.features.rows as f64).ceil() as usize).clamp(1, p.len());
        p[..k].iter().sum::<f64>() / k as f64
    })
}

/// AUC of a binary dataset scored by the slide-mean projection onto the true
/// signal direction, the best any linear rule on mean-pooled features can do
/// in expectation.
pub fn slide_mean_auc(ds: &SynthDataset) -> Result<f64> {
    binary_scores(ds, |_, p| p.iter().sum::<f64>() / p.len() as f64)
}

fn binary_scores(ds: &SynthDataset, score: impl Fn(&SynthSlide, &[f64]) -> f64) -> Result<f64> {
    if ds.spec.kind != SynthKind::MilBinary {
        return Err(Error::InvalidInput("oracle scores need a binary dataset".into()));
    }
    let u = &ds.directions[0];
    let scores: Vec<f64> = ds.slides.iter().map(|s| score(s, &projections(s, u))).collect();
    let labels: Vec<bool> = ds.slides.iter().map(|s| s.class == 1).collect();
    binary_auc(&scores, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featstore::read_features;
    use crate::mccv::read_manifest_file;

    #[test]
    fn construction_invariants() {
        let ds = gen_mil_dataset(&SynthSpec::default(), "mock").unwrap();
        assert_eq!(ds.slides.len(), 300);
        for s in &ds.slides {
            let n = s.features.rows;
            assert!((40..=80).contains(&n));
            if s.class == 1 {
                assert_eq!(s.n_signal, (0.05 * n as f64).ceil() as usize);
                assert!(s.n_signal >= 1);
            } else {
                assert_eq!(s.n_signal, 0);
            }
            assert_eq!(s.tile_classes.iter().sum::<usize>(), s.n_signal);
        }
        let positives = ds.slides.iter().filter(|s| s.class == 1).count();
        assert_eq!(positives, 150);
        assert_eq!(ds.manifest.slides[2].patient_id.as_deref(), Some("patient_0001"));
        let d = &ds.directions[0];
        assert!((d.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SynthSpec { n_slides: 12, ..Default::default() };
        assert_eq!(gen_mil_dataset(&spec, "m").unwrap(), gen_mil_dataset(&spec, "m").unwrap());
        let other = SynthSpec { seed: 1, ..spec };
        assert_ne!(gen_mil_dataset(&other, "m").unwrap().slides, gen_mil_dataset(&spec, "m").unwrap().slides);
    }

    #[test]
    fn full_signal_shifts_the_mean() {
        let spec = SynthSpec { n_slides: 400, signal_fraction: 1.0, dim: 4, ..Default::default() };
        let ds = gen_mil_dataset(&spec, "m").unwrap();
        let mean_of = |class: usize| -> Vec<f64> {
            let mut acc = vec![0.0; 4];
            let mut rows = 0.0;
            for s in ds.slides.iter().filter(|s| s.class == class) {
                for r in 0..s.features.rows {
                    for (a, v) in acc.iter_mut().zip(s.features.row(r)) {
                        *a += *v as f64;
                    }
                    rows += 1.0;
                }
            }
            acc.into_iter().map(|a| a / rows).collect()
        };
        let (m0, m1) = (mean_of(0), mean_of(1));
        for j in 0..4 {
            let expected = 4.0 * ds.directions[0][j];
            assert!((m1[j] - m0[j] - expected).abs() < 0.05, "{j}: {} vs {expected}", m1[j] - m0[j]);
        }
    }

    #[test]
    fn oracles_bracket_the_default_task() {
        let ds = gen_mil_dataset(&SynthSpec::default(), "m").unwrap();
        assert!(oracle_topk_auc(&ds).unwrap() >= 0.99);
        // Population values need a large draw; a single default draw is noisy.
        let big = gen_mil_dataset(&SynthSpec { n_slides: 4000, ..SynthSpec::default() }, "m").unwrap();
        let top = oracle_topk_auc(&big).unwrap();
        let mean = slide_mean_auc(&big).unwrap();
        assert!(top >= 0.99, "top-k oracle {top}");
        assert!(mean < 0.9, "slide mean {mean}");
    }

    #[test]
    fn kinds_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { n_slides: 6, kind: SynthKind::TileLevel { k: 3 }, ..Default::default() };
        let ds = gen_mil_dataset(&spec, "mock").unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let m = read_manifest_file(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(m, ds.manifest);
        let f = read_features(&feature_path(&dir.path().join("features"), "mock", "synth_0003")).unwrap();
        assert_eq!(f, ds.slides[3].features);
        let labels = std::fs::read_to_string(dir.path().join(TILE_LABELS_FILE)).unwrap();
        let rows = ds.slides.iter().map(|s| s.features.rows).sum::<usize>();
        assert_eq!(labels.lines().count(), rows + 1);
        assert!(labels.starts_with("slide_id,x,y,label\nsynth_0000,0,0,"));

        let spec = SynthSpec { n_slides: 20, kind: SynthKind::Regression, ..Default::default() };
        let ds = gen_mil_dataset(&spec, "m").unwrap();
        for (s, rec) in ds.slides.iter().zip(&ds.manifest.slides) {
            let v: f64 = rec.labels[LABEL_COLUMN].parse().unwrap();
            assert_eq!(v, s.n_signal as f64 / s.features.rows as f64);
        }
        let spec = SynthSpec { n_slides: 9, kind: SynthKind::MilMulticlass { k: 3 }, slides_per_patient: 1, ..Default::default() };
        let ds = gen_mil_dataset(&spec, "m").unwrap();
        assert!(ds.slides.iter().all(|s| s.n_signal >= 1));
        assert_eq!(ds.slides.iter().map(|s| s.class).collect::<Vec<_>>(), [0, 1, 2, 0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn permutation_keeps_the_label_multiset() {
        let ds = gen_mil_dataset(&SynthSpec { n_slides: 30, ..Default::default() }, "m").unwrap();
        let p = permute_labels(&ds.manifest, LABEL_COLUMN, 1);
        let count = |m: &SlideManifest| m.slides.iter().filter(|s| s.labels[LABEL_COLUMN] == "1").count();
        assert_eq!(count(&p), count(&ds.manifest));
        assert_ne!(p, ds.manifest);
    }
}
