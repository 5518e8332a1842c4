//! Tile-level multinomial logistic-regression probe and region maps.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featstore::FeatureMatrix;
use crate::gma::{softmax, EpochRecord};
use crate::metrics::macro_ovr_auc;
use crate::optim::{OptimHyper, OptimState, Parameters, DEFAULT_WARMUP_FRACTION};
use crate::paramfile::{self, ParamBlob};
use crate::preprocess::TileGrid;
use crate::scalar::Scalar;
use crate::seed::rng_from_seed;

pub const MAGIC: &[u8; 4] = b"PRBP";
pub const DEFAULT_PROBE_EPOCHS: usize = 50;
pub const DEFAULT_BATCH_SIZE: usize = 64;

/// `logits = W x + b` with `W: k × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams<T> {
    pub dim: usize,
    pub classes: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> ProbeParams<T> {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        Self { dim, classes, w: vec![T::zero(); classes * dim], b: vec![T::zero(); classes] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim == 0 {
            return Err(Error::InvalidInput(format!("probe needs k >= 2 and d >= 1, got {}x{}", self.classes, self.dim)));
        }
        if self.w.len() != self.classes * self.dim || self.b.len() != self.classes {
            return Err(Error::Shape("probe tensors do not match k × d".into()));
        }
        if self.w.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite probe parameter".into()));
        }
        Ok(())
    }

    pub fn logits(&self, x: &[T]) -> Vec<T> {
        (0..self.classes)
            .map(|c| {
                let row = &self.w[c * self.dim..(c + 1) * self.dim];
                row.iter().zip(x).fold(self.b[c], |acc, (&w, &v)| acc + w * v)
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[T]) -> Vec<T> {
        softmax(&self.logits(x))
    }
}

impl<T: Scalar> Parameters<T> for ProbeParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Labelled tiles as a row-major `rows × dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSet<T> {
    pub dim: usize,
    pub features: Vec<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> TileSet<T> {
    pub fn new(dim: usize) -> Self {
        Self { dim, features: Vec::new(), labels: Vec::new() }
    }

    pub fn push(&mut self, row: &[f32], label: usize) {
        self.features.extend(row.iter().map(|&v| T::from_f32_lossless(v)));
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn check(&self, classes: usize) -> Result<()> {
        if self.features.len() != self.labels.len() * self.dim {
            return Err(Error::Shape("tile features do not match labels × dim".into()));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidInput(format!("tile label {l} out of range for {classes} classes")));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite tile feature".into()));
        }
        Ok(())
    }
}

/// Mean cross-entropy over `idx` and its gradient.
pub fn probe_loss_and_grad<T: Scalar>(p: &ProbeParams<T>, set: &TileSet<T>, idx: &[usize]) -> (T, ProbeParams<T>) {
    let mut g = ProbeParams::zeros(p.dim, p.classes);
    let mut loss = T::zero();
    let scale = T::one() / T::from_usize(idx.len().max(1)).unwrap();
    for &i in idx {
        let x = set.row(i);
        let logits = p.logits(x);
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = logits.iter().map(|&o| (o - max).exp()).sum::<T>().ln() + max;
        loss += (lse - logits[set.labels[i]]) * scale;
        let mut d = softmax(&logits);
        d[set.labels[i]] -= T::one();
        for (c, &dc) in d.iter().enumerate() {
            let dc = dc * scale;
            g.b[c] += dc;
            for (gw, &xj) in g.w[c * p.dim..(c + 1) * p.dim].iter_mut().zip(x) {
                *gw += dc * xj;
            }
        }
    }
    (loss, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hyper: OptimHyper,
    pub warmup_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_PROBE_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            hyper: OptimHyper::default(),
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome<T> {
    pub params: ProbeParams<T>,
    pub val_macro_auc: f64,
    pub curve: Vec<EpochRecord>,
}

pub fn predict_probabilities<T: Scalar>(p: &ProbeParams<T>, set: &TileSet<T>) -> Vec<T> {
    (0..set.len()).flat_map(|i| p.probabilities(set.row(i))).collect()
}

/// Fit the probe with minibatch AdamW on a warmup-cosine schedule and score
/// validation tiles by macro one-vs-rest AUC. Parameters start at zero.
pub fn probe_train<T: Scalar>(
    train: &TileSet<T>,
    val: &TileSet<T>,
    classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeOutcome<T>> {
    if classes < 2 {
        return Err(Error::InvalidInput("probe needs at least two classes".into()));
    }
    if train.dim != val.dim {
        return Err(Error::Shape(format!("train dim {} vs val dim {}", train.dim, val.dim)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidInput("batch_size must be positive".into()));
    }
    train.check(classes)?;
    val.check(classes)?;
    if val.is_empty() {
        return Err(Error::InvalidInput("empty validation tile set".into()));
    }
    let mut present = vec![false; classes];
    for &l in &train.labels {
        present[l] = true;
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::InfeasibleTask(format!("class {c} has no training tiles")));
    }

    let mut params = ProbeParams::<T>::zeros(train.dim, classes);
    let batches = train.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches) as u64;
    let hyper = OptimHyper {
        warmup_steps: (total_steps as f64 * cfg.warmup_fraction).round() as u64,
        total_steps,
        ..cfg.hyper
    };
    let mut opt = OptimState::new(&params, hyper);
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = probe_loss_and_grad(&params, train, batch);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite probe loss at epoch {epoch}")));
            }
            loss_sum += loss.to_f64_lossy() * batch.len() as f64;
            opt.step(&mut params, &grads)?;
        }
        curve.push(EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, val_metric: None });
    }
    let probs = predict_probabilities(&params, val);
    let auc = macro_ovr_auc(&probs, classes, &val.labels)?.value;
    if let Some(last) = curve.last_mut() {
        last.val_metric = Some(auc);
    }
    Ok(ProbeOutcome { params, val_macro_auc: auc, curve })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub x: u32,
    pub y: u32,
    pub pred_class: usize,
    pub prob: f64,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted class and its probability for every tile in `grid`.
pub fn region_map<T: Scalar>(params: &ProbeParams<T>, grid: &TileGrid, features: &FeatureMatrix) -> Result<Vec<RegionCell>> {
    params.validate()?;
    if features.rows != grid.len() {
        return Err(Error::Shape(format!("{} feature rows for {} tiles", features.rows, grid.len())));
    }
    if features.rows > 0 && features.dim != params.dim {
        return Err(Error::Shape(format!("feature dim {} vs probe dim {}", features.dim, params.dim)));
    }
    if let Some(coords) = &features.coords {
        if coords != &grid.tiles {
            return Err(Error::Shape("feature coordinates do not follow the grid".into()));
        }
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut x = vec![T::zero(); params.dim];
    for (r, t) in grid.tiles.iter().enumerate() {
        for (dst, &v) in x.iter_mut().zip(features.row(r)) {
            *dst = T::from_f32_lossless(v);
        }
        let probs = params.probabilities(&x);
        let c = argmax(&probs);
        out.push(RegionCell { x: t.x, y: t.y, pred_class: c, prob: probs[c].to_f64_lossy() });
    }
    Ok(out)
}

/// `slide_id,x,y,pred_class,prob`
pub fn write_region_map<W: Write>(slide_id: &str, cells: &[RegionCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slide_id", "x", "y", "pred_class", "prob"])?;
    for c in cells {
        w.write_record([slide_id, &c.x.to_string(), &c.y.to_string(), &c.pred_class.to_string(), &c.prob.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn encode_params<T: Scalar>(p: &ProbeParams<T>, label: &str) -> Result<Vec<u8>> {
    p.validate()?;
    let values = p.w.iter().chain(&p.b).map(|v| v.to_f64_lossy()).collect();
    paramfile::encode(MAGIC, &ParamBlob { dims: vec![p.classes as u32, p.dim as u32], label: label.into(), values })
}

pub fn decode_params<T: Scalar>(bytes: &[u8]) -> Result<(ProbeParams<T>, String)> {
    let blob = paramfile::decode(MAGIC, bytes)?;
    let [k, d] = blob.dims[..] else {
        return Err(Error::Format("PRBP needs two dims".into()));
    };
    let (k, d) = (k as usize, d as usize);
    if blob.values.len() != k * d + k {
        return Err(Error::CorruptFile(format!("expected {} values, found {}", k * d + k, blob.values.len())));
    }
    let conv = |v: &[f64]| v.iter().map(|&x| T::from_f64_lossy(x)).collect();
    let p = ProbeParams { dim: d, classes: k, w: conv(&blob.values[..k * d]), b: conv(&blob.values[k * d..]) };
    p.validate()?;
    Ok((p, blob.label))
}

pub fn write_params<T: Scalar>(p: &ProbeParams<T>, label: &str, path: &Path) -> Result<()> {
    std::fs::write(path, encode_params(p, label)?)?;
    Ok(())
}

pub fn read_params<T: Scalar>(path: &Path) -> Result<(ProbeParams<T>, String)> {
    decode_params(&std::fs::read(path)?)
}
