use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{forward_unchecked, loss_and_grad, softmax, Bag, GmaParams, HeadKind, Target, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::metrics::{binary_auc, macro_ovr_auc, rmse, RmseUnits, TargetStats};
use crate::optim::{OptimHyper, OptimState, DEFAULT_WARMUP_FRACTION};
use crate::scalar::Scalar;
use crate::seed::rng_from_seed;

pub const DEFAULT_EPOCHS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub hidden: usize,
    /// Learning-rate, moment and decay settings. `warmup_steps` and
    /// `total_steps` are recomputed from the training list length.
    pub hyper: OptimHyper,
    pub warmup_fraction: f64,
    /// Evaluate the validation set after every epoch for the training curve.
    pub track_validation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            hidden: DEFAULT_HIDDEN,
            hyper: OptimHyper::default(),
            warmup_fraction: DEFAULT_WARMUP_FRACTION,
            track_validation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: GmaParams<T>,
    /// AUC for classification, negative RMSE (bag target units) for regression.
    pub val_metric: f64,
    /// Head outputs for each validation bag, in input order.
    pub val_outputs: Vec<Vec<T>>,
    pub curve: Vec<EpochRecord>,
}

/// Validation metric for head outputs: AUC (binary or macro one-vs-rest) or
/// negative RMSE.
pub fn validation_metric<T: Scalar>(outputs: &[Vec<T>], bags: &[&Bag<T>], kind: HeadKind) -> Result<f64> {
    match kind {
        HeadKind::Classification => {
            let c = outputs.first().map_or(0, |o| o.len());
            let labels: Vec<usize> = bags
                .iter()
                .map(|b| match b.target {
                    Target::Class(k) => Ok(k),
                    Target::Value(_) => Err(Error::InvalidInput("regression target in classification set".into())),
                })
                .collect::<Result<_>>()?;
            let probs: Vec<T> = outputs.iter().flat_map(|o| softmax(o)).collect();
            if c == 2 {
                let pos: Vec<T> = probs.chunks_exact(2).map(|r| r[1]).collect();
                let is_pos: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
                binary_auc(&pos, &is_pos)
            } else {
                Ok(macro_ovr_auc(&probs, c, &labels)?.value)
            }
        }
        HeadKind::Regression => {
            let preds: Vec<f64> = outputs.iter().map(|o| o[0].to_f64_lossy()).collect();
            let targets: Vec<f64> = bags
                .iter()
                .map(|b| match b.target {
                    Target::Value(v) => Ok(v),
                    Target::Class(_) => Err(Error::InvalidInput("class target in regression set".into())),
                })
                .collect::<Result<_>>()?;
            let unit = TargetStats { mean: 0.0, std: 1.0 };
            Ok(-rmse(&preds, &targets, &unit, RmseUnits::Normalized)?)
        }
    }
}

fn predict<T: Scalar>(p: &GmaParams<T>, bags: &[&Bag<T>]) -> Vec<Vec<T>> {
    bags.iter().map(|b| forward_unchecked(p, b).out.output).collect()
}

fn output_width(train: &[&Bag<impl Scalar>], kind: HeadKind) -> Result<usize> {
    match kind {
        HeadKind::Regression => Ok(1),
        HeadKind::Classification => {
            let max = train
                .iter()
                .filter_map(|b| match b.target {
                    Target::Class(k) => Some(k),
                    Target::Value(_) => None,
                })
                .max()
                .ok_or_else(|| Error::InvalidInput("no class targets".into()))?;
            Ok((max + 1).max(2))
        }
    }
}

/// Train a GMA model one bag per step for `cfg.epochs` passes over `train`,
/// reshuffled every epoch, and score the final model on `val`.
///
/// `outputs` fixes the head width; pass `None` to infer it from the training
/// targets (regression always uses one output).
pub fn train_slide_model<T: Scalar>(
    train: &[&Bag<T>],
    val: &[&Bag<T>],
    kind: HeadKind,
    outputs: Option<usize>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("training and validation sets must be nonempty".into()));
    }
    let dim = train[0].dim;
    if let Some(b) = train.iter().chain(val).find(|b| b.dim != dim) {
        return Err(Error::Shape(format!("bag dim {} vs {dim}", b.dim)));
    }
    let outputs = match outputs {
        Some(c) => c,
        None => output_width(train, kind)?,
    };
    let mut rng = rng_from_seed(seed);
    let mut params = GmaParams::<T>::init(dim, cfg.hidden, outputs, &mut rng);

    let total_steps = (cfg.epochs * train.len()) as u64;
    let hyper = OptimHyper {
        warmup_steps: (total_steps as f64 * cfg.warmup_fraction).round() as u64,
        total_steps,
        ..cfg.hyper
    };
    let mut opt = OptimState::new(&params, hyper);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let (loss, grads) = loss_and_grad(&params, train[i], kind)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += loss.to_f64_lossy();
            opt.step(&mut params, &grads)?;
        }
        let val_metric = if cfg.track_validation {
            validation_metric(&predict(&params, val), val, kind).ok()
        } else {
            None
        };
        curve.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_metric,
        });
    }

    let val_outputs = predict(&params, val);
    let val_metric = validation_metric(&val_outputs, val, kind)?;
    Ok(TrainOutcome {
        params,
        val_metric,
        val_outputs,
        curve,
    })
}

/// `epoch,train_loss,val_metric`
pub fn write_curve_csv<W: std::io::Write>(curve: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_metric")?;
    for r in curve {
        match r.val_metric {
            Some(m) => writeln!(out, "{},{},{}", r.epoch, r.train_loss, m)?,
            None => writeln!(out, "{},{},", r.epoch, r.train_loss)?,
        }
    }
    Ok(())
}
