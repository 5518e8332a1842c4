//! AdamW with decoupled weight decay and a linear-warmup cosine schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_LR_PEAK: f64 = 1e-4;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-5;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimHyper {
    pub lr_peak: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub lr_final: f64,
}

impl OptimHyper {
    /// Defaults with warmup set to `warmup_fraction` of `total_steps`.
    pub fn for_steps(total_steps: u64, warmup_fraction: f64) -> Self {
        Self {
            warmup_steps: (total_steps as f64 * warmup_fraction).round() as u64,
            total_steps,
            ..Self::default()
        }
    }
}

impl Default for OptimHyper {
    fn default() -> Self {
        Self {
            lr_peak: DEFAULT_LR_PEAK,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            warmup_steps: 0,
            total_steps: 0,
            lr_final: 0.0,
        }
    }
}

/// Learning rate at `step`: linear ramp from 0 to `lr_peak` over the warmup,
/// then cosine decay to `lr_final` at `total_steps`. Steps past the end clamp
/// to `lr_final`.
pub fn cosine_lr(step: u64, hyper: &OptimHyper) -> f64 {
    if step > hyper.total_steps {
        return hyper.lr_final;
    }
    if step < hyper.warmup_steps {
        return hyper.lr_peak * step as f64 / hyper.warmup_steps as f64;
    }
    let span = hyper.total_steps.saturating_sub(hyper.warmup_steps);
    if span == 0 {
        return hyper.lr_peak;
    }
    let progress = (step - hyper.warmup_steps) as f64 / span as f64;
    hyper.lr_final
        + 0.5 * (hyper.lr_peak - hyper.lr_final) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// A model whose trainable state is a fixed list of flat tensors.
pub trait Parameters<T> {
    fn tensors(&self) -> Vec<&[T]>;
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;
}

/// First and second moments shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub hyper: OptimHyper,
}

impl<T: Scalar> OptimState<T> {
    pub fn new<P: Parameters<T>>(params: &P, hyper: OptimHyper) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| vec![T::zero(); t.len()])
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
            hyper,
        }
    }

    /// Scheduled update. The update being taken is number `step + 1`, and its
    /// learning rate is `cosine_lr(step + 1)`.
    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) -> Result<f64> {
        let lr = cosine_lr(self.step + 1, &self.hyper);
        self.update(params, grads, lr)?;
        Ok(lr)
    }

    /// One AdamW update at an explicit learning rate.
    pub fn update<P: Parameters<T>>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let grads = grads.tensors();
        if grads.len() != self.m.len()
            || grads.iter().zip(&self.m).any(|(g, m)| g.len() != m.len())
        {
            return Err(Error::Shape("gradient shapes differ from optimizer state".into()));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical(format!(
                "non-finite gradient at step {}",
                self.step + 1
            )));
        }
        let h = &self.hyper;
        let t = (self.step + 1) as i32;
        let b1 = T::from_f64_lossy(h.beta1);
        let b2 = T::from_f64_lossy(h.beta2);
        let one = T::one();
        let bias1 = one - b1.powi(t);
        let bias2 = one - b2.powi(t);
        let lr_t = T::from_f64_lossy(lr);
        let eps = T::from_f64_lossy(h.eps);
        let decay = one - lr_t * T::from_f64_lossy(h.weight_decay);

        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Flat(Vec<f64>);

    impl Parameters<f64> for Flat {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    fn hyper() -> OptimHyper {
        OptimHyper {
            warmup_steps: 10,
            total_steps: 110,
            ..OptimHyper::default()
        }
    }

    #[test]
    fn schedule_landmarks() {
        let h = hyper();
        assert_eq!(cosine_lr(0, &h), 0.0);
        assert_eq!(cosine_lr(5, &h), 0.5e-4);
        assert_eq!(cosine_lr(10, &h), 1e-4);
        assert!((cosine_lr(60, &h) - 0.5e-4).abs() < 1e-18);
        assert!(cosine_lr(110, &h).abs() < 1e-20);
        assert_eq!(cosine_lr(500, &h), 0.0);
        let with_floor = OptimHyper { lr_final: 1e-6, ..h };
        assert_eq!(cosine_lr(500, &with_floor), 1e-6);
        assert!((cosine_lr(110, &with_floor) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let h = hyper();
        for s in 10..110 {
            assert!(cosine_lr(s + 1, &h) <= cosine_lr(s, &h));
        }
    }

    #[test]
    fn no_warmup() {
        let h = OptimHyper {
            warmup_steps: 0,
            total_steps: 4,
            ..OptimHyper::default()
        };
        assert_eq!(cosine_lr(0, &h), 1e-4);
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut p = Flat(vec![0.3, -1.2]);
        let before = p.clone();
        let mut st = OptimState::new(&p, OptimHyper { weight_decay: 0.0, ..hyper() });
        st.update(&mut p, &Flat(vec![0.0, 0.0]), 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_lr_sized() {
        let mut p = Flat(vec![0.0]);
        let mut st = OptimState::new(&p, OptimHyper { weight_decay: 0.0, ..hyper() });
        st.update(&mut p, &Flat(vec![1.0]), 1e-3).unwrap();
        // m_hat = v_hat = 1 at t = 1
        let expected = -1e-3 / (1.0 + 1e-8);
        assert_eq!(p.0[0], expected);
    }

    #[test]
    fn decoupled_decay_only() {
        let mut p = Flat(vec![2.0]);
        let mut st = OptimState::new(&p, OptimHyper { weight_decay: 0.1, ..hyper() });
        st.update(&mut p, &Flat(vec![0.0]), 1e-2).unwrap();
        assert_eq!(p.0[0], 2.0 * (1.0 - 1e-2 * 0.1));
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = Flat(vec![1.0]);
        let mut st = OptimState::new(&p, hyper());
        let err = st.update(&mut p, &Flat(vec![f64::NAN]), 1e-3).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert_eq!(p.0, vec![1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn scheduled_step_uses_next_step_rate() {
        let mut p = Flat(vec![0.0]);
        let mut st = OptimState::new(&p, OptimHyper { weight_decay: 0.0, ..hyper() });
        let lr = st.step(&mut p, &Flat(vec![1.0])).unwrap();
        assert_eq!(lr, 1e-5);
        assert_eq!(st.step, 1);
    }
}
