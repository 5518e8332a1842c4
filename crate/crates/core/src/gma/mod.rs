//! Gated-attention multiple-instance learning with a linear head.
//!
//! For a bag of tile features `h_1..h_n`:
//!
//! ```text
//! score_i   = wᵀ (tanh(V h_i) ⊙ sigmoid(U h_i))
//! attention = softmax(score)
//! z         = Σ attention_i · h_i
//! output    = W z + b
//! ```
//!
//! Gradients are derived by hand; see `loss_and_grad`.

pub mod io;
mod train;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Parameters;
use crate::scalar::Scalar;

pub use train::{train_slide_model, validation_metric, write_curve_csv, EpochRecord, TrainConfig, TrainOutcome, DEFAULT_EPOCHS};

pub const DEFAULT_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classification,
    Regression,
}

/// All trainable tensors. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GmaParams<T> {
    pub dim: usize,
    pub hidden: usize,
    pub outputs: usize,
    /// `hidden × dim`, tanh branch.
    pub attn_v: Vec<T>,
    /// `hidden × dim`, sigmoid gate.
    pub attn_u: Vec<T>,
    /// `hidden`, attention scorer.
    pub attn_w: Vec<T>,
    /// `outputs × dim`.
    pub head_w: Vec<T>,
    /// `outputs`.
    pub head_b: Vec<T>,
}

/// Same shape as the parameters.
pub type GmaGrads<T> = GmaParams<T>;

impl<T: Scalar> GmaParams<T> {
    pub fn zeros(dim: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            dim,
            hidden,
            outputs,
            attn_v: vec![T::zero(); hidden * dim],
            attn_u: vec![T::zero(); hidden * dim],
            attn_w: vec![T::zero(); hidden],
            head_w: vec![T::zero(); outputs * dim],
            head_b: vec![T::zero(); outputs],
        }
    }

    /// Weights from `U(−1/√fan_in, 1/√fan_in)`, biases zero.
    pub fn init<R: Rng>(dim: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(dim, hidden, outputs);
        let fill = |buf: &mut Vec<T>, fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in buf.iter_mut() {
                *v = T::from_f64_lossy(rng.gen_range(-bound..bound));
            }
        };
        fill(&mut p.attn_v, dim, rng);
        fill(&mut p.attn_u, dim, rng);
        fill(&mut p.attn_w, hidden, rng);
        fill(&mut p.head_w, dim, rng);
        p
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, c) = (self.dim, self.hidden, self.outputs);
        if d == 0 || h == 0 || c == 0 {
            return Err(Error::Shape("zero-sized GMA dimension".into()));
        }
        if self.attn_v.len() != h * d
            || self.attn_u.len() != h * d
            || self.attn_w.len() != h
            || self.head_w.len() != c * d
            || self.head_b.len() != c
        {
            return Err(Error::Shape("GMA tensor sizes inconsistent with dims".into()));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidData("non-finite GMA parameter".into()));
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> GmaParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64_lossy())).collect();
        GmaParams {
            dim: self.dim,
            hidden: self.hidden,
            outputs: self.outputs,
            attn_v: c(&self.attn_v),
            attn_u: c(&self.attn_u),
            attn_w: c(&self.attn_w),
            head_w: c(&self.head_w),
            head_b: c(&self.head_b),
        }
    }
}

impl<T> Parameters<T> for GmaParams<T> {
    fn tensors(&self) -> Vec<&[T]> {
        vec![&self.attn_v, &self.attn_u, &self.attn_w, &self.head_w, &self.head_b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.attn_v,
            &mut self.attn_u,
            &mut self.attn_w,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    Value(f64),
}

/// One slide: `n × dim` tile features and its label. Features are shared, so
/// cloning or relabelling a bag does not copy them.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag<T> {
    pub features: Arc<[T]>,
    pub n: usize,
    pub dim: usize,
    pub target: Target,
}

impl<T: Scalar> Bag<T> {
    pub fn new(features: Vec<T>, dim: usize, target: Target) -> Result<Self> {
        if dim == 0 || features.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                features.len()
            )));
        }
        let n = features.len() / dim;
        if n == 0 {
            return Err(Error::InvalidInput("a bag needs at least one tile".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite tile feature".into()));
        }
        Ok(Self {
            features: features.into(),
            n,
            dim,
            target,
        })
    }

    /// Upcast stored `f32` features.
    pub fn from_f32(features: &[f32], dim: usize, target: Target) -> Result<Self> {
        Self::new(features.iter().map(|&v| T::from_f32_lossless(v)).collect(), dim, target)
    }

    pub fn with_target(&self, target: Target) -> Self {
        Self { target, ..self.clone() }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmaOutput<T> {
    pub attention: Vec<T>,
    pub embedding: Vec<T>,
    pub output: Vec<T>,
}

/// Activations kept for the backward pass.
struct Activations<T> {
    /// `n × hidden`
    tanh: Vec<T>,
    /// `n × hidden`
    gate: Vec<T>,
    out: GmaOutput<T>,
}

/// Eight independent partial sums so the loop vectorises.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

fn check_bag<T: Scalar>(p: &GmaParams<T>, bag: &Bag<T>) -> Result<()> {
    if bag.dim != p.dim {
        return Err(Error::Shape(format!(
            "bag dim {} vs model dim {}",
            bag.dim, p.dim
        )));
    }
    if bag.n == 0 || bag.features.len() != bag.n * bag.dim {
        return Err(Error::Shape("bag features do not match n × dim".into()));
    }
    if bag.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite tile feature".into()));
    }
    Ok(())
}

/// Row-major `rows × cols` to `cols × rows`.
fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// `acc += x · M` for `M` stored `len(x) × len(acc)` row-major; the inner
/// loop runs over the contiguous output so it vectorises.
#[inline]
fn accumulate_rows<T: Scalar>(acc: &mut [T], x: &[T], m: &[T]) {
    let h = acc.len();
    for (&xj, row) in x.iter().zip(m.chunks_exact(h)) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += xj * v;
        }
    }
}

fn forward_unchecked<T: Scalar>(p: &GmaParams<T>, bag: &Bag<T>) -> Activations<T> {
    let (n, d, h) = (bag.n, p.dim, p.hidden);
    let vt = transpose(&p.attn_v, h, d);
    let ut = transpose(&p.attn_u, h, d);
    let mut tanh = vec![T::zero(); n * h];
    let mut gate = vec![T::zero(); n * h];
    let mut scores = vec![T::zero(); n];
    for i in 0..n {
        let x = bag.row(i);
        let (a_row, g_row) = (&mut tanh[i * h..(i + 1) * h], &mut gate[i * h..(i + 1) * h]);
        accumulate_rows(a_row, x, &vt);
        accumulate_rows(g_row, x, &ut);
        let mut s = T::zero();
        for ((a, g), &w) in a_row.iter_mut().zip(g_row.iter_mut()).zip(&p.attn_w) {
            *a = a.tanh();
            *g = sigmoid(*g);
            s += w * *a * *g;
        }
        scores[i] = s;
    }
    let attention = softmax(&scores);
    let mut embedding = vec![T::zero(); d];
    for (i, &a) in attention.iter().enumerate() {
        for (e, &x) in embedding.iter_mut().zip(bag.row(i)) {
            *e += a * x;
        }
    }
    let output = (0..p.outputs)
        .map(|c| dot(&p.head_w[c * d..(c + 1) * d], &embedding) + p.head_b[c])
        .collect();
    Activations {
        tanh,
        gate,
        out: GmaOutput {
            attention,
            embedding,
            output,
        },
    }
}

/// Attention weights, pooled slide embedding and head output for one bag.
pub fn gma_forward<T: Scalar>(p: &GmaParams<T>, bag: &Bag<T>) -> Result<GmaOutput<T>> {
    check_bag(p, bag)?;
    Ok(forward_unchecked(p, bag).out)
}

/// Loss and its derivative with respect to the head output.
fn head_loss<T: Scalar>(output: &[T], target: Target, kind: HeadKind) -> Result<(T, Vec<T>)> {
    match (kind, target) {
        (HeadKind::Classification, Target::Class(y)) => {
            if y >= output.len() {
                return Err(Error::InvalidInput(format!(
                    "class {y} out of range for {} outputs",
                    output.len()
                )));
            }
            let max = output.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = output.iter().map(|&o| (o - max).exp()).sum::<T>().ln() + max;
            let mut grad = softmax(output);
            grad[y] -= T::one();
            Ok((lse - output[y], grad))
        }
        (HeadKind::Regression, Target::Value(t)) => {
            if output.len() != 1 {
                return Err(Error::Shape("regression head must have one output".into()));
            }
            let diff = output[0] - T::from_f64_lossy(t);
            Ok((T::from_f64_lossy(0.5) * diff * diff, vec![diff]))
        }
        _ => Err(Error::InvalidInput("target kind does not match head kind".into())),
    }
}

pub fn loss<T: Scalar>(p: &GmaParams<T>, bag: &Bag<T>, kind: HeadKind) -> Result<T> {
    check_bag(p, bag)?;
    let act = forward_unchecked(p, bag);
    Ok(head_loss(&act.out.output, bag.target, kind)?.0)
}

/// Loss and exact gradients for one bag.
///
/// With `δo = ∂L/∂output`:
///
/// ```text
/// ∂W = δo zᵀ          ∂b = δo          ∂z = Wᵀ δo
/// ∂α_i = ∂z · h_i     ∂s_i = α_i (∂α_i − Σ_j α_j ∂α_j)
/// ∂w = Σ_i ∂s_i e_i   with e_i = a_i ⊙ g_i
/// ∂V += ((∂s_i w ⊙ g_i) ⊙ (1 − a_i²)) h_iᵀ
/// ∂U += ((∂s_i w ⊙ a_i) ⊙ g_i (1 − g_i)) h_iᵀ
/// ```
pub fn loss_and_grad<T: Scalar>(
    p: &GmaParams<T>,
    bag: &Bag<T>,
    kind: HeadKind,
) -> Result<(T, GmaGrads<T>)> {
    check_bag(p, bag)?;
    let (n, d, h, c) = (bag.n, p.dim, p.hidden, p.outputs);
    let act = forward_unchecked(p, bag);
    let (loss, d_out) = head_loss(&act.out.output, bag.target, kind)?;
    let mut g = GmaParams::zeros(d, h, c);

    let z = &act.out.embedding;
    let mut d_z = vec![T::zero(); d];
    for k in 0..c {
        g.head_b[k] = d_out[k];
        let w_row = &p.head_w[k * d..(k + 1) * d];
        let gw_row = &mut g.head_w[k * d..(k + 1) * d];
        for j in 0..d {
            gw_row[j] = d_out[k] * z[j];
            d_z[j] += d_out[k] * w_row[j];
        }
    }

    let alpha = &act.out.attention;
    let d_alpha: Vec<T> = (0..n).map(|i| dot(&d_z, bag.row(i))).collect();
    let mean_d_alpha: T = alpha.iter().zip(&d_alpha).map(|(&a, &da)| a * da).sum();

    // Gradients of V and U accumulate transposed (d × h), like the forward.
    let mut gvt = vec![T::zero(); d * h];
    let mut gut = vec![T::zero(); d * h];
    let mut d_pre_v = vec![T::zero(); h];
    let mut d_pre_u = vec![T::zero(); h];
    for i in 0..n {
        let d_score = alpha[i] * (d_alpha[i] - mean_d_alpha);
        let x = bag.row(i);
        for k in 0..h {
            let a = act.tanh[i * h + k];
            let gt = act.gate[i * h + k];
            g.attn_w[k] += d_score * a * gt;
            let d_e = d_score * p.attn_w[k];
            d_pre_v[k] = d_e * gt * (T::one() - a * a);
            d_pre_u[k] = d_e * a * gt * (T::one() - gt);
        }
        for (j, &xj) in x.iter().enumerate() {
            for (gv, &dv) in gvt[j * h..(j + 1) * h].iter_mut().zip(&d_pre_v) {
                *gv += xj * dv;
            }
            for (gu, &du) in gut[j * h..(j + 1) * h].iter_mut().zip(&d_pre_u) {
                *gu += xj * du;
            }
        }
    }
    g.attn_v = transpose(&gvt, d, h);
    g.attn_u = transpose(&gut, d, h);
    Ok((loss, g))
}
