//! Contrastive losses over image embeddings `U` (n×d) and text embeddings
//! `V` (T×d), with analytic gradients.
//!
//! Logits are `τ·uᵢᵀvⱼ` with a trainable temperature `τ = exp(log_tau)`.
//! Gradients are taken with respect to the rows of `U` and `V` as given
//! (callers pass normalized embeddings and back-propagate through the
//! normalization themselves) and with respect to `log_tau`.
//!
//! Every reduction runs in index order, so results are bit-reproducible.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image {0} has an empty positive set")]
    EmptyPositiveSet(usize),
    #[error("text index {index} out of range ({len} texts)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("invalid temperature: {0}")]
    Temperature(String),
}

/// A d-dimensional feature vector, flagged when unit-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    normalized: bool,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Embedding { values, normalized: false }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub fn normalize(e: &Embedding) -> Result<Embedding, LossError> {
    let norm = e.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(LossError::ZeroVector);
    }
    Ok(Embedding {
        values: e.values.iter().map(|x| x / norm).collect(),
        normalized: true,
    })
}

/// Trainable logit scale, stored as its logarithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperature {
    log_tau: f64,
    pub trainable: bool,
    clamp_max: f64,
}

impl Temperature {
    pub const DEFAULT_TAU: f64 = 1.0 / 0.07;
    pub const DEFAULT_CLAMP: f64 = 100.0;

    pub fn new(tau: f64, trainable: bool) -> Result<Self, LossError> {
        Self::with_clamp(tau, trainable, Self::DEFAULT_CLAMP)
    }

    pub fn with_clamp(tau: f64, trainable: bool, clamp_max: f64) -> Result<Self, LossError> {
        if !(tau > 0.0 && tau <= clamp_max) || !tau.is_finite() {
            return Err(LossError::Temperature(format!("tau {tau} outside (0, {clamp_max}]")));
        }
        Ok(Temperature { log_tau: tau.ln(), trainable, clamp_max })
    }

    pub fn from_log(log_tau: f64) -> Result<Self, LossError> {
        Self::new(log_tau.exp(), true)
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn log_tau(&self) -> f64 {
        self.log_tau
    }

    pub fn clamp_max(&self) -> f64 {
        self.clamp_max
    }

    /// Checks the invariant `0 < τ ≤ clamp_max`, e.g. after deserializing.
    pub fn validate(&self) -> Result<(), LossError> {
        let tau = self.tau();
        if tau > 0.0 && tau <= self.clamp_max * (1.0 + 1e-12) && tau.is_finite() {
            Ok(())
        } else {
            Err(LossError::Temperature(format!("tau {tau} outside (0, {}]", self.clamp_max)))
        }
    }

    /// Gradient step on `log_tau`, clamped so that `τ ≤ clamp_max`.
    /// No-op when not trainable.
    pub fn step(&mut self, grad_log_tau: f64, lr: f64) {
        if self.trainable {
            self.log_tau = (self.log_tau - lr * grad_log_tau).min(self.clamp_max.ln());
        }
    }

    /// Unvalidated shift, used by finite differences.
    fn shifted(self, delta: f64) -> Self {
        Temperature { log_tau: self.log_tau + delta, ..self }
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::new(Self::DEFAULT_TAU, true).expect("default in range")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_u: Array2<f64>,
    pub grad_v: Array2<f64>,
    pub grad_log_tau: f64,
}

/// Accumulates the loss value and `∂L/∂logit` for one batch.
struct Accumulator {
    logits: Array2<f64>,
    dlogits: Array2<f64>,
    value: f64,
}

impl Accumulator {
    fn new(u: ArrayView2<f64>, v: ArrayView2<f64>, tau: f64) -> Self {
        let logits = u.dot(&v.t()) * tau;
        let dlogits = Array2::zeros(logits.raw_dim());
        Accumulator { logits, dlogits, value: 0.0 }
    }

    /// Adds `-scale · Σₖ wₖ log softmax(row i)ₖ` where the weights sum to 1.
    fn row_term(&mut self, i: usize, targets: &[(usize, f64)], scale: f64) {
        let row = self.logits.row(i);
        let lse = log_sum_exp(row.iter().copied());
        for &(k, w) in targets {
            self.value -= scale * w * (row[k] - lse);
        }
        for (j, &l) in row.iter().enumerate() {
            self.dlogits[[i, j]] += scale * (l - lse).exp();
        }
        for &(k, w) in targets {
            self.dlogits[[i, k]] -= scale * w;
        }
    }

    /// Adds `-scale · log softmax(column j)ᵢ`.
    fn column_term(&mut self, j: usize, target: usize, scale: f64) {
        let col = self.logits.column(j);
        let lse = log_sum_exp(col.iter().copied());
        self.value -= scale * (col[target] - lse);
        for (i, &l) in col.iter().enumerate() {
            self.dlogits[[i, j]] += scale * (l - lse).exp();
        }
        self.dlogits[[target, j]] -= scale;
    }

    fn finish(self, u: ArrayView2<f64>, v: ArrayView2<f64>, tau: f64) -> LossResult {
        // logits = τ S, so ∂L/∂S = τ G and ∂L/∂log τ = Σ G∘logits
        let grad_log_tau = self
            .dlogits
            .iter()
            .zip(self.logits.iter())
            .map(|(g, l)| g * l)
            .sum();
        let dsim = &self.dlogits * tau;
        LossResult {
            value: self.value,
            grad_u: dsim.dot(&v),
            grad_v: dsim.t().dot(&u),
            grad_log_tau,
        }
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_dims(u: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<(), LossError> {
    if u.nrows() == 0 {
        return Err(LossError::ShapeMismatch("no images".into()));
    }
    if u.ncols() != v.ncols() {
        return Err(LossError::ShapeMismatch(format!(
            "image dim {} != text dim {}",
            u.ncols(),
            v.ncols()
        )));
    }
    Ok(())
}

fn check_positive_sets(n: usize, m: usize, pos_sets: &[Vec<usize>]) -> Result<(), LossError> {
    if pos_sets.len() != n {
        return Err(LossError::ShapeMismatch(format!("{} positive sets for {n} images", pos_sets.len())));
    }
    for (i, set) in pos_sets.iter().enumerate() {
        if set.is_empty() {
            return Err(LossError::EmptyPositiveSet(i));
        }
        if let Some(&k) = set.iter().find(|&&k| k >= m) {
            return Err(LossError::IndexOutOfRange { index: k, len: m });
        }
    }
    Ok(())
}

fn check_owners(n: usize, t: usize, pos_owner: &[usize]) -> Result<(), LossError> {
    if pos_owner.len() > t {
        return Err(LossError::ShapeMismatch(format!("{} positives but {t} texts", pos_owner.len())));
    }
    if let Some(&i) = pos_owner.iter().find(|&&i| i >= n) {
        return Err(LossError::IndexOutOfRange { index: i, len: n });
    }
    Ok(())
}

fn i2t_terms(acc: &mut Accumulator, pos_sets: &[Vec<usize>], scale: f64) {
    for (i, set) in pos_sets.iter().enumerate() {
        let w = 1.0 / set.len() as f64;
        let targets: Vec<(usize, f64)> = set.iter().map(|&k| (k, w)).collect();
        acc.row_term(i, &targets, scale);
    }
}

fn t2i_terms(acc: &mut Accumulator, pos_owner: &[usize], scale: f64) {
    for (j, &owner) in pos_owner.iter().enumerate() {
        acc.column_term(j, owner, scale);
    }
}

/// Symmetric CLIP loss over n matched pairs (row i of `u` with row i of
/// `v`), averaged over the batch in each direction.
pub fn clip_loss(u: ArrayView2<f64>, v: ArrayView2<f64>, tau: Temperature) -> Result<LossResult, LossError> {
    check_dims(u, v)?;
    let n = u.nrows();
    if v.nrows() != n {
        return Err(LossError::ShapeMismatch(format!("{n} images but {} texts", v.nrows())));
    }
    let scale = 0.5 / n as f64;
    let mut acc = Accumulator::new(u, v, tau.tau());
    for i in 0..n {
        acc.row_term(i, &[(i, 1.0)], scale);
    }
    for j in 0..n {
        acc.column_term(j, j, scale);
    }
    Ok(acc.finish(u, v, tau.tau()))
}

/// Image-to-text loss with multiple positives per image:
/// `-Σᵢ 1/|P(i)| Σ_{k∈P(i)} log softmaxⱼ(τ uᵢᵀvⱼ)ₖ`, the softmax running
/// over every text, negatives included.
pub fn mosaiclip_i2t(
    u: ArrayView2<f64>,
    v: ArrayView2<f64>,
    pos_sets: &[Vec<usize>],
    tau: Temperature,
) -> Result<LossResult, LossError> {
    check_dims(u, v)?;
    check_positive_sets(u.nrows(), v.nrows(), pos_sets)?;
    let mut acc = Accumulator::new(u, v, tau.tau());
    i2t_terms(&mut acc, pos_sets, 1.0);
    Ok(acc.finish(u, v, tau.tau()))
}

/// Text-to-image loss over the positive texts only (`j < pos_owner.len()`):
/// `-Σⱼ log softmaxᵢ(τ uᵢᵀvⱼ)_{p(j)}`.
pub fn mosaiclip_t2i(
    u: ArrayView2<f64>,
    v: ArrayView2<f64>,
    pos_owner: &[usize],
    tau: Temperature,
) -> Result<LossResult, LossError> {
    check_dims(u, v)?;
    check_owners(u.nrows(), v.nrows(), pos_owner)?;
    let mut acc = Accumulator::new(u, v, tau.tau());
    t2i_terms(&mut acc, pos_owner, 1.0);
    Ok(acc.finish(u, v, tau.tau()))
}

/// Mean of [`mosaiclip_i2t`] and [`mosaiclip_t2i`].
pub fn mosaiclip_loss(
    u: ArrayView2<f64>,
    v: ArrayView2<f64>,
    pos_sets: &[Vec<usize>],
    pos_owner: &[usize],
    tau: Temperature,
) -> Result<LossResult, LossError> {
    check_dims(u, v)?;
    check_positive_sets(u.nrows(), v.nrows(), pos_sets)?;
    check_owners(u.nrows(), v.nrows(), pos_owner)?;
    let mut acc = Accumulator::new(u, v, tau.tau());
    i2t_terms(&mut acc, pos_sets, 0.5);
    t2i_terms(&mut acc, pos_owner, 0.5);
    Ok(acc.finish(u, v, tau.tau()))
}

/// Compares analytic gradients with central differences of step `h` over
/// every entry of `u`, `v` and `log_tau`. Returns the largest
/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn check_gradients<F>(
    loss_fn: F,
    u: ArrayView2<f64>,
    v: ArrayView2<f64>,
    tau: Temperature,
    h: f64,
) -> Result<f64, LossError>
where
    F: Fn(ArrayView2<f64>, ArrayView2<f64>, Temperature) -> Result<LossResult, LossError>,
{
    let eval = |u: ArrayView2<f64>, v: ArrayView2<f64>, t: Temperature| -> Result<f64, LossError> {
        let value = loss_fn(u, v, t)?.value;
        if value.is_finite() {
            Ok(value)
        } else {
            Err(LossError::NonFiniteLoss)
        }
    };
    let analytic = loss_fn(u, v, tau)?;
    if !analytic.value.is_finite() {
        return Err(LossError::NonFiniteLoss);
    }
    let rel = |a: f64, n: f64| (a - n).abs() / n.abs().max(1.0);
    let mut worst: f64 = 0.0;

    let mut up = u.to_owned();
    for idx in 0..up.len() {
        let (r, c) = (idx / up.ncols(), idx % up.ncols());
        let orig = up[[r, c]];
        up[[r, c]] = orig + h;
        let plus = eval(up.view(), v, tau)?;
        up[[r, c]] = orig - h;
        let minus = eval(up.view(), v, tau)?;
        up[[r, c]] = orig;
        worst = worst.max(rel(analytic.grad_u[[r, c]], (plus - minus) / (2.0 * h)));
    }
    let mut vp = v.to_owned();
    for idx in 0..vp.len() {
        let (r, c) = (idx / vp.ncols(), idx % vp.ncols());
        let orig = vp[[r, c]];
        vp[[r, c]] = orig + h;
        let plus = eval(u, vp.view(), tau)?;
        vp[[r, c]] = orig - h;
        let minus = eval(u, vp.view(), tau)?;
        vp[[r, c]] = orig;
        worst = worst.max(rel(analytic.grad_v[[r, c]], (plus - minus) / (2.0 * h)));
    }
    let plus = eval(u, v, tau.shifted(h))?;
    let minus = eval(u, v, tau.shifted(-h))?;
    worst = worst.max(rel(analytic.grad_log_tau, (plus - minus) / (2.0 * h)));
    Ok(worst)
}

/// A random loss input: unit-norm rows, a partition of the first `m`
/// texts among the images (each image owning at least one), and `r`
/// trailing negatives.
#[derive(Debug, Clone)]
pub struct RandomBatch {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub pos_sets: Vec<Vec<usize>>,
    pub pos_owner: Vec<usize>,
    pub tau: Temperature,
}

impl RandomBatch {
    /// `n ≤ max_images`, `m + r ≤ max_texts` (with `m ≥ n`), `d ≤ max_dim`,
    /// τ in [0.5, 20].
    pub fn generate(rng: &mut Rng, max_images: usize, max_texts: usize, max_dim: usize) -> Self {
        let n = rng.random_range(1..=max_images);
        let total = rng.random_range(n..=max_texts.max(n));
        let m = rng.random_range(n..=total);
        let d = rng.random_range(2..=max_dim.max(2));
        Self::with_shape(rng, n, m, total - m, d)
    }

    pub fn with_shape(rng: &mut Rng, n: usize, m: usize, r: usize, d: usize) -> Self {
        assert!(m >= n && n >= 1);
        let mut unit_rows = |rows: usize| {
            let mut a = Array2::<f64>::zeros((rows, d));
            for mut row in a.rows_mut() {
                loop {
                    row.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
                    let norm = row.dot(&row).sqrt();
                    if norm > 1e-3 {
                        row /= norm;
                        break;
                    }
                }
            }
            a
        };
        let u = unit_rows(n);
        let v = unit_rows(m + r);
        let mut pos_owner: Vec<usize> = (0..n).collect();
        pos_owner.extend((n..m).map(|_| rng.random_range(0..n)));
        let mut pos_sets = vec![Vec::new(); n];
        for (j, &i) in pos_owner.iter().enumerate() {
            pos_sets[i].push(j);
        }
        let tau = Temperature::new(rng.random_range(0.5..20.0), true).expect("in range");
        RandomBatch { u, v, pos_sets, pos_owner, tau }
    }

    pub fn n_pos(&self) -> usize {
        self.pos_owner.len()
    }
}
