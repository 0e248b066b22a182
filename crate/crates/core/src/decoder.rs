//! Single-layer neural decoder trained by mini-batch SGD.
//!
//! Two heads share one linear map `z = W x + b`:
//!
//! * [`Head::Regression`] outputs `z` and trains on root-mean-square error;
//! * [`Head::SoftmaxClassifier`] outputs `softmax(z)` and trains on negative
//!   log likelihood.
//!
//! Weights are stored input-major (`in_dim x out_dim`, row `j` holding the
//! outgoing weights of input feature `j`), which keeps the sparse binary
//! forward pass contiguous. The model file uses the conventional
//! `out_dim x in_dim` row-major layout.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::hv::BinaryHypervector;
use crate::seed;

/// Floor applied to the labelled probability inside the NLL.
pub const PROB_FLOOR: f64 = 1e-12;

const FORMAT: &str = "hyperlock.model";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Regression,
    SoftmaxClassifier,
}

/// Something the decoder can read: a hypervector or a real vector.
pub trait DecoderInput {
    fn input_dim(&self) -> usize;
    /// Write the input as reals into `out` (length `input_dim`).
    fn write_dense(&self, out: &mut [f64]);
}

impl DecoderInput for BinaryHypervector {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn write_dense(&self, out: &mut [f64]) {
        self.write_f64(out);
    }
}

impl DecoderInput for [f64] {
    fn input_dim(&self) -> usize {
        self.len()
    }

    fn write_dense(&self, out: &mut [f64]) {
        out.copy_from_slice(self);
    }
}

impl DecoderInput for Vec<f64> {
    fn input_dim(&self) -> usize {
        self.len()
    }

    fn write_dense(&self, out: &mut [f64]) {
        out.copy_from_slice(self);
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TargetRef<'a> {
    Class(usize),
    Values(&'a [f64]),
}

/// A supervised target: a class index or a real vector.
pub trait AsTarget {
    fn as_target(&self) -> TargetRef<'_>;
}

impl AsTarget for usize {
    fn as_target(&self) -> TargetRef<'_> {
        TargetRef::Class(*self)
    }
}

impl AsTarget for Vec<f64> {
    fn as_target(&self) -> TargetRef<'_> {
        TargetRef::Values(self)
    }
}

/// Affine input standardization `(x - mean) / scale`, fitted on training
/// inputs. A reparameterization only: it can be folded into `W` and `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl InputNorm {
    pub fn fit<'a, X: DecoderInput + ?Sized + 'a>(
        inputs: impl Iterator<Item = &'a X>,
        dim: usize,
    ) -> Result<Self> {
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        let mut buf = vec![0.0; dim];
        let mut n = 0usize;
        for x in inputs {
            check_len("input norm", dim, x.input_dim())?;
            x.write_dense(&mut buf);
            for ((s, q), &v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(&buf) {
                *s += v;
                *q += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("input norm samples"));
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let var = sum_sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / nf - m * m).max(0.0))
            .sum::<f64>()
            / dim as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(InputNorm { mean, scale })
    }

    fn apply(&self, x: &mut [f64]) {
        let inv = 1.0 / self.scale;
        for (v, m) in x.iter_mut().zip(&self.mean) {
            *v = (*v - m) * inv;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder {
    in_dim: usize,
    out_dim: usize,
    head: Head,
    weights: Vec<f64>,
    bias: Vec<f64>,
    norm: Option<InputNorm>,
}

impl LinearDecoder {
    /// Weights uniform in `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, head: Head, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(in_dim, out_dim, head)?;
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut rng = seed::stream(seed::derive(seed, "decoder/init"));
        for w in &mut model.weights {
            *w = rng.random_range(-bound..=bound);
        }
        Ok(model)
    }

    pub fn zeros(in_dim: usize, out_dim: usize, head: Head) -> Result<Self> {
        if in_dim == 0 {
            return Err(Error::config("in_dim", "must be positive"));
        }
        if out_dim == 0 {
            return Err(Error::config("out_dim", "must be positive"));
        }
        Ok(LinearDecoder {
            in_dim,
            out_dim,
            head,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            norm: None,
        })
    }

    /// Build from `out_dim x in_dim` row-major weights.
    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        head: Head,
        weights: &[f64],
        bias: Vec<f64>,
    ) -> Result<Self> {
        let mut model = Self::zeros(in_dim, out_dim, head)?;
        check_len("decoder weights", in_dim * out_dim, weights.len())?;
        check_len("decoder bias", out_dim, bias.len())?;
        check_finite(weights)?;
        check_finite(&bias)?;
        for o in 0..out_dim {
            for j in 0..in_dim {
                model.weights[j * out_dim + o] = weights[o * in_dim + j];
            }
        }
        model.bias = bias;
        Ok(model)
    }

    pub fn with_norm(mut self, norm: Option<InputNorm>) -> Result<Self> {
        if let Some(n) = &norm {
            check_len("input norm", self.in_dim, n.mean.len())?;
        }
        self.norm = norm;
        Ok(self)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn norm(&self) -> Option<&InputNorm> {
        self.norm.as_ref()
    }

    /// Weight from input `input` to output `output`.
    pub fn weight(&self, output: usize, input: usize) -> f64 {
        self.weights[input * self.out_dim + output]
    }

    pub fn set_weight(&mut self, output: usize, input: usize, value: f64) {
        self.weights[input * self.out_dim + output] = value;
    }

    pub fn set_bias(&mut self, output: usize, value: f64) {
        self.bias[output] = value;
    }

    /// `out_dim x in_dim` row-major copy of the weights.
    pub fn weights_row_major(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.weights.len()];
        for j in 0..self.in_dim {
            for o in 0..self.out_dim {
                out[o * self.in_dim + j] = self.weights[j * self.out_dim + o];
            }
        }
        out
    }

    fn all_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn prepare(&self, x: &(impl DecoderInput + ?Sized), out: &mut [f64]) -> Result<()> {
        check_len("decoder input", self.in_dim, x.input_dim())?;
        x.write_dense(out);
        if let Some(norm) = &self.norm {
            norm.apply(out);
        }
        Ok(())
    }

    /// Pre-activation `W x + b`.
    pub fn logits(&self, x: &(impl DecoderInput + ?Sized)) -> Result<Vec<f64>> {
        let mut dense = vec![0.0; self.in_dim];
        self.prepare(x, &mut dense)?;
        let mut z = self.bias.clone();
        for (j, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                let row = &self.weights[j * self.out_dim..(j + 1) * self.out_dim];
                for (zo, &w) in z.iter_mut().zip(row) {
                    *zo += v * w;
                }
            }
        }
        Ok(z)
    }

    pub fn forward(&self, x: &(impl DecoderInput + ?Sized)) -> Result<Vec<f64>> {
        let mut z = self.logits(x)?;
        if self.head == Head::SoftmaxClassifier {
            softmax_in_place(&mut z);
        }
        Ok(z)
    }

    /// Arg-max of the output, ties going to the lowest index.
    pub fn predict_class(&self, x: &(impl DecoderInput + ?Sized)) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    fn dense_batch<X: DecoderInput, T>(&self, items: &[&(X, T)], buf: &mut Vec<f64>) -> Result<()> {
        buf.resize(items.len() * self.in_dim, 0.0);
        for ((x, _), row) in items.iter().map(|p| (&p.0, &p.1)).zip(buf.chunks_mut(self.in_dim)) {
            self.prepare(x, row)?;
        }
        Ok(())
    }

    /// Batch logits via one GEMM: `Z = X W + 1 b^T`.
    fn batch_logits(&self, xb: &[f64], n: usize) -> Vec<f64> {
        let mut z = vec![0.0; n * self.out_dim];
        // SAFETY: dimensions and strides describe the row-major buffers exactly.
        unsafe {
            matrixmultiply::dgemm(
                n,
                self.in_dim,
                self.out_dim,
                1.0,
                xb.as_ptr(),
                self.in_dim as isize,
                1,
                self.weights.as_ptr(),
                self.out_dim as isize,
                1,
                0.0,
                z.as_mut_ptr(),
                self.out_dim as isize,
                1,
            );
        }
        for row in z.chunks_mut(self.out_dim) {
            for (zo, b) in row.iter_mut().zip(&self.bias) {
                *zo += b;
            }
        }
        z
    }

    /// Mean batch loss and `dLoss/dZ`, overwriting `z` with the gradient.
    fn loss_and_delta(&self, z: &mut [f64], targets: &[TargetRef<'_>]) -> Result<f64> {
        let n = targets.len();
        let out = self.out_dim;
        match self.head {
            Head::SoftmaxClassifier => {
                let mut total = 0.0;
                for (row, t) in z.chunks_mut(out).zip(targets) {
                    let label = match *t {
                        TargetRef::Class(c) if c < out => c,
                        TargetRef::Class(c) => {
                            return Err(Error::Shape {
                                context: "class label",
                                expected: out,
                                got: c,
                            })
                        }
                        TargetRef::Values(_) => {
                            return Err(Error::config("target", "classifier needs class labels"))
                        }
                    };
                    softmax_in_place(row);
                    total += -row[label].max(PROB_FLOOR).ln();
                    row[label] -= 1.0;
                    for d in row.iter_mut() {
                        *d /= n as f64;
                    }
                }
                Ok(total / n as f64)
            }
            Head::Regression => {
                let mut sum_sq = 0.0;
                for (row, t) in z.chunks_mut(out).zip(targets) {
                    let values = match *t {
                        TargetRef::Values(v) => v,
                        TargetRef::Class(_) => {
                            return Err(Error::config("target", "regression needs value vectors"))
                        }
                    };
                    check_len("regression target", out, values.len())?;
                    for (d, &tv) in row.iter_mut().zip(values) {
                        *d -= tv;
                        sum_sq += *d * *d;
                    }
                }
                let count = (n * out) as f64;
                let loss = (sum_sq / count).sqrt();
                let scale = if loss > 0.0 { 1.0 / (count * loss) } else { 0.0 };
                for d in z.iter_mut() {
                    *d *= scale;
                }
                Ok(loss)
            }
        }
    }

    /// Weight and bias gradients of the mean loss over one batch.
    fn batch_gradient(&self, xb: &[f64], delta: &[f64], n: usize) -> Gradient {
        let mut weights = vec![0.0; self.in_dim * self.out_dim];
        // SAFETY: as in `batch_logits`, with X read transposed.
        unsafe {
            matrixmultiply::dgemm(
                self.in_dim,
                n,
                self.out_dim,
                1.0,
                xb.as_ptr(),
                1,
                self.in_dim as isize,
                delta.as_ptr(),
                self.out_dim as isize,
                1,
                0.0,
                weights.as_mut_ptr(),
                self.out_dim as isize,
                1,
            );
        }
        let mut bias = vec![0.0; self.out_dim];
        for row in delta.chunks(self.out_dim) {
            for (b, d) in bias.iter_mut().zip(row) {
                *b += d;
            }
        }
        Gradient {
            out_dim: self.out_dim,
            weights,
            bias,
        }
    }

    /// In-place SGD step `W -= lr * X^T delta`, `b -= lr * sum(delta)`.
    fn sgd_step(&mut self, xb: &[f64], delta: &[f64], n: usize, lr: f64) {
        // SAFETY: as in `batch_gradient`; beta = 1 accumulates into W.
        unsafe {
            matrixmultiply::dgemm(
                self.in_dim,
                n,
                self.out_dim,
                -lr,
                xb.as_ptr(),
                1,
                self.in_dim as isize,
                delta.as_ptr(),
                self.out_dim as isize,
                1,
                1.0,
                self.weights.as_mut_ptr(),
                self.out_dim as isize,
                1,
            );
        }
        for row in delta.chunks(self.out_dim) {
            for (b, d) in self.bias.iter_mut().zip(row) {
                *b -= lr * d;
            }
        }
    }

    /// Loss of the active head on one example.
    pub fn example_loss<X, T>(&self, x: &X, target: &T) -> Result<f64>
    where
        X: DecoderInput + ?Sized,
        T: AsTarget + ?Sized,
    {
        let mut dense = vec![0.0; self.in_dim];
        self.prepare(x, &mut dense)?;
        let mut z = self.batch_logits(&dense, 1);
        self.loss_and_delta(&mut z, &[target.as_target()])
    }

    /// Analytic gradient of [`example_loss`](Self::example_loss).
    pub fn example_gradient<X, T>(&self, x: &X, target: &T) -> Result<Gradient>
    where
        X: DecoderInput + ?Sized,
        T: AsTarget + ?Sized,
    {
        let mut dense = vec![0.0; self.in_dim];
        self.prepare(x, &mut dense)?;
        let mut z = self.batch_logits(&dense, 1);
        self.loss_and_delta(&mut z, &[target.as_target()])?;
        Ok(self.batch_gradient(&dense, &z, 1))
    }

    /// Loss over a whole set: mean NLL for the classifier, RMSE over every
    /// output of every example for the regressor.
    pub fn dataset_loss<X: DecoderInput, T: AsTarget>(&self, set: &[(X, T)]) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let mut buf = Vec::new();
        let mut acc = 0.0;
        for chunk in set.chunks(256) {
            let refs: Vec<&(X, T)> = chunk.iter().collect();
            self.dense_batch(&refs, &mut buf)?;
            let mut z = self.batch_logits(&buf, chunk.len());
            let targets: Vec<TargetRef<'_>> = chunk.iter().map(|(_, t)| t.as_target()).collect();
            let loss = self.loss_and_delta(&mut z, &targets)?;
            acc += match self.head {
                Head::SoftmaxClassifier => loss * chunk.len() as f64,
                Head::Regression => loss * loss * chunk.len() as f64,
            };
        }
        let mean = acc / set.len() as f64;
        Ok(match self.head {
            Head::SoftmaxClassifier => mean,
            Head::Regression => mean.sqrt(),
        })
    }
}

/// Gradient of a loss with respect to decoder parameters (input-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Gradient {
    pub fn weight(&self, output: usize, input: usize) -> f64 {
        self.weights[input * self.out_dim + output]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn loss_rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len("rmse", pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::Empty("rmse of empty vectors"));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

pub fn loss_nll(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::Shape {
            context: "class label",
            expected: probs.len(),
            got: label,
        });
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    /// Fit an [`InputNorm`] on the training inputs before the first epoch.
    #[serde(default)]
    pub standardize: bool,
    /// When validation stalls for `patience` epochs, halve the learning
    /// rate and resume from the best weights, at most this many times
    /// before stopping.
    #[serde(default)]
    pub plateau_halvings: usize,
}

impl TrainConfig {
    pub fn text_default() -> Self {
        TrainConfig {
            learning_rate: 0.2,
            batch_size: 64,
            max_epochs: 200,
            patience: 5,
            min_delta: 1e-4,
            seed: 0,
            standardize: false,
            plateau_halvings: 0,
        }
    }

    pub fn image_default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            batch_size: 8,
            max_epochs: 300,
            patience: 5,
            min_delta: 1e-4,
            seed: 0,
            standardize: true,
            plateau_halvings: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be positive"));
        }
        if !(self.min_delta.is_finite() && self.min_delta >= 0.0) {
            return Err(Error::config("min_delta", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_loss_history: Vec<f64>,
    pub val_loss_history: Vec<f64>,
    pub stopped_early: bool,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mini-batch SGD with seeded per-epoch shuffling and patience-based early
/// stopping on validation loss. Returns the best-validation weights.
pub fn train<X: DecoderInput + Clone, T: AsTarget + Clone>(
    model: LinearDecoder,
    train_set: &[(X, T)],
    val_set: &[(X, T)],
    cfg: &TrainConfig,
) -> Result<(LinearDecoder, TrainReport)> {
    train_with(model, |_| Ok(Cow::Borrowed(train_set)), val_set, cfg)
}

/// [`train`] with a training set supplied per epoch by `epoch_set(epoch)`
/// (1-based), e.g. fresh encryptions of the same plaintexts. The input
/// standardization, if enabled, is fitted on the first epoch's set.
pub fn train_with<'s, X, T, F>(
    mut model: LinearDecoder,
    mut epoch_set: F,
    val_set: &[(X, T)],
    cfg: &TrainConfig,
) -> Result<(LinearDecoder, TrainReport)>
where
    X: DecoderInput + Clone + 's,
    T: AsTarget + Clone + 's,
    F: FnMut(usize) -> Result<Cow<'s, [(X, T)]>>,
{
    cfg.validate()?;
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut train_set = epoch_set(1)?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.standardize {
        let norm = InputNorm::fit(train_set.iter().map(|(x, _)| x), model.in_dim)?;
        model = model.with_norm(Some(norm))?;
    }

    let mut rng = seed::stream(seed::derive(cfg.seed, "decoder/shuffle"));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut buf = Vec::new();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut patience_ref = f64::INFINITY;
    let mut bad_epochs = 0;
    let mut lr = cfg.learning_rate;
    let mut halvings_left = cfg.plateau_halvings;
    let mut report = TrainReport {
        epochs_run: 0,
        train_loss_history: Vec::new(),
        val_loss_history: Vec::new(),
        stopped_early: false,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };

    for epoch in 1..=cfg.max_epochs {
        if epoch > 1 {
            train_set = epoch_set(epoch)?;
            if train_set.is_empty() {
                return Err(Error::Empty("training set"));
            }
            if order.len() != train_set.len() {
                order = (0..train_set.len()).collect();
            }
        }
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<&(X, T)> = batch.iter().map(|&i| &train_set[i]).collect();
            model.dense_batch(&items, &mut buf)?;
            let mut z = model.batch_logits(&buf, items.len());
            let targets: Vec<TargetRef<'_>> = items.iter().map(|(_, t)| t.as_target()).collect();
            let loss = model.loss_and_delta(&mut z, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            weighted += loss * items.len() as f64;
            model.sgd_step(&buf, &z, items.len(), lr);
        }
        if !model.all_finite() {
            return Err(Error::Divergence { epoch });
        }
        let val = model.dataset_loss(val_set)?;
        if !val.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        report.train_loss_history.push(weighted / order.len() as f64);
        report.val_loss_history.push(val);
        report.epochs_run = epoch;

        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best = model.clone();
        }
        if val < patience_ref - cfg.min_delta {
            patience_ref = val;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                if halvings_left > 0 {
                    halvings_left -= 1;
                    lr *= 0.5;
                    bad_epochs = 0;
                    model = best.clone();
                    continue;
                }
                report.stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    report.best_epoch = best_epoch;
    report.best_val_loss = best_val;
    Ok((best, report))
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences with step `h`, over every weight and bias.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn grad_check<X, T>(model: &LinearDecoder, x: &X, target: &T, h: f64) -> Result<f64>
where
    X: DecoderInput + ?Sized,
    T: AsTarget + ?Sized,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::config("h", "step must be positive"));
    }
    let analytic = model.example_gradient(x, target)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-7);
    for idx in 0..probe.weights.len() {
        let orig = probe.weights[idx];
        probe.weights[idx] = orig + h;
        let up = probe.example_loss(x, target)?;
        probe.weights[idx] = orig - h;
        let down = probe.example_loss(x, target)?;
        probe.weights[idx] = orig;
        worst = worst.max(rel(analytic.weights[idx], (up - down) / (2.0 * h)));
    }
    for o in 0..probe.out_dim {
        let orig = probe.bias[o];
        probe.bias[o] = orig + h;
        let up = probe.example_loss(x, target)?;
        probe.bias[o] = orig - h;
        let down = probe.example_loss(x, target)?;
        probe.bias[o] = orig;
        worst = worst.max(rel(analytic.bias[o], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// A trained decoder plus everything needed to decrypt without retraining.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub decoder: LinearDecoder,
    /// Threshold the encoder used when producing this decoder's inputs.
    pub epsilon: f64,
    pub train_config: Option<TrainConfig>,
    pub master_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    head: Head,
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    input_norm: Option<InputNorm>,
    epsilon: f64,
    train_config: Option<TrainConfig>,
    master_seed: u64,
}

impl ModelFile {
    pub fn to_json(&self) -> Result<String> {
        let d = &self.decoder;
        let doc = ModelDoc {
            format: FORMAT.to_string(),
            version: VERSION,
            head: d.head,
            in_dim: d.in_dim,
            out_dim: d.out_dim,
            weights: d.weights_row_major(),
            bias: d.bias.clone(),
            input_norm: d.norm.clone(),
            epsilon: self.epsilon,
            train_config: self.train_config.clone(),
            master_seed: self.master_seed,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<ModelFile> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(Error::format(
                0,
                format!("expected {FORMAT} v{VERSION}, found {} v{}", doc.format, doc.version),
            ));
        }
        let decoder =
            LinearDecoder::from_parts(doc.in_dim, doc.out_dim, doc.head, &doc.weights, doc.bias)?
                .with_norm(doc.input_norm)?;
        Ok(ModelFile {
            decoder,
            epsilon: doc.epsilon,
            train_config: doc.train_config,
            master_seed: doc.master_seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelFile> {
        ModelFile::from_json(&fs::read_to_string(path)?)
    }
}
