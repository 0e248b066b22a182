//! Hyperdimensional stochastic encoder.
//!
//! A low-dimensional vector `x` (length `k`) is projected to `D = m * k`
//! dimensions by a noisy linear map and then binarized against a global
//! threshold `epsilon`. Two projection backends implement [`HyperEncoder`]:
//!
//! * [`Crossbar`]: the projection is an analog read of a simulated crossbar,
//!   noise coming from conductance variability and stuck cells;
//! * [`IdealEncoder`]: `(W + N) x` with a fixed real matrix `W` and a fresh
//!   Gaussian matrix `N` per pass.

use std::borrow::Cow;

use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_finite, check_len, Error, Result};
use crate::hv::BinaryHypervector;
use crate::seed;
use crate::xbar::Crossbar;

/// Bit `i` is set iff `y[i] >= epsilon`.
pub fn threshold_binarize(y: &[f64], epsilon: f64) -> Result<BinaryHypervector> {
    check_finite(y)?;
    if !epsilon.is_finite() {
        return Err(Error::config("epsilon", "must be finite"));
    }
    let mut hv = BinaryHypervector::zeros(y.len());
    for (i, &v) in y.iter().enumerate() {
        if v >= epsilon {
            hv.set(i, true);
        }
    }
    Ok(hv)
}

/// Exact median; the mean of the two middle values for even lengths.
pub fn median(mut values: Vec<f64>) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median of no values"));
    }
    check_finite(&values)?;
    let n = values.len();
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Ok(upper)
    } else {
        let lower = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (lower + upper))
    }
}

/// Shape of an encoder: `output_dim = multiplier * input_dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderParams {
    pub input_dim: usize,
    pub multiplier: usize,
    pub epsilon: f64,
}

impl EncoderParams {
    pub fn new(input_dim: usize, multiplier: usize, epsilon: f64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if multiplier == 0 {
            return Err(Error::config("multiplier", "must be positive"));
        }
        Ok(EncoderParams {
            input_dim,
            multiplier,
            epsilon,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.input_dim * self.multiplier
    }
}

/// A noisy projection from `input_dim` to `output_dim` dimensions.
pub trait HyperEncoder {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Pre-threshold hypervector for one pass.
    fn project<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>>;

    fn encode<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        epsilon: f64,
        rng: &mut R,
    ) -> Result<BinaryHypervector> {
        threshold_binarize(&self.project(x, rng)?, epsilon)
    }
}

impl HyperEncoder for Crossbar {
    fn input_dim(&self) -> usize {
        self.rows()
    }

    fn output_dim(&self) -> usize {
        self.cols()
    }

    fn project<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        self.read_referenced(x, rng)
    }
}

/// Binarized crossbar read of `x`, referenced against the mid-range column.
pub fn encode_crossbar<R: Rng + ?Sized>(
    xbar: &Crossbar,
    x: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<BinaryHypervector> {
    xbar.encode(x, epsilon, rng)
}

/// Median of every pre-threshold entry produced by one pass over `samples`.
///
/// Thresholding at this value splits the ciphertext bits evenly.
pub fn calibrate_epsilon<S, F>(samples: &[S], mut project: F) -> Result<f64>
where
    S: AsRef<[f64]>,
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if samples.is_empty() {
        return Err(Error::Empty("calibration samples"));
    }
    let mut all = Vec::new();
    for s in samples {
        all.extend(project(s.as_ref())?);
    }
    median(all)
}

#[derive(Debug, Clone, PartialEq)]
enum Weights {
    Dense(Vec<f64>),
    /// Rows regenerated on demand from per-row streams. Produces the same
    /// values as the dense form built from the same seed.
    Seeded { low: f64, high: f64, seed: u64 },
}

/// The idealized encoder `H((W + N) x)` with a fixed `W` (output_dim x
/// input_dim, row-major) and fresh Gaussian `N` of standard deviation
/// `sigma` per entry on every pass.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealEncoder {
    input_dim: usize,
    output_dim: usize,
    weights: Weights,
    sigma: f64,
    epsilon: f64,
}

fn fill_uniform_row(seed: u64, row: usize, low: f64, high: f64, out: &mut [f64]) {
    let mut rng = seed::stream(seed::derive_indexed(seed, "ideal/w", row as u64));
    let dist = Uniform::new(low, high).expect("validated interval");
    for w in out {
        *w = dist.sample(&mut rng);
    }
}

impl IdealEncoder {
    /// `W` drawn uniform in `[-half_range, half_range)`, materialized.
    pub fn uniform(
        input_dim: usize,
        output_dim: usize,
        half_range: f64,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut enc = Self::uniform_lazy(input_dim, output_dim, half_range, sigma, seed)?;
        let mut w = vec![0.0; input_dim * output_dim];
        for (j, row) in w.chunks_mut(input_dim).enumerate() {
            fill_uniform_row(seed, j, -half_range, half_range, row);
        }
        enc.weights = Weights::Dense(w);
        Ok(enc)
    }

    /// Same matrix as [`uniform`](Self::uniform), but never stored: rows are
    /// regenerated on each pass. For projections too large to hold in memory.
    pub fn uniform_lazy(
        input_dim: usize,
        output_dim: usize,
        half_range: f64,
        sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if output_dim == 0 {
            return Err(Error::config("output_dim", "must be positive"));
        }
        if !(half_range.is_finite() && half_range > 0.0) {
            return Err(Error::config("half_range", "must be positive and finite"));
        }
        check_sigma(sigma)?;
        Ok(IdealEncoder {
            input_dim,
            output_dim,
            weights: Weights::Seeded {
                low: -half_range,
                high: half_range,
                seed,
            },
            sigma,
            epsilon: 0.0,
        })
    }

    pub fn from_weights(input_dim: usize, output_dim: usize, w: Vec<f64>, sigma: f64) -> Result<Self> {
        check_len("ideal encoder weights", input_dim * output_dim, w.len())?;
        check_finite(&w)?;
        check_sigma(sigma)?;
        Ok(IdealEncoder {
            input_dim,
            output_dim,
            weights: Weights::Dense(w),
            sigma,
            epsilon: 0.0,
        })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        self.sigma = sigma;
        Ok(self)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_materialized(&self) -> bool {
        matches!(self.weights, Weights::Dense(_))
    }

    /// Row `j` of `W`.
    pub fn row(&self, j: usize) -> Cow<'_, [f64]> {
        assert!(j < self.output_dim);
        match &self.weights {
            Weights::Dense(w) => Cow::Borrowed(&w[j * self.input_dim..(j + 1) * self.input_dim]),
            Weights::Seeded { low, high, seed } => {
                let mut row = vec![0.0; self.input_dim];
                fill_uniform_row(*seed, j, *low, *high, &mut row);
                Cow::Owned(row)
            }
        }
    }

    /// Noise-free projection `W x`.
    pub fn project_clean(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("ideal encoder input", self.input_dim, x.len())?;
        check_finite(x)?;
        let mut out = vec![0.0; self.output_dim];
        match &self.weights {
            Weights::Dense(w) => {
                for (o, row) in out.iter_mut().zip(w.chunks(self.input_dim)) {
                    *o = dot(row, x);
                }
            }
            Weights::Seeded { low, high, seed } => {
                let mut row = vec![0.0; self.input_dim];
                for (j, o) in out.iter_mut().enumerate() {
                    fill_uniform_row(*seed, j, *low, *high, &mut row);
                    *o = dot(&row, x);
                }
            }
        }
        Ok(out)
    }

    /// [`project`](HyperEncoder::project) over many inputs, drawing noise in
    /// the same order as calling it once per input.
    pub fn project_batch<S: AsRef<[f64]>, R: Rng + ?Sized>(&self, xs: &[S], rng: &mut R) -> Result<Vec<Vec<f64>>> {
        let Weights::Dense(w) = &self.weights else {
            return xs.iter().map(|x| self.project(x.as_ref(), rng)).collect();
        };
        let clean = project_rows(w, self.input_dim, self.output_dim, xs)?;
        Ok(add_row_noise(clean, xs, self.sigma, rng))
    }

    /// `(W + N) x` for an explicit noise matrix `N` (output_dim x input_dim).
    pub fn project_with_noise(&self, x: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        check_len("ideal encoder noise", self.input_dim * self.output_dim, noise.len())?;
        let mut out = self.project_clean(x)?;
        for (o, n_row) in out.iter_mut().zip(noise.chunks(self.input_dim)) {
            *o += dot(n_row, x);
        }
        Ok(out)
    }

    pub fn encode_with_noise(&self, x: &[f64], noise: &[f64]) -> Result<BinaryHypervector> {
        threshold_binarize(&self.project_with_noise(x, noise)?, self.epsilon)
    }
}

impl HyperEncoder for IdealEncoder {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Row `j` of a Gaussian matrix with i.i.d. N(0, sigma^2) entries
    /// contributes `N_j . x ~ N(0, sigma^2 |x|^2)`, independently across
    /// rows, so one scaled normal per output replaces the full matrix draw.
    fn project<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut out = self.project_clean(x)?;
        if self.sigma > 0.0 {
            let scale = self.sigma * dot(x, x).sqrt();
            for o in &mut out {
                let z: f64 = rng.sample(StandardNormal);
                *o += scale * z;
            }
        }
        Ok(out)
    }
}

/// `W x` for every `x` in `xs`, with `W` `out x k` row-major, as one GEMM.
pub(crate) fn project_rows<S: AsRef<[f64]>>(w: &[f64], k: usize, out: usize, xs: &[S]) -> Result<Vec<Vec<f64>>> {
    let n = xs.len();
    let mut flat = Vec::with_capacity(n * k);
    for x in xs {
        let x = x.as_ref();
        check_len("encoder input", k, x.len())?;
        check_finite(x)?;
        flat.extend_from_slice(x);
    }
    let mut y = vec![0.0; n * out];
    if n > 0 {
        // y (n x out) = X (n x k) * W^T (k x out)
        unsafe {
            matrixmultiply::dgemm(
                n, k, out, 1.0,
                flat.as_ptr(), k as isize, 1,
                w.as_ptr(), 1, k as isize,
                0.0,
                y.as_mut_ptr(), out as isize, 1,
            );
        }
    }
    Ok(y.chunks(out).map(<[f64]>::to_vec).collect())
}

/// Adds `sigma |x| z` per output, input by input.
pub(crate) fn add_row_noise<S: AsRef<[f64]>, R: Rng + ?Sized>(
    mut ys: Vec<Vec<f64>>,
    xs: &[S],
    sigma: f64,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    if sigma > 0.0 {
        for (y, x) in ys.iter_mut().zip(xs) {
            let x = x.as_ref();
            let scale = sigma * dot(x, x).sqrt();
            for o in y.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *o += scale * z;
            }
        }
    }
    ys
}

/// `H((W + N) x)` with the encoder's stored threshold.
pub fn encode_ideal<R: Rng + ?Sized>(
    enc: &IdealEncoder,
    x: &[f64],
    rng: &mut R,
) -> Result<BinaryHypervector> {
    enc.encode(x, enc.epsilon, rng)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(Error::config("sigma", "must be finite and nonnegative"))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xbar::CrossbarConfig;
    use rand::SeedableRng;

    fn rng(seed: u64) -> seed::Stream {
        seed::Stream::seed_from_u64(seed)
    }

    #[test]
    fn threshold_cases() {
        let hv = threshold_binarize(&[-1.0, 0.0, 2.0], 0.5).unwrap();
        assert_eq!(hv.to_bools(), vec![false, false, true]);
        let hv = threshold_binarize(&[0.25; 7], 0.25).unwrap();
        assert_eq!(hv.popcount(), 7);
        assert!(threshold_binarize(&[1.0, f64::INFINITY], 0.0).is_err());
    }

    #[test]
    fn threshold_at_sorted_median_halves_bits() {
        let mut r = rng(11);
        let y: Vec<f64> = (0..10_000).map(|_| r.sample(StandardNormal)).collect();
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        let oracle = 0.5 * (sorted[4999] + sorted[5000]);
        let eps = median(y.clone()).unwrap();
        assert_eq!(eps, oracle);
        let pc = threshold_binarize(&y, eps).unwrap().popcount() as i64;
        assert!((pc - 5000).abs() <= 1, "popcount {pc}");
    }

    #[test]
    fn median_odd_and_errors() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert!(median(vec![]).is_err());
    }

    #[test]
    fn rebinarizing_bits_is_identity() {
        let mut r = rng(5);
        let y: Vec<f64> = (0..300).map(|_| r.random::<f64>() - 0.5).collect();
        let hv = threshold_binarize(&y, 0.0).unwrap();
        let again = threshold_binarize(&hv.to_f64(), 0.5).unwrap();
        assert_eq!(hv, again);
    }

    fn quiet_crossbar(rows: usize, cols: usize, sigma: f64) -> Crossbar {
        Crossbar::new_random(CrossbarConfig {
            rows,
            cols,
            r_lrs: 1e3,
            r_hrs: 10e3,
            sigma_frac: sigma,
            p_stuck_on: 0.0,
            p_stuck_off: 0.0,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn noiseless_crossbar_encoding_is_deterministic() {
        let xbar = quiet_crossbar(10, 500, 0.0);
        let x: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) / 5.0).collect();
        let mut r = xbar.read_stream(0);
        let a = encode_crossbar(&xbar, &x, 0.0, &mut r).unwrap();
        let b = encode_crossbar(&xbar, &x, 0.0, &mut r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hand_set_crossbar_thresholding() {
        let xbar = quiet_crossbar(2, 4, 0.0)
            .program(&[1e-4, 2e-4, 3e-4, 4e-4, 5e-4, 6e-4, 7e-4, 8e-4])
            .unwrap();
        // x = (1, 0.5): I = (3.5, 5, 6.5, 8) * 1e-4, reference 1.5 * 5.5e-4
        // leaves (-4.75, -3.25, -1.75, -0.25) * 1e-4; threshold mid-output
        let mut r = xbar.read_stream(0);
        let y = xbar.project(&[1.0, 0.5], &mut r).unwrap();
        for (got, want) in y.iter().zip([-4.75e-4, -3.25e-4, -1.75e-4, -0.25e-4]) {
            assert!((got - want).abs() < 1e-15);
        }
        let hv = encode_crossbar(&xbar, &[1.0, 0.5], -2.5e-4, &mut r).unwrap();
        assert_eq!(hv.to_bools(), vec![false, false, true, true]);
    }

    #[test]
    fn batch_projection_matches_single() {
        let enc = IdealEncoder::uniform(7, 21, 2.0, 0.8, 4).unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|i| (0..7).map(|j| ((i * 7 + j) % 5) as f64 / 4.0).collect()).collect();
        let batch = enc.project_batch(&xs, &mut rng(8)).unwrap();
        let mut r = rng(8);
        for (x, yb) in xs.iter().zip(&batch) {
            let y = enc.project(x, &mut r).unwrap();
            for (a, b) in y.iter().zip(yb) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let lazy = IdealEncoder::uniform_lazy(7, 21, 2.0, 0.8, 4).unwrap();
        let lb = lazy.project_batch(&xs, &mut rng(8)).unwrap();
        for (a, b) in lb.iter().flatten().zip(batch.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn crossbar_dimension_mismatch() {
        let xbar = quiet_crossbar(3, 6, 0.0);
        assert!(encode_crossbar(&xbar, &[1.0; 4], 0.0, &mut rng(0)).is_err());
    }

    #[test]
    fn ideal_hand_set_three_by_two() {
        let w = vec![1.0, -2.0, 0.5, 0.25, -1.0, -1.0];
        let enc = IdealEncoder::from_weights(2, 3, w, 0.0).unwrap().with_epsilon(0.0);
        // row sums: -1.0, 0.75, -2.0
        let hv = encode_ideal(&enc, &[1.0, 1.0], &mut rng(0)).unwrap();
        assert_eq!(hv.to_bools(), vec![false, true, false]);
    }

    #[test]
    fn ideal_zero_sigma_is_deterministic() {
        let enc = IdealEncoder::uniform(8, 32, 2.0, 0.0, 9).unwrap();
        let x = [0.1, 0.9, 0.4, 0.0, 1.0, 0.3, 0.3, 0.7];
        let a = encode_ideal(&enc, &x, &mut rng(1)).unwrap();
        let b = encode_ideal(&enc, &x, &mut rng(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_init_interval() {
        let enc = IdealEncoder::uniform(20, 40, 2.0, 0.0, 1).unwrap();
        for j in 0..40 {
            assert!(enc.row(j).iter().all(|w| (-2.0..2.0).contains(w)));
        }
    }

    #[test]
    fn lazy_and_dense_agree() {
        let dense = IdealEncoder::uniform(6, 18, 2.0, 0.3, 77).unwrap();
        let lazy = IdealEncoder::uniform_lazy(6, 18, 2.0, 0.3, 77).unwrap();
        assert!(dense.is_materialized() && !lazy.is_materialized());
        let x = [0.2, 0.1, 0.9, 0.5, 0.0, 0.6];
        assert_eq!(dense.project_clean(&x).unwrap(), lazy.project_clean(&x).unwrap());
        assert_eq!(
            dense.project(&x, &mut rng(4)).unwrap(),
            lazy.project(&x, &mut rng(4)).unwrap()
        );
    }

    #[test]
    fn explicit_noise_matches_arithmetic() {
        let w = vec![1.0, 2.0, 3.0, 4.0];
        let enc = IdealEncoder::from_weights(2, 2, w, 1.0).unwrap();
        let noise = [0.5, -0.5, 0.0, 1.0];
        let y = enc.project_with_noise(&[2.0, 1.0], &noise).unwrap();
        assert_eq!(y, vec![1.5 * 2.0 + 1.5, 3.0 * 2.0 + 5.0]);
    }

    #[test]
    fn reduced_noise_has_matrix_variance() {
        // Empirical variance of one output over many passes vs sigma^2 |x|^2.
        let enc = IdealEncoder::uniform(4, 1, 2.0, 0.5, 2).unwrap();
        let x = [1.0, -2.0, 0.5, 0.0];
        let clean = enc.project_clean(&x).unwrap()[0];
        let mut r = rng(8);
        let n = 40_000;
        let var = (0..n)
            .map(|_| (enc.project(&x, &mut r).unwrap()[0] - clean).powi(2))
            .sum::<f64>()
            / n as f64;
        let expect = 0.25 * 5.25;
        assert!((var - expect).abs() < 0.03 * expect, "{var} vs {expect}");
    }

    #[test]
    fn calibrate_constant_and_empty() {
        let samples = vec![vec![1.0], vec![2.0]];
        let eps = calibrate_epsilon(&samples, |_| Ok(vec![4.25; 5])).unwrap();
        assert_eq!(eps, 4.25);
        let none: Vec<Vec<f64>> = vec![];
        assert!(calibrate_epsilon(&none, |x| Ok(x.to_vec())).is_err());
    }

    #[test]
    fn calibrate_uniform_outputs_near_half() {
        let mut r = rng(21);
        let samples: Vec<Vec<f64>> = (0..200).map(|_| vec![0.0]).collect();
        let eps = calibrate_epsilon(&samples, |_| Ok((0..50).map(|_| r.random::<f64>()).collect()))
            .unwrap();
        assert!((eps - 0.5).abs() < 0.02, "{eps}");
    }

    #[test]
    fn params_output_dim() {
        let p = EncoderParams::new(784, 4, 0.0).unwrap();
        assert_eq!(p.output_dim(), 3136);
        assert!(EncoderParams::new(0, 4, 0.0).is_err());
        assert!(EncoderParams::new(3, 0, 0.0).is_err());
    }
}
