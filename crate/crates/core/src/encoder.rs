//! Two-layer feed-forward encoder: `D -> 64 (ReLU) -> 26 (softmax)`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::alphabet::{Letter, ALPHABET_SIZE};
use crate::linalg::{matmul_raw, matrix_view, raw_view, Matrix};
use crate::{rng_from_seed, Error, Result};

pub const HIDDEN: usize = 64;
pub const CLASSES: usize = ALPHABET_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Glorot uniform, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    /// He normal, `N(0, 2 / fan_in)`.
    Kaiming,
}

impl InitScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            InitScheme::Xavier => "xavier",
            InitScheme::Kaiming => "kaiming",
        }
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xavier" => Ok(InitScheme::Xavier),
            "kaiming" => Ok(InitScheme::Kaiming),
            other => Err(Error::param(alloc::format!("unknown init scheme `{other}`"))),
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Encoder weights, stored flat as `w1 (64xD) | b1 (64) | w2 (26x64) | b2 (26)`.
///
/// Gradients use the same type, which keeps optimizers and parameter
/// interpolation as plain slice arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    dim: usize,
    data: Vec<f64>,
}

/// Number of scalars for input dimension `dim`.
pub const fn param_count(dim: usize) -> usize {
    dim * HIDDEN + HIDDEN + HIDDEN * CLASSES + CLASSES
}

impl EncoderParams {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; param_count(dim)] }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != param_count(dim) {
            return Err(Error::param(alloc::format!(
                "{} parameters given, {} expected for dim {dim}",
                data.len(),
                param_count(dim)
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = 0;
        let b1 = self.dim * HIDDEN;
        let w2 = b1 + HIDDEN;
        let b2 = w2 + HIDDEN * CLASSES;
        [w1, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let [w1, b1, ..] = self.offsets();
        &self.data[w1..b1]
    }

    pub fn b1(&self) -> &[f64] {
        let [_, b1, w2, _] = self.offsets();
        &self.data[b1..w2]
    }

    pub fn w2(&self) -> &[f64] {
        let [_, _, w2, b2] = self.offsets();
        &self.data[w2..b2]
    }

    pub fn b2(&self) -> &[f64] {
        let [.., b2] = self.offsets();
        &self.data[b2..]
    }

    /// Mutable `(w1, b1, w2, b2)`.
    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64], &mut [f64], &mut [f64]) {
        let [_, b1, w2, b2] = self.offsets();
        let (w1s, rest) = self.data.split_at_mut(b1);
        let (b1s, rest) = rest.split_at_mut(w2 - b1);
        let (w2s, b2s) = rest.split_at_mut(b2 - w2);
        (w1s, b1s, w2s, b2s)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(1 - alpha) * self + alpha * other`.
    pub fn lerp(&self, other: &EncoderParams, alpha: f64) -> Result<EncoderParams> {
        if self.dim != other.dim {
            return Err(Error::param("cannot interpolate encoders of different input dimension"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect();
        Ok(EncoderParams { dim: self.dim, data })
    }
}

/// Fresh parameters: weights per `scheme`, biases zero.
pub fn init_params(dim: usize, scheme: InitScheme, seed: u64) -> Result<EncoderParams> {
    if dim == 0 {
        return Err(Error::param("input dimension must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut p = EncoderParams::zeros(dim);
    let (w1, _, w2, _) = p.parts_mut();
    for (w, fan_in, fan_out) in [(w1, dim, HIDDEN), (w2, HIDDEN, CLASSES)] {
        match scheme {
            InitScheme::Xavier => {
                let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                w.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
            }
            InitScheme::Kaiming => {
                let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in as f64)).expect("positive std");
                w.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
        }
    }
    Ok(p)
}

/// Encoder output for a batch: logits and their row-softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbBatch {
    pub logits: Matrix,
    pub probs: Matrix,
}

impl ClassProbBatch {
    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.rows() == 0
    }

    /// Probabilities only, e.g. for hand-built test distributions.
    pub fn from_probs(probs: Matrix) -> Self {
        Self { logits: Matrix::zeros(probs.rows(), probs.cols()), probs }
    }
}

/// Hidden activations kept for the backward pass.
pub(crate) struct ForwardCache {
    pub hidden: Matrix,
    pub out: ClassProbBatch,
}

/// In-place stable softmax of one row.
pub fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = libm::exp(z - max);
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub(crate) fn forward_cached(p: &EncoderParams, batch: &Matrix) -> Result<ForwardCache> {
    if batch.cols() != p.dim {
        return Err(Error::param(alloc::format!(
            "batch has {} columns, encoder expects {}",
            batch.cols(),
            p.dim
        )));
    }
    if !batch.all_finite() {
        return Err(Error::data("encoder input contains non-finite values"));
    }
    let n = batch.rows();
    let mut hidden = Matrix::zeros(n, HIDDEN);
    for r in 0..n {
        hidden.row_mut(r).copy_from_slice(p.b1());
    }
    matmul_raw(matrix_view(batch, false), raw_view(p.w1(), HIDDEN, p.dim, true), hidden.as_mut_slice(), 1.0);
    hidden.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));

    let mut logits = Matrix::zeros(n, CLASSES);
    for r in 0..n {
        logits.row_mut(r).copy_from_slice(p.b2());
    }
    matmul_raw(matrix_view(&hidden, false), raw_view(p.w2(), CLASSES, HIDDEN, true), logits.as_mut_slice(), 1.0);

    let mut probs = Matrix::zeros(n, CLASSES);
    for r in 0..n {
        softmax_row(logits.row(r), probs.row_mut(r));
    }
    Ok(ForwardCache { hidden, out: ClassProbBatch { logits, probs } })
}

/// `probs = softmax(w2 · relu(w1 · x + b1) + b2)` for every row of `batch`.
pub fn forward(p: &EncoderParams, batch: &Matrix) -> Result<ClassProbBatch> {
    forward_cached(p, batch).map(|c| c.out)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Letter with the highest logit.
pub fn predict_class(p: &EncoderParams, image: &[f64]) -> Result<Letter> {
    let m = Matrix::from_vec(1, image.len(), image.to_vec())?;
    Ok(argmax(forward(p, &m)?.logits.row(0)) as Letter)
}

/// Argmax letter for every row.
pub fn predict_batch(p: &EncoderParams, images: &Matrix) -> Result<Vec<Letter>> {
    let out = forward(p, images)?;
    Ok(out.logits.iter_rows().map(|r| argmax(r) as Letter).collect())
}

/// Backpropagate `d_logits` (n x 26) through the network, accumulating into `grad`.
pub(crate) fn backward(
    p: &EncoderParams,
    batch: &Matrix,
    cache: &ForwardCache,
    d_logits: &Matrix,
    grad: &mut EncoderParams,
) {
    let n = batch.rows();
    let (gw1, gb1, gw2, gb2) = grad.parts_mut();
    // dW2 += dZ^T H
    matmul_raw(matrix_view(d_logits, true), matrix_view(&cache.hidden, false), gw2, 1.0);
    for (g, s) in gb2.iter_mut().zip(d_logits.col_sums()) {
        *g += s;
    }
    // dH = dZ W2, masked by the ReLU
    let mut d_hidden = Matrix::zeros(n, HIDDEN);
    matmul_raw(matrix_view(d_logits, false), raw_view(p.w2(), CLASSES, HIDDEN, false), d_hidden.as_mut_slice(), 0.0);
    for (dh, h) in d_hidden.as_mut_slice().iter_mut().zip(cache.hidden.as_slice()) {
        if *h <= 0.0 {
            *dh = 0.0;
        }
    }
    matmul_raw(matrix_view(&d_hidden, true), matrix_view(batch, false), gw1, 1.0);
    for (g, s) in gb1.iter_mut().zip(d_hidden.col_sums()) {
        *g += s;
    }
}

/// Softmax backward: `dz = e ⊙ (de − <de, e>)` per row.
pub(crate) fn softmax_backward(probs: &Matrix, d_probs: &Matrix) -> Matrix {
    let mut dz = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let e = probs.row(r);
        let de = d_probs.row(r);
        let dot: f64 = e.iter().zip(de).map(|(a, b)| a * b).sum();
        for ((z, &ei), &dei) in dz.row_mut(r).iter_mut().zip(e).zip(de) {
            *z = ei * (dei - dot);
        }
    }
    dz
}
