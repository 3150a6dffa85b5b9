//! Alignment losses and their exact gradients.
//!
//! All four losses act on encoder distributions `e` (one row per image). The
//! two bigram losses compare the encoder's distribution for the second image
//! of each pair with `d = e_first · Bi`, the bigram table marginalized over
//! the encoder's belief about the first image. The two unigram losses see the
//! batch as individual images and compare against letter frequencies.
//!
//! Every logarithm and denominator is floored at [`EPS`]; a floored quantity
//! is treated as a constant when differentiating.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::alphabet::ALPHABET_SIZE;
use crate::corpus::{BigramTable, UnigramTable};
use crate::encoder::{backward, forward_cached, softmax_backward, EncoderParams, CLASSES};
use crate::fonts::PairBatch;
use crate::linalg::{tree_sum, Matrix};
use crate::{Error, Result, EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    BigramContrastive,
    BigramKl,
    UnigramKl,
    UnigramContrastive,
}

impl LossKind {
    pub const ALL: [LossKind; 4] =
        [LossKind::BigramContrastive, LossKind::BigramKl, LossKind::UnigramKl, LossKind::UnigramContrastive];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::BigramContrastive => "bigram_contrastive",
            LossKind::BigramKl => "bigram_kl",
            LossKind::UnigramKl => "unigram_kl",
            LossKind::UnigramContrastive => "unigram_contrastive",
        }
    }

    pub fn uses_bigram(self) -> bool {
        matches!(self, LossKind::BigramContrastive | LossKind::BigramKl)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::param(alloc::format!("unknown loss kind `{s}`")))
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The frozen prior a loss is computed against.
#[derive(Debug, Clone, Copy)]
pub enum Prior<'a> {
    Bigram(&'a BigramTable),
    Unigram(&'a UnigramTable),
}

/// Loss value in nats and its gradient with respect to the encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grads: EncoderParams,
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::param(alloc::format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn check_alphabet_width(m: &Matrix) -> Result<()> {
    if m.cols() != ALPHABET_SIZE {
        return Err(Error::param(alloc::format!("expected {ALPHABET_SIZE} columns, got {}", m.cols())));
    }
    Ok(())
}

/// `d_i = e_i · Bi`: the bigram's prediction for the next letter.
pub fn bigram_predict(e_first: &Matrix, bi: &BigramTable) -> Result<Matrix> {
    check_alphabet_width(e_first)?;
    bi.validate(1e-9)?;
    Ok(bigram_predict_unchecked(e_first, bi))
}

fn bigram_predict_unchecked(e_first: &Matrix, bi: &BigramTable) -> Matrix {
    let mut d = Matrix::zeros(e_first.rows(), ALPHABET_SIZE);
    for i in 0..e_first.rows() {
        let row = d.row_mut(i);
        for (x, &ex) in e_first.row(i).iter().enumerate() {
            if ex == 0.0 {
                continue;
            }
            for (o, &b) in row.iter_mut().zip(&bi.probs[x]) {
                *o += ex * b;
            }
        }
    }
    d
}

fn ln_floor(x: f64) -> f64 {
    libm::log(x.max(EPS))
}

/// Value and partial derivatives of a loss with respect to `e` and `d`.
struct Parts {
    value: f64,
    de: Matrix,
    dd: Option<Matrix>,
}

/// Batch-contrastive loss
/// `L = -(1/|B|) Σ_i log Σ_j d_ij e_ij / Σ_k e_kj`.
fn contrastive_parts(e: &Matrix, d: &Matrix) -> Parts {
    let (n, k) = (e.rows(), e.cols());
    let col = e.col_sums();
    let denom: Vec<f64> = col.iter().map(|&s| s.max(EPS)).collect();
    let mut terms = Vec::with_capacity(n);
    let mut g = vec![0.0; n];
    for i in 0..n {
        let inner: f64 = (0..k).map(|j| d.get(i, j) * e.get(i, j) / denom[j]).sum();
        terms.push(-ln_floor(inner));
        if inner > EPS {
            g[i] = -1.0 / (n as f64 * inner);
        }
    }
    let value = tree_sum(&terms) / n as f64;

    // Column-sum contribution, shared by every row.
    let mut col_grad = vec![0.0; k];
    for (j, cg) in col_grad.iter_mut().enumerate() {
        if col[j] > EPS {
            let s: f64 = (0..n).map(|i| g[i] * d.get(i, j) * e.get(i, j)).sum();
            *cg = -s / (denom[j] * denom[j]);
        }
    }
    let mut de = Matrix::zeros(n, k);
    let mut dd = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            de.set(i, j, g[i] * d.get(i, j) / denom[j] + col_grad[j]);
            dd.set(i, j, g[i] * e.get(i, j) / denom[j]);
        }
    }
    Parts { value, de, dd: Some(dd) }
}

/// `L = (1/|B|) Σ_i Σ_j d_ij log(d_ij / e_ij)`; zero cells of `d` contribute nothing.
fn bigram_kl_parts(e: &Matrix, d: &Matrix) -> Parts {
    let (n, k) = (e.rows(), e.cols());
    let scale = 1.0 / n as f64;
    let mut terms = Vec::with_capacity(n);
    let mut de = Matrix::zeros(n, k);
    let mut dd = Matrix::zeros(n, k);
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..k {
            let (dij, eij) = (d.get(i, j), e.get(i, j));
            if dij <= 0.0 {
                continue;
            }
            let log_ratio = ln_floor(dij) - ln_floor(eij);
            row += dij * log_ratio;
            let own = if dij > EPS { 1.0 } else { 0.0 };
            dd.set(i, j, scale * (log_ratio + own));
            if eij > EPS {
                de.set(i, j, -scale * dij / eij);
            }
        }
        terms.push(row);
    }
    Parts { value: tree_sum(&terms) * scale, de, dd: Some(dd) }
}

/// `L = (1/N) Σ_i KL(c ‖ e_i)`.
fn unigram_kl_parts(e: &Matrix, c: &UnigramTable) -> Parts {
    let (n, k) = (e.rows(), e.cols());
    let scale = 1.0 / n as f64;
    let mut terms = Vec::with_capacity(n);
    let mut de = Matrix::zeros(n, k);
    for i in 0..n {
        let mut row = 0.0;
        for (j, &cj) in c.probs.iter().enumerate() {
            if cj <= 0.0 {
                continue;
            }
            let eij = e.get(i, j);
            row += cj * (ln_floor(cj) - ln_floor(eij));
            if eij > EPS {
                de.set(i, j, -scale * cj / eij);
            }
        }
        terms.push(row);
    }
    Parts { value: tree_sum(&terms) * scale, de, dd: None }
}

/// `KL(c ‖ e) + L(e, e)`.
fn unigram_contrastive_parts(e: &Matrix, c: &UnigramTable) -> Parts {
    let kl = unigram_kl_parts(e, c);
    let con = contrastive_parts(e, e);
    let mut de = kl.de;
    let dd = con.dd.expect("contrastive parts carry dd");
    for ((g, a), b) in de.as_mut_slice().iter_mut().zip(con.de.as_slice()).zip(dd.as_slice()) {
        *g += a + b;
    }
    Parts { value: kl.value + con.value, de, dd: None }
}

fn check_distribution_pair(e: &Matrix, d: &Matrix) -> Result<()> {
    check_same_shape(e, d)?;
    if e.rows() == 0 {
        return Err(Error::empty("loss over an empty batch"));
    }
    Ok(())
}

/// Batch-contrastive alignment loss between encoder rows `e` and target rows `d`.
pub fn contrastive_loss(e: &Matrix, d: &Matrix) -> Result<f64> {
    check_distribution_pair(e, d)?;
    Ok(contrastive_parts(e, d).value)
}

pub fn bigram_kl_loss(e: &Matrix, d: &Matrix) -> Result<f64> {
    check_distribution_pair(e, d)?;
    Ok(bigram_kl_parts(e, d).value)
}

pub fn unigram_kl_loss(e: &Matrix, c: &UnigramTable) -> Result<f64> {
    check_alphabet_width(e)?;
    if e.rows() == 0 {
        return Err(Error::empty("loss over an empty batch"));
    }
    Ok(unigram_kl_parts(e, c).value)
}

pub fn unigram_contrastive_loss(e: &Matrix, c: &UnigramTable) -> Result<f64> {
    check_alphabet_width(e)?;
    if e.rows() == 0 {
        return Err(Error::empty("loss over an empty batch"));
    }
    Ok(unigram_contrastive_parts(e, c).value)
}

fn ensure_finite(m: &Matrix, stage: &str) -> Result<()> {
    if m.all_finite() {
        Ok(())
    } else {
        Err(Error::numeric(String::from(stage)))
    }
}

/// Adds each row of `rows` into `acc[index[i]]`.
fn scatter_add(acc: &mut Matrix, index: &[u32], rows: &Matrix) {
    for (i, &g) in index.iter().enumerate() {
        for (a, v) in acc.row_mut(g as usize).iter_mut().zip(rows.row(i)) {
            *a += v;
        }
    }
}

/// `d = e · Bi` for one row.
fn predict_row(e: &[f64], bi: &BigramTable, out: &mut [f64; CLASSES]) {
    *out = [0.0; CLASSES];
    for (x, &ex) in e.iter().enumerate() {
        if ex == 0.0 {
            continue;
        }
        for (o, &b) in out.iter_mut().zip(&bi.probs[x]) {
            *o += ex * b;
        }
    }
}

/// Adds `dd · Biᵀ` to `acc`.
fn predict_row_backward(dd: &[f64; CLASSES], bi: &BigramTable, acc: &mut [f64]) {
    for (a, brow) in acc.iter_mut().zip(&bi.probs) {
        *a += brow.iter().zip(dd).map(|(b, g)| b * g).sum::<f64>();
    }
}

/// Bigram-contrastive value with its gradient accumulated per glyph, in one
/// pass over the pairs. Same arithmetic as `contrastive_parts` applied to the
/// gathered rows.
fn fused_bigram_contrastive(probs: &Matrix, batch: &PairBatch, bi: &BigramTable, d_probs: &mut Matrix) -> f64 {
    let n = batch.len();
    let (first, second) = (batch.first_index(), batch.second_index());
    let mut col = [0.0; CLASSES];
    for &s in second {
        for (c, &v) in col.iter_mut().zip(probs.row(s as usize)) {
            *c += v;
        }
    }
    let mut denom = [0.0; CLASSES];
    for (dn, &c) in denom.iter_mut().zip(&col) {
        *dn = c.max(EPS);
    }
    let mut terms = Vec::with_capacity(n);
    let mut col_num = [0.0; CLASSES];
    let mut d = [0.0; CLASSES];
    let mut dd = [0.0; CLASSES];
    for i in 0..n {
        let e1 = probs.row(first[i] as usize);
        let e2 = probs.row(second[i] as usize);
        predict_row(e1, bi, &mut d);
        let inner: f64 = (0..CLASSES).map(|j| d[j] * e2[j] / denom[j]).sum();
        terms.push(-ln_floor(inner));
        if inner <= EPS {
            continue;
        }
        let g = -1.0 / (n as f64 * inner);
        let row2 = d_probs.row_mut(second[i] as usize);
        for j in 0..CLASSES {
            col_num[j] += g * d[j] * e2[j];
            row2[j] += g * d[j] / denom[j];
            dd[j] = g * e2[j] / denom[j];
        }
        predict_row_backward(&dd, bi, d_probs.row_mut(first[i] as usize));
    }
    let mut col_grad = [0.0; CLASSES];
    for j in 0..CLASSES {
        if col[j] > EPS {
            col_grad[j] = -col_num[j] / (denom[j] * denom[j]);
        }
    }
    for &s in second {
        for (a, &c) in d_probs.row_mut(s as usize).iter_mut().zip(&col_grad) {
            *a += c;
        }
    }
    tree_sum(&terms) / n as f64
}

/// Bigram-KL value with its gradient accumulated per glyph.
fn fused_bigram_kl(probs: &Matrix, batch: &PairBatch, bi: &BigramTable, d_probs: &mut Matrix) -> f64 {
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let (first, second) = (batch.first_index(), batch.second_index());
    let mut terms = Vec::with_capacity(n);
    let mut d = [0.0; CLASSES];
    for i in 0..n {
        let e2 = probs.row(second[i] as usize);
        predict_row(probs.row(first[i] as usize), bi, &mut d);
        let mut row = 0.0;
        let mut dd = [0.0; CLASSES];
        let row2 = d_probs.row_mut(second[i] as usize);
        for j in 0..CLASSES {
            let (dij, eij) = (d[j], e2[j]);
            if dij <= 0.0 {
                continue;
            }
            let log_ratio = ln_floor(dij) - ln_floor(eij);
            row += dij * log_ratio;
            let own = if dij > EPS { 1.0 } else { 0.0 };
            dd[j] = scale * (log_ratio + own);
            if eij > EPS {
                row2[j] -= scale * dij / eij;
            }
        }
        terms.push(row);
        predict_row_backward(&dd, bi, d_probs.row_mut(first[i] as usize));
    }
    tree_sum(&terms) * scale
}

/// Loss value and gradient for one full batch.
///
/// The encoder runs once over the batch's glyph table; per-pair terms gather
/// rows from it and their gradients are scattered back before a single
/// backward pass. Bigram kinds read the batch as pairs. Unigram kinds read it
/// as the `2|B|` individual images.
pub fn loss_and_grad(p: &EncoderParams, batch: &PairBatch, prior: Prior<'_>, kind: LossKind) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::empty("empty pair batch"));
    }
    if batch.dim() != p.dim() {
        return Err(Error::param(alloc::format!(
            "batch dimension {} does not match encoder input {}",
            batch.dim(),
            p.dim()
        )));
    }
    let glyphs = batch.glyphs();
    let cache = forward_cached(p, glyphs)?;
    ensure_finite(&cache.out.probs, "forward")?;
    let probs = &cache.out.probs;
    let mut d_probs = Matrix::zeros(probs.rows(), CLASSES);

    let value = match (kind, prior) {
        (LossKind::BigramContrastive, Prior::Bigram(bi)) => fused_bigram_contrastive(probs, batch, bi, &mut d_probs),
        (LossKind::BigramKl, Prior::Bigram(bi)) => fused_bigram_kl(probs, batch, bi, &mut d_probs),
        (LossKind::UnigramKl | LossKind::UnigramContrastive, Prior::Unigram(c)) => {
            let mut all = Vec::with_capacity(2 * batch.len());
            all.extend_from_slice(batch.first_index());
            all.extend_from_slice(batch.second_index());
            let e = probs.gather_rows(&all);
            let parts = if kind == LossKind::UnigramKl {
                unigram_kl_parts(&e, c)
            } else {
                unigram_contrastive_parts(&e, c)
            };
            scatter_add(&mut d_probs, &all, &parts.de);
            parts.value
        }
        (k, _) => {
            return Err(Error::param(alloc::format!("loss {k} was given the wrong kind of prior")));
        }
    };
    if !value.is_finite() {
        return Err(Error::numeric("loss value"));
    }
    ensure_finite(&d_probs, "loss backward")?;
    let d_logits = softmax_backward(probs, &d_probs);
    let mut grads = EncoderParams::zeros(p.dim());
    backward(p, glyphs, &cache, &d_logits, &mut grads);
    if !grads.all_finite() {
        return Err(Error::numeric("encoder backward"));
    }
    Ok(LossGrad { value, grads })
}

/// Loss value only (still runs the full forward pass).
pub fn loss_value(p: &EncoderParams, batch: &PairBatch, prior: Prior<'_>, kind: LossKind) -> Result<f64> {
    loss_and_grad(p, batch, prior, kind).map(|lg| lg.value)
}

/// Mean cross-entropy against true labels, for the supervised reference model.
pub fn cross_entropy_and_grad(p: &EncoderParams, images: &Matrix, labels: &[u8]) -> Result<LossGrad> {
    if images.rows() != labels.len() {
        return Err(Error::param("image and label counts differ"));
    }
    if labels.is_empty() {
        return Err(Error::empty("empty labeled batch"));
    }
    let cache = forward_cached(p, images)?;
    let probs = &cache.out.probs;
    let n = labels.len() as f64;
    let mut terms = Vec::with_capacity(labels.len());
    let mut d_logits = Matrix::zeros(probs.rows(), CLASSES);
    for (i, &y) in labels.iter().enumerate() {
        let y = y as usize;
        terms.push(-ln_floor(probs.get(i, y)));
        for (j, (g, &e)) in d_logits.row_mut(i).iter_mut().zip(probs.row(i)).enumerate() {
            *g = (e - if j == y { 1.0 } else { 0.0 }) / n;
        }
    }
    let value = tree_sum(&terms) / n;
    if !value.is_finite() {
        return Err(Error::numeric("cross-entropy value"));
    }
    let mut grads = EncoderParams::zeros(p.dim());
    backward(p, images, &cache, &d_logits, &mut grads);
    Ok(LossGrad { value, grads })
}
