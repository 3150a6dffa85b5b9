//! Synthetic fonts: float32 glyph rows after a JSON header
//! `{dim, seed, sigma, train_per_class, test_per_class}`. Rows are grouped by
//! letter, train split first.

use serde::{Deserialize, Serialize};
use ungrounded_core::alphabet::{Letter, ALPHABET_SIZE};
use ungrounded_core::fonts::{GlyphPool, GlyphSet, Split, SyntheticFont};
use ungrounded_core::linalg::Matrix;
use ungrounded_core::{Error, Result};

use super::{decode_with_header, encode_with_header, f32_payload, read_f32s};

const MAGIC: &[u8; 4] = b"UGSF";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FontHeader {
    pub dim: usize,
    pub seed: u64,
    pub sigma: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

pub fn encode_font(spec: &SyntheticFont, gs: &GlyphSet) -> Vec<u8> {
    let header = FontHeader {
        dim: spec.dim,
        seed: spec.seed,
        sigma: spec.sigma,
        train_per_class: spec.train_per_class,
        test_per_class: spec.test_per_class,
    };
    let values = [Split::Train, Split::Test].into_iter().flat_map(|s| gs.pool(s).data().as_slice().iter().copied());
    encode_with_header(MAGIC, &serde_json::to_value(header).expect("header serializes"), &f32_payload(values))
}

pub fn decode_font(bytes: &[u8]) -> Result<(FontHeader, GlyphSet)> {
    let (header, payload, offset) = decode_with_header(MAGIC, bytes)?;
    let h: FontHeader = serde_json::from_value(header)
        .map_err(|e| Error::Format { offset: 8, message: format!("bad font header: {e}") })?;
    let rows = (h.train_per_class + h.test_per_class) * ALPHABET_SIZE;
    let values = read_f32s(payload, rows * h.dim, offset)?;
    let (train, test) = values.split_at(h.train_per_class * ALPHABET_SIZE * h.dim);
    let pool = |data: &[f64], per_class: usize| -> Result<GlyphPool> {
        let m = Matrix::from_vec(per_class * ALPHABET_SIZE, h.dim, data.to_vec())?;
        let labels: Vec<Letter> = (0..ALPHABET_SIZE as Letter).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
        GlyphPool::from_labeled(&m, &labels)
    };
    let gs = GlyphSet::new(
        format!("synthetic-d{}-s{}", h.dim, h.sigma),
        pool(train, h.train_per_class)?,
        pool(test, h.test_per_class)?,
    )?;
    Ok((h, gs))
}
