//! Text normalization, letter statistics and sequence sampling.
//!
//! The bigram table is the frozen prior the encoder is aligned against. It is
//! a plain count table: rows with no observations become uniform, every other
//! zero cell stays exactly zero.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::Rng as _;

use crate::alphabet::{self, Letter, ALPHABET_SIZE};
use crate::{Error, Result, Rng};

/// A stream of letters drawn from the 26-letter alphabet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedText {
    pub chars: Vec<Letter>,
    pub source_id: String,
}

impl NormalizedText {
    /// Wrap already-normalized letters. Fails if any index is outside `0..26`.
    pub fn from_letters(chars: Vec<Letter>, source_id: impl Into<String>) -> Result<Self> {
        if let Some(pos) = chars.iter().position(|&c| c as usize >= ALPHABET_SIZE) {
            return Err(Error::param(alloc::format!(
                "letter index {} at position {pos} is outside the alphabet",
                chars[pos]
            )));
        }
        Ok(Self { chars, source_id: source_id.into() })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Lowercase rendering, e.g. `"fnord"`.
    pub fn render(&self) -> String {
        alphabet::render(&self.chars)
    }

    /// Split into a training prefix and a held-out suffix. `holdout` is the
    /// fraction of characters kept for evaluation.
    pub fn split_holdout(&self, holdout: f64) -> Result<(NormalizedText, NormalizedText)> {
        if !(0.0..1.0).contains(&holdout) {
            return Err(Error::param("holdout fraction must be in [0, 1)"));
        }
        let cut = self.len() - (self.len() as f64 * holdout) as usize;
        let train = NormalizedText {
            chars: self.chars[..cut].to_vec(),
            source_id: alloc::format!("{}#train", self.source_id),
        };
        let test = NormalizedText {
            chars: self.chars[cut..].to_vec(),
            source_id: alloc::format!("{}#test", self.source_id),
        };
        Ok((train, test))
    }

    /// Contiguous slice `[start, start + len)` as a new text.
    pub fn window(&self, start: usize, len: usize) -> Result<NormalizedText> {
        if start + len > self.len() {
            return Err(Error::empty("window extends past the end of the text"));
        }
        Ok(NormalizedText {
            chars: self.chars[start..start + len].to_vec(),
            source_id: alloc::format!("{}[{start}..{}]", self.source_id, start + len),
        })
    }
}

/// Decode UTF-8, keep ASCII letters case-folded, drop everything else.
pub fn normalize_text(raw: &[u8]) -> Result<NormalizedText> {
    let text = core::str::from_utf8(raw).map_err(|e| Error::Format {
        offset: e.valid_up_to(),
        message: "input is not valid UTF-8".to_string(),
    })?;
    Ok(NormalizedText { chars: alphabet::parse(text), source_id: String::new() })
}

/// Marginal letter frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct UnigramTable {
    pub probs: [f64; ALPHABET_SIZE],
}

impl UnigramTable {
    pub fn uniform() -> Self {
        Self { probs: [1.0 / ALPHABET_SIZE as f64; ALPHABET_SIZE] }
    }

    /// Index of the most frequent letter (lowest index on ties).
    pub fn max_class(&self) -> Letter {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as Letter
    }
}

pub fn build_unigram(text: &NormalizedText) -> Result<UnigramTable> {
    if text.is_empty() {
        return Err(Error::empty("unigram table needs at least one character"));
    }
    let mut counts = [0u64; ALPHABET_SIZE];
    for &c in &text.chars {
        counts[c as usize] += 1;
    }
    let n = text.len() as f64;
    let mut probs = [0.0; ALPHABET_SIZE];
    for (p, &c) in probs.iter_mut().zip(&counts) {
        *p = c as f64 / n;
    }
    Ok(UnigramTable { probs })
}

/// Next-letter conditional distribution, `probs[x][y] = P(next = y | current = x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramTable {
    pub counts: [[u64; ALPHABET_SIZE]; ALPHABET_SIZE],
    pub probs: [[f64; ALPHABET_SIZE]; ALPHABET_SIZE],
}

impl BigramTable {
    /// Row-normalize a count table. Empty rows become uniform.
    pub fn from_counts(counts: [[u64; ALPHABET_SIZE]; ALPHABET_SIZE]) -> Self {
        let mut probs = [[0.0; ALPHABET_SIZE]; ALPHABET_SIZE];
        for (row, count_row) in probs.iter_mut().zip(&counts) {
            let total: u64 = count_row.iter().sum();
            if total == 0 {
                row.fill(1.0 / ALPHABET_SIZE as f64);
            } else {
                for (p, &c) in row.iter_mut().zip(count_row) {
                    *p = c as f64 / total as f64;
                }
            }
        }
        Self { counts, probs }
    }

    /// `P(next | current)`.
    pub fn prob(&self, current: Letter, next: Letter) -> f64 {
        self.probs[current as usize][next as usize]
    }

    /// Largest deviation of any row sum from 1, or `None` if an entry is
    /// negative or non-finite.
    pub fn max_row_error(&self) -> Option<f64> {
        let mut worst = 0.0f64;
        for row in &self.probs {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return None;
            }
            let s: f64 = row.iter().sum();
            worst = worst.max((s - 1.0).abs());
        }
        Some(worst)
    }

    /// Check every row is a distribution within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        match self.max_row_error() {
            Some(e) if e <= tol => Ok(()),
            Some(e) => Err(Error::param(alloc::format!("bigram row sum off by {e:e}"))),
            None => Err(Error::param("bigram table has negative or non-finite entries")),
        }
    }

    /// Stationary-style marginal: frequency of each letter as the first
    /// element of a counted bigram.
    pub fn row_marginal(&self) -> [f64; ALPHABET_SIZE] {
        let total: u64 = self.counts.iter().flatten().sum();
        let mut out = [0.0; ALPHABET_SIZE];
        if total == 0 {
            return out;
        }
        for (o, row) in out.iter_mut().zip(&self.counts) {
            *o = row.iter().sum::<u64>() as f64 / total as f64;
        }
        out
    }
}

/// Count adjacent letter pairs over the whole normalized stream.
pub fn build_bigram(text: &NormalizedText) -> Result<BigramTable> {
    if text.len() < 2 {
        return Err(Error::empty("bigram table needs at least two characters"));
    }
    let mut counts = [[0u64; ALPHABET_SIZE]; ALPHABET_SIZE];
    for w in text.chars.windows(2) {
        counts[w[0] as usize][w[1] as usize] += 1;
    }
    Ok(BigramTable::from_counts(counts))
}

/// Draw `n` substrings of length `len` uniformly over start positions,
/// resampling any draw equal to `exclude`.
pub fn sample_nontrigger(
    text: &NormalizedText,
    n: usize,
    len: usize,
    exclude: Option<&[Letter]>,
    rng: &mut Rng,
) -> Result<Vec<Vec<Letter>>> {
    if len == 0 || text.len() < len {
        return Err(Error::empty("text is shorter than the requested window"));
    }
    let positions = text.len() - len + 1;
    if let Some(ex) = exclude {
        // Every window equal to the excluded string would loop forever.
        if ex.len() == len && text.chars.windows(len).all(|w| w == ex) {
            return Err(Error::data("every window of the text equals the excluded sequence"));
        }
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let start = rng.random_range(0..positions);
        let s = &text.chars[start..start + len];
        if exclude.is_some_and(|ex| ex == s) {
            continue;
        }
        out.push(s.to_vec());
    }
    Ok(out)
}

/// Where a trigger came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerSource {
    Random,
    Corpus,
    Fixed,
}

impl TriggerSource {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerSource::Random => "random",
            TriggerSource::Corpus => "corpus",
            TriggerSource::Fixed => "fixed",
        }
    }
}

/// A letter sequence to detect, plus its expected occurrence ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerSpec {
    pub letters: Vec<Letter>,
    pub prior: f64,
    pub source: TriggerSource,
}

impl TriggerSpec {
    pub fn new(letters: Vec<Letter>, prior: f64) -> Result<Self> {
        if letters.is_empty() {
            return Err(Error::param("trigger must contain at least one letter"));
        }
        if !(prior > 0.0 && prior < 1.0) {
            return Err(Error::param("trigger prior must lie in (0, 1)"));
        }
        Ok(Self { letters, prior, source: TriggerSource::Fixed })
    }

    /// Parse a word such as `"fnord"`; non-letters are dropped.
    pub fn parse(word: &str, prior: f64) -> Result<Self> {
        Self::new(alphabet::parse(word), prior)
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn render(&self) -> String {
        alphabet::render(&self.letters)
    }
}

pub const SUITE_MIN_LEN: usize = 2;
pub const SUITE_MAX_LEN: usize = 11;

/// For each length in `2..=11`: `per_source` uniform random strings and
/// `per_source` corpus substrings. The full suite uses `per_source = 100`.
pub fn sample_trigger_suite_sized(
    text: &NormalizedText,
    per_source: usize,
    rng: &mut Rng,
) -> Result<Vec<TriggerSpec>> {
    if text.len() < SUITE_MAX_LEN {
        return Err(Error::empty("text is shorter than the longest suite trigger"));
    }
    let mut suite = Vec::with_capacity((SUITE_MAX_LEN - SUITE_MIN_LEN + 1) * 2 * per_source);
    for len in SUITE_MIN_LEN..=SUITE_MAX_LEN {
        for _ in 0..per_source {
            let letters = (0..len).map(|_| rng.random_range(0..ALPHABET_SIZE as u8)).collect();
            suite.push(TriggerSpec { letters, prior: 0.5, source: TriggerSource::Random });
        }
        for letters in sample_nontrigger(text, per_source, len, None, rng)? {
            suite.push(TriggerSpec { letters, prior: 0.5, source: TriggerSource::Corpus });
        }
    }
    Ok(suite)
}

/// The 2000-trigger suite: 100 random + 100 corpus strings per length 2..=11.
pub fn sample_trigger_suite(text: &NormalizedText, rng: &mut Rng) -> Result<Vec<TriggerSpec>> {
    sample_trigger_suite_sized(text, 100, rng)
}
