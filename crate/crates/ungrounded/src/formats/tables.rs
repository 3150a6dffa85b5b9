//! Unigram and bigram tables as JSON: `{counts, probs}` for each.

use serde::{Deserialize, Serialize};
use ungrounded_core::alphabet::ALPHABET_SIZE;
use ungrounded_core::corpus::{build_bigram, BigramTable, NormalizedText, UnigramTable};
use ungrounded_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnigramJson {
    pub counts: Vec<u64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramJson {
    /// `counts[current][next]`.
    pub counts: Vec<Vec<u64>>,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablesFile {
    /// SHA-256 of the normalized letters the tables were counted from.
    pub text_digest: String,
    pub letters: usize,
    pub unigram: UnigramJson,
    pub bigram: BigramJson,
}

impl TablesFile {
    pub fn build(text: &NormalizedText, text_digest: String) -> Result<Self> {
        let mut counts = [0u64; ALPHABET_SIZE];
        for &c in &text.chars {
            counts[c as usize] += 1;
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput("no letters to count".into()));
        }
        let bi = build_bigram(text)?;
        Ok(Self {
            text_digest,
            letters: text.len(),
            unigram: UnigramJson {
                counts: counts.to_vec(),
                probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            },
            bigram: BigramJson {
                counts: bi.counts.iter().map(|r| r.to_vec()).collect(),
                probs: bi.probs.iter().map(|r| r.to_vec()).collect(),
            },
        })
    }

    pub fn unigram(&self) -> Result<UnigramTable> {
        let probs: [f64; ALPHABET_SIZE] = self
            .unigram
            .probs
            .as_slice()
            .try_into()
            .map_err(|_| Error::Data(format!("unigram has {} entries, expected 26", self.unigram.probs.len())))?;
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Data("unigram probabilities do not form a distribution".into()));
        }
        Ok(UnigramTable { probs })
    }

    /// Rebuilds the bigram from its counts and checks it against the stored
    /// probabilities.
    pub fn bigram(&self) -> Result<BigramTable> {
        if self.bigram.counts.len() != ALPHABET_SIZE || self.bigram.counts.iter().any(|r| r.len() != ALPHABET_SIZE) {
            return Err(Error::Data("bigram counts must be 26 x 26".into()));
        }
        let mut counts = [[0u64; ALPHABET_SIZE]; ALPHABET_SIZE];
        for (dst, src) in counts.iter_mut().zip(&self.bigram.counts) {
            dst.copy_from_slice(src);
        }
        let table = BigramTable::from_counts(counts);
        table.validate(1e-9)?;
        let stored_ok = self.bigram.probs.len() == ALPHABET_SIZE
            && self
                .bigram
                .probs
                .iter()
                .zip(&table.probs)
                .all(|(s, t)| s.len() == ALPHABET_SIZE && s.iter().zip(t).all(|(a, b)| (a - b).abs() <= 1e-12));
        if !stored_ok {
            return Err(Error::Data("stored bigram probabilities disagree with the counts".into()));
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ungrounded_core::alphabet::parse;

    #[test]
    fn round_trip_through_json() {
        let text = NormalizedText::from_letters(parse("the cat sat on the mat"), "t").unwrap();
        let t = TablesFile::build(&text, "abc".into()).unwrap();
        let back: TablesFile = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.bigram().unwrap(), build_bigram(&text).unwrap());
        assert!((back.unigram().unwrap().probs[19] - 5.0 / 17.0).abs() < 1e-12);
    }

    #[test]
    fn tampered_probabilities_are_rejected() {
        let text = NormalizedText::from_letters(parse("abcabc"), "t").unwrap();
        let mut t = TablesFile::build(&text, String::new()).unwrap();
        t.bigram.probs[0][1] = 0.5;
        assert!(t.bigram().is_err());
    }
}
