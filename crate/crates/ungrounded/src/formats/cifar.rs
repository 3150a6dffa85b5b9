//! CIFAR-100 binary records and the 26-class letter font built from them.

use std::path::Path;

use ungrounded_core::alphabet::{Letter, ALPHABET_SIZE};
use ungrounded_core::fonts::{GlyphPool, GlyphSet};
use ungrounded_core::linalg::Matrix;
use ungrounded_core::{Error, Result};

use super::read_maybe_gz;
use crate::error::{AppError, AppResult};

pub const IMAGE_BYTES: usize = 3072;
/// Coarse label, fine label, then the red, green and blue planes.
pub const RECORD_BYTES: usize = 2 + IMAGE_BYTES;

/// Fine-label class names for `a` through `z`.
pub const LETTER_CLASSES: [&str; ALPHABET_SIZE] = [
    "apple",
    "aquarium_fish",
    "baby",
    "bear",
    "beaver",
    "bed",
    "bee",
    "beetle",
    "bicycle",
    "bottle",
    "bowl",
    "boy",
    "bridge",
    "bus",
    "butterfly",
    "camel",
    "can",
    "castle",
    "caterpillar",
    "cattle",
    "chair",
    "chimpanzee",
    "clock",
    "cloud",
    "cockroach",
    "keyboard",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CifarRecord<'a> {
    pub coarse: u8,
    pub fine: u8,
    pub pixels: &'a [u8],
}

pub fn parse_records(bytes: &[u8]) -> Result<Vec<CifarRecord<'_>>> {
    if bytes.len() % RECORD_BYTES != 0 {
        let whole = bytes.len() / RECORD_BYTES * RECORD_BYTES;
        return Err(Error::Format {
            offset: whole,
            message: format!("trailing partial record of {} bytes", bytes.len() - whole),
        });
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, r)| {
            if r[1] >= 100 {
                return Err(Error::Format { offset: i * RECORD_BYTES + 1, message: format!("fine label {} >= 100", r[1]) });
            }
            Ok(CifarRecord { coarse: r[0], fine: r[1], pixels: &r[2..] })
        })
        .collect()
}

/// One class name per non-empty line.
pub fn parse_label_names(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

/// Fine label index to letter, for the 26 classes in [`LETTER_CLASSES`].
pub fn letter_map(names: &[String]) -> Result<[Option<Letter>; 100]> {
    let mut map = [None; 100];
    for (letter, class) in LETTER_CLASSES.iter().enumerate() {
        let fine = names
            .iter()
            .position(|n| n == class)
            .ok_or_else(|| Error::Data(format!("class `{class}` missing from the label names")))?;
        if fine >= 100 {
            return Err(Error::Data(format!("class `{class}` has index {fine} >= 100")));
        }
        map[fine] = Some(letter as Letter);
    }
    Ok(map)
}

/// Keeps the records of the 26 mapped classes, scaled to `[0, 1]`.
pub fn records_to_pool(records: &[CifarRecord<'_>], map: &[Option<Letter>; 100]) -> Result<GlyphPool> {
    let kept: Vec<(&CifarRecord<'_>, Letter)> =
        records.iter().filter_map(|r| map[r.fine as usize].map(|l| (r, l))).collect();
    let mut data = Vec::with_capacity(kept.len() * IMAGE_BYTES);
    for (r, _) in &kept {
        data.extend(r.pixels.iter().map(|&b| b as f64 / 255.0));
    }
    let labels: Vec<Letter> = kept.iter().map(|&(_, l)| l).collect();
    GlyphPool::from_labeled(&Matrix::from_vec(kept.len(), IMAGE_BYTES, data)?, &labels)
}

/// Loads `train.bin`, `test.bin` and `fine_label_names.txt` from `dir`.
pub fn load_cifar26(dir: &Path) -> AppResult<GlyphSet> {
    let names_path = dir.join("fine_label_names.txt");
    let names_raw = read_maybe_gz(&names_path)?;
    let names = parse_label_names(&String::from_utf8_lossy(&names_raw));
    let map = letter_map(&names).map_err(|e| AppError::file(&names_path, e))?;
    let pool = |file: &str| -> AppResult<GlyphPool> {
        let path = dir.join(file);
        let bytes = read_maybe_gz(&path)?;
        let records = parse_records(&bytes).map_err(|e| AppError::file(&path, e))?;
        records_to_pool(&records, &map).map_err(|e| AppError::file(&path, e))
    };
    Ok(GlyphSet::new("cifar26", pool("train.bin")?, pool("test.bin")?)?)
}
