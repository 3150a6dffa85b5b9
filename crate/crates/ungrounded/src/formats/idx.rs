//! IDX binary arrays (the MNIST family), and the EMNIST Letters split.

use std::path::Path;

use ungrounded_core::alphabet::Letter;
use ungrounded_core::fonts::{GlyphPool, GlyphSet};
use ungrounded_core::linalg::Matrix;
use ungrounded_core::{Error, Result};

use super::{find_with_gz, read_maybe_gz};
use crate::error::{AppError, AppResult};

/// An unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Number of items along the first axis.
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Product of all but the first dimension.
    pub fn item_size(&self) -> usize {
        self.dims.iter().skip(1).product()
    }
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

/// Parses `00 00 08 ndim`, `ndim` big-endian u32 sizes, then the bytes.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "file shorter than the IDX magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(0, "IDX magic must start with two zero bytes"));
    }
    if bytes[2] != 0x08 {
        return Err(format_err(2, format!("unsupported IDX element type 0x{:02x}; only unsigned bytes", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(format_err(3, "IDX array with zero dimensions"));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(format_err(bytes.len(), format!("truncated IDX header: {ndim} dimensions need {header} bytes")));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let total = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(format_err(4, "IDX size overflows"))?;
    let body = &bytes[header..];
    if body.len() != total {
        return Err(format_err(
            header + body.len().min(total),
            format!("IDX body holds {} bytes, dimensions {dims:?} need {total}", body.len()),
        ));
    }
    Ok(IdxArray { dims, data: body.to_vec() })
}

/// Pixel bytes to `[0, 1]` floats, one row per item.
pub fn images_to_matrix(images: &IdxArray) -> Result<Matrix> {
    let n = images.len();
    let d = images.item_size();
    Matrix::from_vec(n, d, images.data.iter().map(|&b| b as f64 / 255.0).collect())
}

/// EMNIST Letters labels run 1..=26; returns them as 0..=25.
pub fn letter_labels(labels: &IdxArray) -> Result<Vec<Letter>> {
    if labels.dims.len() != 1 {
        return Err(format_err(3, "label file must be one-dimensional"));
    }
    let header = 8;
    labels
        .data
        .iter()
        .enumerate()
        .map(|(i, &l)| match l {
            1..=26 => Ok(l - 1),
            _ => Err(format_err(header + i, format!("label {l} outside 1..=26"))),
        })
        .collect()
}

pub fn load_labeled(images_path: &Path, labels_path: &Path) -> AppResult<GlyphPool> {
    let images = parse_idx(&read_maybe_gz(images_path)?).map_err(|e| AppError::file(images_path, e))?;
    let labels = parse_idx(&read_maybe_gz(labels_path)?).map_err(|e| AppError::file(labels_path, e))?;
    let letters = letter_labels(&labels).map_err(|e| AppError::file(labels_path, e))?;
    if images.len() != letters.len() {
        return Err(AppError::file(
            labels_path,
            Error::Data(format!("{} images but {} labels", images.len(), letters.len())),
        ));
    }
    let m = images_to_matrix(&images).map_err(|e| AppError::file(images_path, e))?;
    Ok(GlyphPool::from_labeled(&m, &letters)?)
}

/// Loads `emnist-letters-{train,test}-{images-idx3,labels-idx1}-ubyte[.gz]`.
pub fn load_emnist_letters(dir: &Path) -> AppResult<GlyphSet> {
    let pool = |split: &str| -> AppResult<GlyphPool> {
        let images = find_with_gz(dir, &format!("emnist-letters-{split}-images-idx3-ubyte"))?;
        let labels = find_with_gz(dir, &format!("emnist-letters-{split}-labels-idx1-ubyte"))?;
        load_labeled(&images, &labels)
    };
    Ok(GlyphSet::new("emnist-letters", pool("train")?, pool("test")?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(dims: &[u32], body: &[u8]) -> Vec<u8> {
        let mut out = vec![0, 0, 8, dims.len() as u8];
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(body);
        out
    }

    #[test]
    fn parses_a_small_array() {
        let a = parse_idx(&idx(&[2, 2, 2], &[0, 255, 1, 2, 3, 4, 5, 6])).unwrap();
        assert_eq!(a.dims, [2, 2, 2]);
        assert_eq!(a.item_size(), 4);
        let m = images_to_matrix(&a).unwrap();
        assert_eq!(m.row(0), [0.0, 1.0, 1.0 / 255.0, 2.0 / 255.0]);
    }

    #[test]
    fn errors_carry_byte_offsets() {
        assert_eq!(parse_idx(&[0, 0, 9, 1]).unwrap_err(), format_err(2, "unsupported IDX element type 0x09; only unsigned bytes"));
        let short = idx(&[3], &[1, 2]);
        assert!(matches!(parse_idx(&short), Err(Error::Format { offset: 10, .. })));
        let long = idx(&[1], &[1, 2]);
        assert!(matches!(parse_idx(&long), Err(Error::Format { offset: 9, .. })));
        assert!(matches!(parse_idx(&[0, 0, 8, 2, 0]), Err(Error::Format { offset: 5, .. })));
    }

    #[test]
    fn letter_labels_are_shifted_and_checked() {
        let l = parse_idx(&idx(&[3], &[1, 26, 5])).unwrap();
        assert_eq!(letter_labels(&l).unwrap(), [0, 25, 4]);
        let bad = parse_idx(&idx(&[2], &[1, 27])).unwrap();
        assert!(matches!(letter_labels(&bad), Err(Error::Format { offset: 9, .. })));
    }
}
