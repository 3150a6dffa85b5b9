//! On-disk formats: dataset loaders and the files this tool writes.

pub mod cifar;
pub mod font;
pub mod idx;
pub mod model;
pub mod tables;

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{AppError, AppResult};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Reads a whole file, inflating it first if it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> AppResult<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| AppError::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| AppError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// The first existing path among `name` and `name.gz` inside `dir`.
pub fn find_with_gz(dir: &Path, name: &str) -> AppResult<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(AppError::io(plain, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found (also tried .gz)")))
}

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| AppError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| AppError::io(&tmp, e))?;
    f.sync_all().map_err(|e| AppError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

/// `magic | u32 LE header length | JSON header | payload`.
pub(crate) fn encode_with_header(magic: &[u8; 4], header: &serde_json::Value, payload: &[u8]) -> Vec<u8> {
    let head = serde_json::to_vec(header).expect("JSON values always serialize");
    let mut out = Vec::with_capacity(8 + head.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(head.len() as u32).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(payload);
    out
}

/// Splits a file written by [`encode_with_header`]; returns the header and
/// the payload with its byte offset in the file.
pub(crate) fn decode_with_header<'a>(
    magic: &[u8; 4],
    bytes: &'a [u8],
) -> ungrounded_core::Result<(serde_json::Value, &'a [u8], usize)> {
    use ungrounded_core::Error;
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(Error::Format { offset: 0, message: format!("missing {} magic", String::from_utf8_lossy(magic)) });
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let end = 8usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or(Error::Format {
        offset: 4,
        message: format!("header length {len} runs past the end of the file"),
    })?;
    let header = serde_json::from_slice(&bytes[8..end])
        .map_err(|e| Error::Format { offset: 8 + e.column().saturating_sub(1), message: format!("bad header: {e}") })?;
    Ok((header, &bytes[end..], end))
}

pub(crate) fn f32_payload(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

pub(crate) fn read_f32s(payload: &[u8], count: usize, offset: usize) -> ungrounded_core::Result<Vec<f64>> {
    if payload.len() != count * 4 {
        return Err(ungrounded_core::Error::Format {
            offset: offset + payload.len().min(count * 4),
            message: format!("expected {count} float32 values, found {} bytes", payload.len()),
        });
    }
    Ok(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
}
