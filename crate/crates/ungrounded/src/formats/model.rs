//! Encoder parameters: float32 little-endian values after a JSON header
//! `{dim, hidden, classes, seed, scheme}`.

use serde::{Deserialize, Serialize};
use ungrounded_core::encoder::{param_count, EncoderParams, InitScheme, CLASSES, HIDDEN};
use ungrounded_core::{Error, Result};

use super::{decode_with_header, encode_with_header, f32_payload, read_f32s};

const MAGIC: &[u8; 4] = b"UGEP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub seed: u64,
    pub scheme: String,
}

pub fn encode_params(p: &EncoderParams, seed: u64, scheme: InitScheme) -> Vec<u8> {
    let header = ModelHeader { dim: p.dim(), hidden: HIDDEN, classes: CLASSES, seed, scheme: scheme.to_string() };
    encode_with_header(
        MAGIC,
        &serde_json::to_value(header).expect("header serializes"),
        &f32_payload(p.as_slice().iter().copied()),
    )
}

pub fn decode_params(bytes: &[u8]) -> Result<(ModelHeader, EncoderParams)> {
    let (header, payload, offset) = decode_with_header(MAGIC, bytes)?;
    let header: ModelHeader = serde_json::from_value(header)
        .map_err(|e| Error::Format { offset: 8, message: format!("bad model header: {e}") })?;
    if header.hidden != HIDDEN || header.classes != CLASSES {
        return Err(Error::Format {
            offset: 8,
            message: format!("model shape {}x{} differs from {HIDDEN}x{CLASSES}", header.hidden, header.classes),
        });
    }
    let values = read_f32s(payload, param_count(header.dim), offset)?;
    let params = EncoderParams::from_flat(header.dim, values)?;
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ungrounded_core::encoder::init_params;

    #[test]
    fn round_trip_rounds_to_f32() {
        let p = init_params(30, InitScheme::Kaiming, 4).unwrap();
        let bytes = encode_params(&p, 4, InitScheme::Kaiming);
        let (h, q) = decode_params(&bytes).unwrap();
        assert_eq!(h.seed, 4);
        assert_eq!(h.scheme, "kaiming");
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            assert_eq!(*b, *a as f32 as f64);
        }
        assert_eq!(encode_params(&q, 4, InitScheme::Kaiming), bytes);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let p = init_params(30, InitScheme::Xavier, 0).unwrap();
        let bytes = encode_params(&p, 0, InitScheme::Xavier);
        assert!(matches!(decode_params(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
        assert!(matches!(decode_params(b"nope"), Err(Error::Format { offset: 0, .. })));
    }
}
