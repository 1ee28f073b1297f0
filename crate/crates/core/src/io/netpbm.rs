//! Binary PGM ("P5") label maps and grayscale PFM ("Pf") float maps.
//!
//! Label maps are written with maxval 65535 and two big-endian bytes per
//! sample; the reader also accepts one-byte files (maxval < 256). Float maps
//! use scale `-1.0` (little-endian) and store rows bottom to top.

use std::path::Path;

use super::{read_file, write_file, IoError};
use crate::labels::LabelMap;
use crate::tensor::Tensor;

/// Splits off `count` whitespace-separated header tokens (skipping `#`
/// comments) and the single whitespace byte that ends the header.
fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize), IoError> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
        match bytes.get(pos) {
            None => return Err(IoError::Header("header ends early".into())),
            Some(b'#') => {
                while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                    pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let start = pos;
                while bytes
                    .get(pos)
                    .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
                {
                    pos += 1;
                }
                let tok = std::str::from_utf8(&bytes[start..pos])
                    .map_err(|_| IoError::Header("header is not ASCII".into()))?;
                tokens.push(tok.to_string());
            }
        }
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => Ok((tokens, pos + 1)),
        _ => Err(IoError::Header("missing whitespace after header".into())),
    }
}

fn dimension(tok: &str, what: &str) -> Result<usize, IoError> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 && v <= u32::MAX as usize => Ok(v),
        _ => Err(IoError::Header(format!("invalid {what} `{tok}`"))),
    }
}

fn body(bytes: &[u8], start: usize, len: usize) -> Result<&[u8], IoError> {
    let available = bytes.len() - start;
    match available.cmp(&len) {
        std::cmp::Ordering::Less => Err(IoError::Truncated {
            offset: bytes.len(),
            needed: len - available,
        }),
        std::cmp::Ordering::Greater => Err(IoError::TrailingBytes(available - len)),
        std::cmp::Ordering::Equal => Ok(&bytes[start..]),
    }
}

pub fn encode_labelmap(lm: &LabelMap) -> Result<Vec<u8>, IoError> {
    let (h, w) = lm.dims();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(2 * h * w);
    for &l in lm.labels() {
        let v = u16::try_from(l).map_err(|_| IoError::LabelOverflow(l))?;
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

pub fn decode_labelmap(bytes: &[u8]) -> Result<LabelMap, IoError> {
    if bytes.len() < 2 {
        return Err(IoError::BadMagic);
    }
    if &bytes[..2] != b"P5" {
        return Err(if bytes[0] == b'P' && bytes[1].is_ascii_digit() {
            IoError::Unsupported(format!("netpbm variant P{}", bytes[1] as char))
        } else {
            IoError::BadMagic
        });
    }
    let (tok, start) = header_tokens(bytes, 4)?;
    if tok[0] != "P5" {
        return Err(IoError::BadMagic);
    }
    let w = dimension(&tok[1], "width")?;
    let h = dimension(&tok[2], "height")?;
    let maxval: u32 = match tok[3].parse() {
        Ok(v) if (1..=65535).contains(&v) => v,
        _ => return Err(IoError::Header(format!("invalid maxval `{}`", tok[3]))),
    };
    let n = h
        .checked_mul(w)
        .filter(|n| n.checked_mul(2).is_some())
        .ok_or_else(|| IoError::Header("image too large".into()))?;
    let sample = if maxval < 256 { 1 } else { 2 };
    let data = body(bytes, start, n * sample)?;
    let labels: Vec<u32> = if sample == 1 {
        data.iter().map(|&b| b as u32).collect()
    } else {
        data.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    };
    if let Some(&v) = labels.iter().find(|&&v| v > maxval) {
        return Err(IoError::Header(format!(
            "sample {v} exceeds maxval {maxval}"
        )));
    }
    Ok(LabelMap::new(h, w, labels).expect("length checked"))
}

pub fn save_labelmap(path: &Path, lm: &LabelMap) -> Result<(), IoError> {
    write_file(path, &encode_labelmap(lm)?)
}

pub fn load_labelmap(path: &Path) -> Result<LabelMap, IoError> {
    decode_labelmap(&read_file(path)?)
}

/// Encodes a single-plane map (`[H, W]` or `[1, H, W]`).
pub fn encode_floatmap(map: &Tensor) -> Result<Vec<u8>, IoError> {
    let (h, w) = map
        .plane_dims()
        .map_err(|e| IoError::Unsupported(e.to_string()))?;
    if let Some(i) = map.data().iter().position(|v| !v.is_finite()) {
        return Err(IoError::NonFinite(i));
    }
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for row in map.data().chunks_exact(w).rev() {
        for &v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a grayscale PFM into a `[1, H, W]` tensor with row 0 at the top.
pub fn decode_floatmap(bytes: &[u8]) -> Result<Tensor, IoError> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(IoError::BadMagic);
    }
    match bytes[1] {
        b'f' => {}
        b'F' => return Err(IoError::Unsupported("colour PFM (PF)".into())),
        _ => return Err(IoError::BadMagic),
    }
    let (tok, start) = header_tokens(bytes, 4)?;
    if tok[0] != "Pf" {
        return Err(IoError::BadMagic);
    }
    let w = dimension(&tok[1], "width")?;
    let h = dimension(&tok[2], "height")?;
    let scale: f64 = tok[3]
        .parse()
        .map_err(|_| IoError::Header(format!("invalid scale `{}`", tok[3])))?;
    if !(scale.is_finite() && scale != 0.0) {
        return Err(IoError::Header(format!("invalid scale `{}`", tok[3])));
    }
    let little = scale < 0.0;
    let n = h
        .checked_mul(w)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| IoError::Header("image too large".into()))?;
    let data = body(bytes, start, n * 4)?;
    let mut out = vec![0.0f32; n];
    for (i, c) in data.chunks_exact(4).enumerate() {
        let raw = [c[0], c[1], c[2], c[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        if !v.is_finite() {
            return Err(IoError::NonFinite(i));
        }
        let (row, col) = (h - 1 - i / w, i % w);
        out[row * w + col] = v;
    }
    Ok(Tensor::new(vec![1, h, w], out).expect("dims are positive"))
}

pub fn save_floatmap(path: &Path, map: &Tensor) -> Result<(), IoError> {
    write_file(path, &encode_floatmap(map)?)
}

pub fn load_floatmap(path: &Path) -> Result<Tensor, IoError> {
    decode_floatmap(&read_file(path)?)
}
