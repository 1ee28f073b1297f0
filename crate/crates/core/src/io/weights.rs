//! Weight file layout, all integers little-endian:
//!
//! ```text
//! "PRNW" | version u32 = 1 | tensor count u32
//! per tensor: name length u16 | UTF-8 name | ndim u8 | dims u32 x ndim
//!             | has_mask u8 (0 or 1) | f32 data | mask bits ceil(n/8), LSB first, 1 = keep
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::{read_file, write_file, IoError};
use crate::autonet::{Architecture, Network};
use crate::pruner::PruneMask;
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 4] = b"PRNW";
pub const WEIGHT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub tensor: Tensor,
    pub mask: Option<Vec<bool>>,
}

pub fn encode_weights(entries: &[WeightEntry]) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        let bad = |reason: &str| IoError::BadTensor {
            name: e.name.clone(),
            reason: reason.to_string(),
        };
        let name_len =
            u16::try_from(e.name.len()).map_err(|_| bad("name longer than 65535 bytes"))?;
        let ndim =
            u8::try_from(e.tensor.shape().len()).map_err(|_| bad("more than 255 dimensions"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(ndim);
        for &d in e.tensor.shape() {
            let d = u32::try_from(d).map_err(|_| bad("dimension exceeds u32"))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(u8::from(e.mask.is_some()));
        for &v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(bits) = &e.mask {
            if bits.len() != e.tensor.len() {
                return Err(bad("mask length differs from tensor length"));
            }
            if let Some(index) = bits
                .iter()
                .zip(e.tensor.data())
                .position(|(&k, &v)| !k && v != 0.0)
            {
                return Err(IoError::MaskInconsistent {
                    name: e.name.clone(),
                    index,
                });
            }
            let mut packed = vec![0u8; bits.len().div_ceil(8)];
            for (i, _) in bits.iter().enumerate().filter(|(_, &k)| k) {
                packed[i / 8] |= 1 << (i % 8);
            }
            out.extend_from_slice(&packed);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(IoError::Truncated {
                offset: self.pos,
                needed: n - available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, IoError> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("two bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("four bytes"),
        ))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<WeightEntry>, IoError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| IoError::BadMagic)? != WEIGHT_MAGIC {
        return Err(IoError::BadMagic);
    }
    let version = r.u32()?;
    if version != WEIGHT_VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let count = r.u32()?;
    let mut entries: Vec<WeightEntry> = Vec::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| IoError::Header("tensor name is not UTF-8".into()))?
            .to_string();
        let bad = |reason: String| IoError::BadTensor {
            name: name.clone(),
            reason,
        };
        if entries.iter().any(|e| e.name == name) {
            return Err(bad("duplicate tensor name".into()));
        }
        let ndim = r.u8()? as usize;
        if ndim == 0 {
            return Err(bad("zero dimensions".into()));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut n = 1usize;
        for _ in 0..ndim {
            let d = r.u32()? as usize;
            if d == 0 {
                return Err(bad("zero-sized dimension".into()));
            }
            n = n
                .checked_mul(d)
                .ok_or_else(|| bad("element count overflows".into()))?;
            shape.push(d);
        }
        let has_mask = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(bad(format!("mask flag {other} is not 0 or 1"))),
        };
        let byte_len = n
            .checked_mul(4)
            .ok_or_else(|| bad("element count overflows".into()))?;
        let data: Vec<f32> = r
            .take(byte_len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        let mask = if has_mask {
            let packed = r.take(n.div_ceil(8))?;
            if !n.is_multiple_of(8) && packed[n / 8] >> (n % 8) != 0 {
                return Err(bad("mask padding bits are set".into()));
            }
            let bits: Vec<bool> = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
            if let Some(index) = bits.iter().zip(&data).position(|(&k, &v)| !k && v != 0.0) {
                return Err(IoError::MaskInconsistent { name, index });
            }
            Some(bits)
        } else {
            None
        };
        let tensor = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
        entries.push(WeightEntry { name, tensor, mask });
    }
    if r.pos != bytes.len() {
        return Err(IoError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(entries)
}

/// Writes every parameter (sorted by name) with its mask, if any.
pub fn save_network(path: &Path, net: &Network) -> Result<(), IoError> {
    let entries: Vec<WeightEntry> = net
        .params()
        .iter()
        .map(|(name, t)| WeightEntry {
            name: name.clone(),
            tensor: t.clone(),
            mask: net.masks().get(name).map(|m| m.bits().to_vec()),
        })
        .collect();
    write_file(path, &encode_weights(&entries)?)
}

/// Reads a weight file and binds it to `arch`; names and shapes must match.
pub fn load_network(path: &Path, arch: &Architecture) -> Result<Network, IoError> {
    let entries = decode_weights(&read_file(path)?)?;
    let mut params = BTreeMap::new();
    let mut masks = BTreeMap::new();
    for e in entries {
        if let Some(bits) = e.mask {
            masks.insert(e.name.clone(), PruneMask::new(e.name.clone(), bits));
        }
        params.insert(e.name, e.tensor);
    }
    Ok(Network::from_parts(arch.clone(), params, masks)?)
}
