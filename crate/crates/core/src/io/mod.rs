//! On-disk formats: weight files with pruning masks, 16-bit PGM label maps,
//! grayscale PFM float maps, and the results CSV.

mod netpbm;
mod results;
mod weights;

pub use netpbm::{
    decode_floatmap, decode_labelmap, encode_floatmap, encode_labelmap, load_floatmap,
    load_labelmap, save_floatmap, save_labelmap,
};
pub use results::{format_float, read_results_csv, write_results_csv, RESULTS_HEADER};
pub use weights::{
    decode_weights, encode_weights, load_network, save_network, WeightEntry, WEIGHT_MAGIC,
    WEIGHT_VERSION,
};

use std::path::Path;

use thiserror::Error;

use crate::autonet::AutonetError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated input: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("tensor `{name}`: masked-out entry {index} is not zero")]
    MaskInconsistent { name: String, index: usize },
    #[error("tensor `{name}`: {reason}")]
    BadTensor { name: String, reason: String },
    #[error("label {0} does not fit in 16 bits")]
    LabelOverflow(u32),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Network(#[from] AutonetError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv record {record}: {reason}")]
    CsvRecord { record: usize, reason: String },
}

fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}
