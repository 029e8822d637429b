//! `.mgrf` feature blobs.
//!
//! Header: magic `"MGRF"`, then `version`, `count`, `dim` as little-endian
//! `u32`, followed by `count·dim` little-endian `f32` values in row order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"MGRF";
pub const BLOB_VERSION: u32 = 1;
const HEADER_BYTES: usize = 16;

/// A dense `count × dim` matrix of features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlob {
    pub count: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl FeatureBlob {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Format(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self {
            count: data.len() / dim,
            dim,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.data.len() * 4);
        out.extend_from_slice(BLOB_MAGIC);
        out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.count as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES {
            return Err(Error::Corruption(format!(
                "header needs {HEADER_BYTES} bytes, found {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != BLOB_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != BLOB_VERSION {
            return Err(Error::Format(format!("unsupported blob version {version}")));
        }
        let count = word(8) as usize;
        let dim = word(12) as usize;
        let expected = count * dim * 4;
        let actual = bytes.len() - HEADER_BYTES;
        if actual != expected {
            return Err(Error::Corruption(format!(
                "payload for {count}x{dim} needs {expected} bytes, found {actual}"
            )));
        }
        let data = bytes[HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { count, dim, data })
    }
}

pub fn read_feature_blob(path: &Path) -> Result<FeatureBlob> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    FeatureBlob::decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Corruption(m) => Error::Corruption(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_feature_blob(path: &Path, blob: &FeatureBlob) -> Result<()> {
    fs::write(path, blob.encode()).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_identical() {
        let data: Vec<f32> = (0..12).map(|i| (i as f32).sin() * 1e3).collect();
        let blob = FeatureBlob::new(4, data).unwrap();
        assert_eq!(blob.count, 3);
        let back = FeatureBlob::decode(&blob.encode()).unwrap();
        let bits = |b: &FeatureBlob| b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&blob));
        assert_eq!((back.count, back.dim), (3, 4));
    }

    #[test]
    fn header_layout_is_fixed() {
        let blob = FeatureBlob::new(2, vec![1.0, -2.0]).unwrap();
        let bytes = blob.encode();
        assert_eq!(&bytes[..4], b"MGRF");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut bytes = FeatureBlob::new(2, vec![0.0; 4]).unwrap().encode();
        bytes[..4].copy_from_slice(b"NOPE");
        assert!(matches!(FeatureBlob::decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn short_payload_reports_expected_and_actual_bytes() {
        let bytes = FeatureBlob::new(4, vec![0.0; 12]).unwrap().encode();
        let err = FeatureBlob::decode(&bytes[..bytes.len() - 3]).unwrap_err();
        match err {
            Error::Corruption(msg) => assert!(msg.contains("48") && msg.contains("45"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
