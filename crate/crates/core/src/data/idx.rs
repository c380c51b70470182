//! IDX files (the MNIST container): two zero bytes, a dtype byte, a
//! dimension-count byte, one big-endian `u32` per dimension, then the
//! payload. Only unsigned-byte payloads (dtype `0x08`) are supported.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const DTYPE_U8: u8 = 0x08;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    /// Payload widened to `[0, 1]` by dividing by 255.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(
            self.dims.clone(),
            self.data.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn to_labels(&self) -> Result<Vec<usize>> {
        if self.dims.len() != 1 {
            return Err(Error::Format {
                offset: 3,
                message: format!("label file must have 1 dimension, found {}", self.dims.len()),
            });
        }
        Ok(self.data.iter().map(|&b| usize::from(b)).collect())
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("header needs 4 bytes, file has {}", bytes.len()),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic: expected 00 00, found {:02x} {:02x}", bytes[0], bytes[1]),
        });
    }
    if bytes[2] != DTYPE_U8 {
        return Err(Error::Format {
            offset: 2,
            message: format!("unsupported dtype 0x{:02x} (only 0x08 is supported)", bytes[2]),
        });
    }
    let ndims = usize::from(bytes[3]);
    if ndims == 0 {
        return Err(Error::Format {
            offset: 3,
            message: "dimension count is zero".into(),
        });
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("header needs {header} bytes, file has {}", bytes.len()),
        });
    }
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        let off = 4 + 4 * i;
        let d = u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(Error::Format {
                offset: off,
                message: format!("dimension {i} has size zero"),
            });
        }
        dims.push(d);
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format {
            offset: 4,
            message: "dimension product overflows".into(),
        })?;
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(Error::Format {
            offset: header,
            message: format!("payload should be {expected} bytes, found {actual}"),
        });
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

fn read(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Loads an IDX file as a tensor of values in `[0, 1]`.
pub fn load_idx(path: impl AsRef<Path>) -> Result<Tensor> {
    read(path.as_ref())?.to_tensor()
}

/// Loads a one-dimensional IDX label file as raw class indices.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    read(path.as_ref())?.to_labels()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dims: &[u32]) -> Vec<u8> {
        let mut b = vec![0, 0, 8, dims.len() as u8];
        for d in dims {
            b.extend_from_slice(&d.to_be_bytes());
        }
        b
    }

    #[test]
    fn three_dim_file() {
        let mut b = header(&[2, 3, 4]);
        b.extend((0..24).map(|i| i as u8));
        let a = parse_idx(&b).unwrap();
        assert_eq!(a.dims, vec![2, 3, 4]);
        assert_eq!(a.data.len(), 24);
        assert_eq!(a.to_tensor().unwrap().shape(), &[2, 3, 4]);
    }

    #[test]
    fn rejects_other_dtypes() {
        let mut b = header(&[1]);
        b[2] = 0x0D;
        b.extend_from_slice(&[0, 0, 0, 0]);
        match parse_idx(&b) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut b = header(&[1]);
        b[0] = 1;
        b.push(0);
        assert!(matches!(parse_idx(&b), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_payload_reports_counts() {
        let mut b = header(&[10]);
        b.extend_from_slice(&[1, 2, 3]);
        let msg = parse_idx(&b).unwrap_err().to_string();
        assert!(msg.contains("10") && msg.contains("3"), "{msg}");
    }

    #[test]
    fn full_byte_is_one() {
        let mut b = header(&[1]);
        b.push(255);
        assert_eq!(parse_idx(&b).unwrap().to_tensor().unwrap().data(), &[1.0]);
    }

    #[test]
    fn label_files_parse_with_one_dim() {
        let mut b = vec![0, 0, 8, 1];
        b.extend_from_slice(&3u32.to_be_bytes());
        b.extend_from_slice(&[7, 0, 9]);
        assert_eq!(parse_idx(&b).unwrap().to_labels().unwrap(), vec![7, 0, 9]);
    }
}
