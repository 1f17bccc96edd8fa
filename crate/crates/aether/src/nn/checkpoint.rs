//! AETH1 checkpoint files: named f32 tensors, little-endian.
//!
//! Layout: magic `AETH`, version u32 = 1, tensor count u32; then per tensor
//! a name (u16 length + UTF-8 bytes), rank u8, dims (u32 each), and the f32
//! payload in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AETH";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: &str, dims: Vec<u32>, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<u32>() as usize, data.len());
        NamedTensor {
            name: name.to_string(),
            dims,
            data,
        }
    }

    pub fn from_f64(name: &str, dims: Vec<u32>, data: &[f64]) -> Self {
        NamedTensor::new(name, dims, data.iter().map(|&x| x as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| f64::from(x)).collect()
    }
}

pub fn write_checkpoint(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    emit(CHECKPOINT_MAGIC)?;
    emit(&CHECKPOINT_VERSION.to_le_bytes())?;
    emit(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        emit(&(name.len() as u16).to_le_bytes())?;
        emit(name)?;
        emit(&[t.dims.len() as u8])?;
        for d in &t.dims {
            emit(&d.to_le_bytes())?;
        }
        for x in &t.data {
            emit(&x.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedTensor>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path, "AETH1")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            format: "AETH1",
            path: path.to_path_buf(),
        });
    }
    let version = read_u32(&mut r, path)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "AETH1",
            version,
            path: path.to_path_buf(),
        });
    }
    let count = read_u32(&mut r, path)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u16(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path, "AETH1")?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason: "tensor name is not valid UTF-8".into(),
        })?;
        let mut rank = [0u8; 1];
        read_exact(&mut r, &mut rank, path, "AETH1")?;
        let mut dims = Vec::with_capacity(rank[0] as usize);
        let mut len: u64 = 1;
        for _ in 0..rank[0] {
            let d = read_u32(&mut r, path)?;
            len = len.saturating_mul(u64::from(d));
            dims.push(d);
        }
        let mut data = vec![0f32; len as usize];
        let mut buf = [0u8; 4];
        for x in data.iter_mut() {
            read_exact(&mut r, &mut buf, path, "AETH1")?;
            *x = f32::from_le_bytes(buf);
        }
        tensors.push(NamedTensor { name, dims, data });
    }
    Ok(tensors)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, _format: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::TruncatedPayload {
                path: path.to_path_buf(),
                expected: buf.len() as u64,
                got: 0,
            }
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u16(r: &mut impl Read, path: &Path) -> Result<u16> {
    let mut buf = [0u8; 2];
    read_exact(r, &mut buf, path, "AETH1")?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path, "AETH1")?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.aeth");
        let tensors = vec![
            NamedTensor::new("w", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            NamedTensor::new("b", vec![3], vec![-0.5, 0.0, 0.5]),
        ];
        write_checkpoint(&path, &tensors).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, tensors);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.aeth");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        match read_checkpoint(&path) {
            Err(Error::BadMagic { format: "AETH1", .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.aeth");
        let tensors = vec![NamedTensor::new("w", vec![4], vec![1.0, 2.0, 3.0, 4.0])];
        write_checkpoint(&path, &tensors).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match read_checkpoint(&path) {
            Err(Error::TruncatedPayload { .. }) => {}
            other => panic!("expected TruncatedPayload, got {other:?}"),
        }
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.aeth");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"AETH");
        bytes.extend_from_slice(&9u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match read_checkpoint(&path) {
            Err(Error::UnsupportedVersion { version: 9, .. }) => {}
            other => panic!("expected UnsupportedVersion, got {other:?}"),
        }
    }
}
