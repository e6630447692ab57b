//! Portable array container used for features, landmarks and face tensors.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size        | field                                  |
//! |--------|-------------|----------------------------------------|
//! | 0      | 4           | magic `APBT`                           |
//! | 4      | 1           | format version, currently `1`          |
//! | 5      | 1           | dtype: `1` = f32, `2` = f64            |
//! | 6      | 2           | `ndim` (u16)                           |
//! | 8      | 8 × ndim    | dimensions (u64), outermost first      |
//! | …      | elem × Πdim | row-major element data                 |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"APBT";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }
}

/// An n-dimensional array loaded from disk, widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_array<W: Write>(mut w: W, shape: &[usize], data: &[f64], dtype: DType) -> Result<()> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::Shape(format!(
            "array shape {shape:?} does not hold {} values",
            data.len()
        )));
    }
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, dtype.code()])?;
    w.write_all(&(shape.len() as u16).to_le_bytes())?;
    for d in shape {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    match dtype {
        DType::F32 => {
            for v in data {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        DType::F64 => {
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_array<R: Read>(mut r: R) -> Result<Array> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("not an APBT array file".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Format(format!("unsupported array version {}", head[4])));
    }
    let dtype = match head[5] {
        1 => DType::F32,
        2 => DType::F64,
        other => return Err(Error::Format(format!("unknown dtype code {other}"))),
    };
    let ndim = u16::from_le_bytes([head[6], head[7]]) as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    match dtype {
        DType::F32 => {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            data.extend(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64),
            );
        }
        DType::F64 => {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            data.extend(buf.chunks_exact(8).map(|c| {
                f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
            }));
        }
    }
    Ok(Array { shape, data })
}

pub fn save(path: &Path, shape: &[usize], data: &[f64], dtype: DType) -> Result<()> {
    write_array(BufWriter::new(File::create(path)?), shape, data, dtype)
}

pub fn load(path: &Path) -> Result<Array> {
    read_array(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f64_roundtrip_is_exact(data in proptest::collection::vec(-1e6f64..1e6, 0..64)) {
            let shape = [data.len()];
            let mut buf = Vec::new();
            write_array(&mut buf, &shape, &data, DType::F64).unwrap();
            let back = read_array(buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape, shape.to_vec());
            prop_assert_eq!(back.data, data);
        }
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_array(&mut buf, &[2, 3], &[0.0; 6], DType::F32).unwrap();
        assert_eq!(&buf[..4], b"APBT");
        assert_eq!(buf[4], 1);
        assert_eq!(buf[5], 1);
        assert_eq!(u16::from_le_bytes([buf[6], buf[7]]), 2);
        assert_eq!(buf.len(), 8 + 16 + 6 * 4);
    }

    #[test]
    fn rejects_bad_magic_and_shape() {
        assert!(read_array(&b"NOPE\x01\x02\x00\x00"[..]).is_err());
        let mut buf = Vec::new();
        assert!(write_array(&mut buf, &[3], &[1.0, 2.0], DType::F64).is_err());
    }
}
