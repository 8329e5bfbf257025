//! Little-endian binary tensor files.
//!
//! Layout: `"ACRT"` · version `u32` · dtype `u8` · rank `u32` · extents `u64`×rank · values.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{Real, Tensor};
use crate::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"ACRT";
pub const TENSOR_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(Error::Format(format!("unknown dtype byte {other}"))),
        }
    }
}

pub(crate) fn eof_as_truncated(what: &str) -> impl Fn(io::Error) -> Error + '_ {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated(what.to_string())
        } else {
            Error::Io(e)
        }
    }
}

pub(crate) fn read_u8(r: &mut impl Read) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Writes the raw values of `t` in the given precision.
pub(crate) fn write_values(w: &mut impl Write, t: &Tensor, dtype: DType) -> io::Result<()> {
    match dtype {
        DType::F64 => {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        DType::F32 => {
            for v in t.data() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub(crate) fn read_values(r: &mut impl Read, n: usize, dtype: DType) -> io::Result<Vec<Real>> {
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut raw = vec![0u8; n * width];
    r.read_exact(&mut raw)?;
    Ok(match dtype {
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
            .collect(),
    })
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor, dtype: DType) -> io::Result<()> {
    w.write_all(&TENSOR_MAGIC)?;
    w.write_all(&TENSOR_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[dtype as u8])?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_values(w, t, dtype)
}

pub fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let trunc = eof_as_truncated("tensor");
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(&trunc)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic { expected: TENSOR_MAGIC, found: magic });
    }
    let version = read_u32(r).map_err(&trunc)?;
    if version != TENSOR_FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, supported: TENSOR_FORMAT_VERSION });
    }
    let dtype = DType::from_byte(read_u8(r).map_err(&trunc)?)?;
    let rank = read_u32(r).map_err(&trunc)? as usize;
    if rank > 16 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r).map_err(&trunc)? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let data = read_values(r, n, dtype).map_err(&trunc)?;
    Tensor::new(&shape, data)
}

pub fn encode(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + t.numel() * 8);
    write_tensor(&mut buf, t, dtype).expect("writing to a Vec cannot fail");
    buf
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t, DType::F64))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let mut cursor = bytes.as_slice();
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after tensor", cursor.len())));
    }
    Ok(t)
}
