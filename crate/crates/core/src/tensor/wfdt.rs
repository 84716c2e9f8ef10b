//! `WFDT` binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | field   | size          | value                         |
//! |---------|---------------|-------------------------------|
//! | magic   | 4             | `WFDT`                        |
//! | version | u32           | 1                             |
//! | dtype   | u8            | 0 = f32, 1 = f64              |
//! | ndim    | u32           |                               |
//! | extents | ndim × u64    |                               |
//! | payload | numel × width | row-major little-endian IEEE  |

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WFDT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            other => Err(Error::Format(format!("unsupported WFDT dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Serializes `t` with the given payload type. `F64` is lossless.
pub fn write_to<W: Write>(mut w: W, t: &Tensor, dtype: DType) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[dtype as u8])?;
    w.write_all(&(t.ndim() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(t.numel() * dtype.width());
    match dtype {
        DType::F32 => t
            .data()
            .iter()
            .for_each(|&v| payload.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => t
            .data()
            .iter()
            .for_each(|&v| payload.extend_from_slice(&v.to_le_bytes())),
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_from<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad WFDT magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported WFDT version {version}")));
    }
    let mut code = [0u8; 1];
    read_exact(&mut r, &mut code, "dtype")?;
    let dtype = DType::from_code(code[0])?;
    let ndim = read_u32(&mut r)? as usize;
    if ndim > 16 {
        return Err(Error::Format(format!("implausible WFDT rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        read_exact(&mut r, &mut b, "extent")?;
        let d = u64::from_le_bytes(b);
        shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("extent {d} too large")))?);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("WFDT element count overflows".into()))?;
    let mut payload = vec![0u8; numel * dtype.width()];
    read_exact(&mut r, &mut payload, "payload")?;
    let data = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Tensor::new(&shape, data)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_to(&mut w, t, DType::F64)?;
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    read_from(std::io::BufReader::new(f))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format(format!("truncated WFDT ({what})")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "header")?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;
    use proptest::prelude::*;

    #[test]
    fn header_bytes() {
        let t = Tensor::new(&[2], vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_to(&mut buf, &t, DType::F32).unwrap();
        assert_eq!(&buf[..4], b"WFDT");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(buf[8], 0);
        assert_eq!(&buf[9..13], &1u32.to_le_bytes());
        assert_eq!(&buf[13..21], &2u64.to_le_bytes());
        assert_eq!(&buf[21..25], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 29);
    }

    #[test]
    fn rejects_truncation_and_garbage() {
        let t = Tensor::randn(&[3, 4], &mut Rng::new(0));
        let mut buf = Vec::new();
        write_to(&mut buf, &t, DType::F64).unwrap();
        assert!(matches!(read_from(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_from(&bad[..]).is_err());
        let mut nan = buf.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(read_from(&nan[..]), Err(Error::NonFinite { .. })));
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(
            shape in prop::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            let t = Tensor::randn(&shape, &mut Rng::new(seed)).scale(1e3);
            let mut buf = Vec::new();
            write_to(&mut buf, &t, DType::F64).unwrap();
            let back = read_from(&buf[..]).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            let mut again = Vec::new();
            write_to(&mut again, &back, DType::F64).unwrap();
            prop_assert_eq!(buf, again);
        }
    }
}
