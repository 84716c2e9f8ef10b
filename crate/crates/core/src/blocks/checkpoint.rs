//! Checkpoint archive: a JSON header followed by named WFDT tensors.
//!
//! Layout (little-endian): magic `WFDA`, u32 version, u32 header length,
//! header bytes (UTF-8 JSON), u32 entry count, then per entry a u32 name
//! length, the name bytes and a WFDT tensor blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::wfdt::{self, DType};

pub const MAGIC: &[u8; 4] = b"WFDA";
pub const VERSION: u32 = 1;
const MAX_STRING: usize = 1 << 24;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: String,
    pub params: ParamStore,
}

pub fn write_to<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    write_str(&mut w, &ckpt.header)?;
    w.write_all(&(ckpt.params.len() as u32).to_le_bytes())?;
    for (name, t) in ckpt.params.iter() {
        write_str(&mut w, name)?;
        wfdt::write_to(&mut w, t, DType::F64)?;
    }
    Ok(())
}

pub fn read_from<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let header = read_str(&mut r)?;
    let count = read_u32(&mut r)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = read_str(&mut r)?;
        params.add(name, wfdt::read_from(&mut r)?)?;
    }
    Ok(Checkpoint { header, params })
}

pub fn save(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(f);
    write_to(&mut w, ckpt)?;
    w.flush().map_err(|e| Error::file(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    read_from(BufReader::new(f))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > MAX_STRING {
        return Err(Error::Format(format!("string of {len} bytes in checkpoint")));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn round_trip_and_truncation() {
        let mut params = ParamStore::new();
        params.add("a.weight", Tensor::new(&[2, 1], vec![0.1, -1e-300]).unwrap()).unwrap();
        params.add("b", Tensor::scalar(std::f64::consts::PI)).unwrap();
        let ckpt = Checkpoint {
            header: "{\"k\":1}".into(),
            params,
        };
        let mut buf = Vec::new();
        write_to(&mut buf, &ckpt).unwrap();
        assert_eq!(read_from(&buf[..]).unwrap(), ckpt);
        assert!(matches!(read_from(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(read_from(&buf[..]).is_err());
    }
}
