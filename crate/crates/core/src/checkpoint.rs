//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "TALSC001"
//! count    u32      number of arrays
//! per array:
//!   name_len u32, name utf-8 bytes
//!   ndim     u32, dims u64 * ndim
//!   data     f64 * prod(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TALSC001";

/// One named array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!(
                "array {name}: shape {shape:?} does not hold {} values",
                data.len()
            )));
        }
        Ok(Array { name, shape, data })
    }

    pub fn vector(name: impl Into<String>, data: &[f64]) -> Self {
        Array {
            name: name.into(),
            shape: vec![data.len()],
            data: data.to_vec(),
        }
    }
}

pub fn write<W: Write>(mut w: W, arrays: &[Array]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for a in arrays {
        w.write_all(&(a.name.len() as u32).to_le_bytes())?;
        w.write_all(a.name.as_bytes())?;
        w.write_all(&(a.shape.len() as u32).to_le_bytes())?;
        for &d in &a.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &a.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated checkpoint: {e}"))
}

pub fn read<R: Read>(mut r: R) -> Result<Vec<Array>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            std::str::from_utf8(MAGIC).expect("ascii")
        )));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|e| Error::Format(format!("array name: {e}")))?;
        let ndim = read_u32(&mut r)?;
        let shape = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| read_u64(&mut r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        out.push(Array { name, shape, data });
    }
    Ok(out)
}

pub fn save(path: &Path, arrays: &[Array]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write(&mut w, arrays)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Array>> {
    read(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let arrays = vec![
            Array::new("w", vec![2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -7.25]).unwrap(),
            Array::vector("empty", &[]),
        ];
        let mut buf = Vec::new();
        write(&mut buf, &arrays).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = read(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in arrays.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits = |x: &Array| x.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read(&b"TALSC002\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write(&mut buf, &[Array::vector("x", &[1.0, 2.0])]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read(buf.as_slice()).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Array::new("bad", vec![2, 2], vec![0.0; 3]).is_err());
    }
}
