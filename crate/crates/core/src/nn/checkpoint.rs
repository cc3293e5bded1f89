//! MSCK checkpoint container.
//!
//! Layout: `b"MSCK"`, u16 version, then until EOF one record per tensor:
//! u32 name length, UTF-8 name, u32 rank, `rank` u64 extents, raw f32 data.
//! All integers and floats are little-endian.

use std::io::{ErrorKind, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const MAGIC: [u8; 4] = *b"MSCK";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &e in &r.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.buf.len() as u64,
            });
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse a checkpoint image; `path` is used only for error reports.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Record>> {
    let mut cur = Cursor { buf: bytes, pos: 0, path };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("unsupported checkpoint version {version}"),
        });
    }
    let mut records = Vec::new();
    while cur.pos < bytes.len() {
        let n = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(n)?)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                detail: format!("record name is not UTF-8: {e}"),
            })?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                detail: format!("{name}: extents {shape:?} overflow"),
            })?;
        let data = cur
            .take(count)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

pub fn write(path: &Path, records: &[Record]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(records)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<Record>> {
    let mut f = std::fs::File::open(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    decode(&buf, path)
}

pub fn records_of<T: Scalar>(store: &ParamStore<T>) -> Vec<Record> {
    store
        .to_records()
        .into_iter()
        .map(|(name, shape, data)| Record { name, shape, data })
        .collect()
}

pub fn save<T: Scalar>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    write(path, &records_of(store))
}

pub fn load<T: Scalar>(path: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let records: Vec<_> = read(path)?
        .into_iter()
        .map(|r| (r.name, r.shape, r.data))
        .collect();
    store.load_records(&records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Record> {
        vec![
            Record {
                name: "conv1.weight".into(),
                shape: vec![2, 1, 1, 3],
                data: vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0e-42, 7.0, -2.25],
            },
            Record {
                name: "bn.tracked".into(),
                shape: vec![],
                data: vec![4.0],
            },
            Record {
                name: "empty".into(),
                shape: vec![0, 5],
                data: vec![],
            },
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = encode(&sample());
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, sample());
        assert_eq!(encode(&back), bytes);
        // negative zero and the subnormal survive
        assert_eq!(back[0].data[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, Path::new("m")), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1], Path::new("m")),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn missing_file_maps_to_missing() {
        let err = read(Path::new("/nonexistent/dir/x.msck")).unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }
}
