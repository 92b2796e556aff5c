//! Binary container of named matrices shared by every pipeline artifact.
//!
//! Layout (little-endian): the 8-byte magic, the entry count as u64, then per
//! entry the name length (u64), UTF-8 name, rows (u64), cols (u64) and the
//! values row by row as f64.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LTPBNDL1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bundle {
    entries: Vec<(String, DMatrix<f64>)>,
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace an entry; insertion order is kept on disk.
    pub fn insert(&mut self, name: impl Into<String>, m: DMatrix<f64>) {
        let name = name.into();
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = m;
        } else {
            self.entries.push((name, m));
        }
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.insert(name, DMatrix::from_element(1, 1, v));
    }

    pub fn insert_vector(&mut self, name: impl Into<String>, v: &[f64]) {
        self.insert(name, DMatrix::from_row_slice(1, v.len(), v));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format {
                path: Default::default(),
                message: format!("missing entry '{name}'"),
            })
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let m = self.get(name)?;
        if m.len() != 1 {
            return Err(Error::Shape(format!("entry '{name}' is not a scalar")));
        }
        Ok(m[(0, 0)])
    }

    pub fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let m = self.get(name)?;
        Ok(DVector::from_iterator(m.len(), m.transpose().iter().copied()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, m) in &self.entries {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    out.extend_from_slice(&m[(r, c)].to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err("bad magic".into());
        }
        let count = cur.u64()? as usize;
        let mut bundle = Bundle::new();
        for _ in 0..count {
            let len = cur.u64()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| "entry name is not UTF-8".to_string())?
                .to_string();
            let rows = cur.u64()? as usize;
            let cols = cur.u64()? as usize;
            let cells = rows.checked_mul(cols).ok_or("matrix size overflows")?;
            if cells.checked_mul(8).is_none_or(|b| b > bytes.len() - cur.pos) {
                return Err(format!("entry '{name}' is truncated"));
            }
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    m[(r, c)] = f64::from_bits(cur.u64()?);
                }
            }
            bundle.entries.push((name, m));
        }
        if cur.pos != bytes.len() {
            return Err("trailing bytes after last entry".into());
        }
        Ok(bundle)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Bundle::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err("unexpected end of bundle".into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut b = Bundle::new();
        b.insert("A", DMatrix::from_row_slice(2, 3, &[1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -7.25]));
        b.insert_scalar("s", 0.1);
        let back = Bundle::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), b.to_bytes());
        assert_eq!(back.scalar("s").unwrap(), 0.1);
        assert_eq!(back.get("A").unwrap()[(1, 2)], -7.25);
    }

    #[test]
    fn truncated_input_is_rejected() {
        let mut b = Bundle::new();
        b.insert("A", DMatrix::zeros(4, 4));
        let bytes = b.to_bytes();
        assert!(Bundle::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
