//! Binary matrix files: 8-byte magic, rows and cols as little-endian u64,
//! then row-major little-endian f64 entries.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"KSKMAT01";

pub fn write_matrix<W: Write>(mut w: W, a: &DMatrix<f64>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(a.nrows() as u64).to_le_bytes())?;
    w.write_all(&(a.ncols() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(a.len() * 8);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            buf.extend_from_slice(&a[(i, j)].to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head)?;
    if &head[..8] != MAGIC {
        return Err(Error::Parse("bad matrix magic".into()));
    }
    let rows = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(head[16..24].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != rows * cols * 8 {
        return Err(Error::Parse(format!(
            "matrix body has {} bytes, expected {}",
            body.len(),
            rows * cols * 8
        )));
    }
    let vals: Vec<f64> =
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}
