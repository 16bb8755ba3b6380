//! Binary cache for converted matrices.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SPMC" | version u16 | kind u8 (1 = CSR, 2 = SELL) | rows u64 | cols u64
//! CSR:  nptr u64 | ptr [u32] | nnz u64 | col_idx [u32] | values [f64]
//! SELL: slice_height u64 | nptr u64 | ptr [u32] | len u64 | col_idx [u32] | values [f64] | pad [u8]
//! ```

use std::io::{Read, Write};

use super::{CsrMatrix, SellMatrix, SparseMatrix};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SPMC";
const VERSION: u16 = 1;
const KIND_CSR: u8 = 1;
const KIND_SELL: u8 = 2;

pub fn write_cached<W: Write>(mut w: W, m: &SparseMatrix) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    match m {
        SparseMatrix::Csr(m) => {
            w.write_all(&[KIND_CSR])?;
            put_u64(&mut w, m.rows as u64)?;
            put_u64(&mut w, m.cols as u64)?;
            put_u32s(&mut w, &m.row_ptr)?;
            put_u32s(&mut w, &m.col_idx)?;
            for v in &m.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        SparseMatrix::Sell(m) => {
            w.write_all(&[KIND_SELL])?;
            put_u64(&mut w, m.rows as u64)?;
            put_u64(&mut w, m.cols as u64)?;
            put_u64(&mut w, m.slice_height as u64)?;
            put_u32s(&mut w, &m.slice_ptr)?;
            put_u32s(&mut w, &m.col_idx)?;
            for v in &m.values {
                w.write_all(&v.to_le_bytes())?;
            }
            let pad: Vec<u8> = m.pad.iter().map(|&p| p as u8).collect();
            w.write_all(&pad)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cached<R: Read>(mut r: R) -> Result<SparseMatrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver)?;
    if u16::from_le_bytes(ver) != VERSION {
        return Err(Error::Cache(format!(
            "unsupported version {}",
            u16::from_le_bytes(ver)
        )));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let rows = get_u64(&mut r)? as usize;
    let cols = get_u64(&mut r)? as usize;
    let m = match kind[0] {
        KIND_CSR => {
            let row_ptr = get_u32s(&mut r)?;
            let col_idx = get_u32s(&mut r)?;
            let values = get_f64s(&mut r, col_idx.len())?;
            let m = CsrMatrix {
                rows,
                cols,
                row_ptr,
                col_idx,
                values,
            };
            m.validate()?;
            SparseMatrix::Csr(m)
        }
        KIND_SELL => {
            let slice_height = get_u64(&mut r)? as usize;
            let slice_ptr = get_u32s(&mut r)?;
            let col_idx = get_u32s(&mut r)?;
            let values = get_f64s(&mut r, col_idx.len())?;
            let mut pad = vec![0u8; col_idx.len()];
            r.read_exact(&mut pad)?;
            if slice_ptr.is_empty() {
                return Err(Error::Cache("empty slice pointer array".into()));
            }
            let m = SellMatrix {
                rows,
                cols,
                slice_height,
                slice_ptr,
                col_idx,
                values,
                pad: pad.into_iter().map(|b| b != 0).collect(),
            };
            m.validate()?;
            SparseMatrix::Sell(m)
        }
        k => return Err(Error::Cache(format!("unknown matrix kind {k}"))),
    };
    Ok(m)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u32s<W: Write>(w: &mut W, vs: &[u32]) -> Result<()> {
    put_u64(w, vs.len() as u64)?;
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_u32s<R: Read>(r: &mut R) -> Result<Vec<u32>> {
    let n = get_u64(r)? as usize;
    let mut buf = vec![0u8; n.checked_mul(4).ok_or_else(|| Error::Cache("length overflow".into()))?];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{coo_to_csr, csr_to_sell, gen_stencil27};

    #[test]
    fn round_trip_both_layouts() {
        let csr = coo_to_csr(&gen_stencil27(3, 2, 2).unwrap());
        let sell = csr_to_sell(&csr, 4).unwrap();
        for m in [SparseMatrix::Csr(csr), SparseMatrix::Sell(sell)] {
            let mut buf = Vec::new();
            write_cached(&mut buf, &m).unwrap();
            assert_eq!(read_cached(buf.as_slice()).unwrap(), m);
        }
    }

    #[test]
    fn rejects_corruption() {
        let csr = coo_to_csr(&gen_stencil27(2, 2, 1).unwrap());
        let mut buf = Vec::new();
        write_cached(&mut buf, &SparseMatrix::Csr(csr)).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_cached(bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_cached(bad.as_slice()).is_err());
        assert!(read_cached(&buf[..buf.len() - 3]).is_err());
    }
}
