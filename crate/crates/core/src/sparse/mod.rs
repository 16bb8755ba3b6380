//! Sparse matrix storage formats used by the SpMV workloads.
//!
//! Indices are 32 bits wide and values 64 bits wide throughout, which is what
//! the simulated hardware streams from memory. [`CooMatrix`] is the ingestion
//! form, [`CsrMatrix`] and [`SellMatrix`] are the two layouts that get placed
//! in DRAM.

mod cache;
mod mtx;
mod stencil;

pub use cache::{read_cached, write_cached};
pub use mtx::{parse_matrix_market, read_matrix_market, write_matrix_market};
pub use stencil::gen_stencil27;

use crate::error::{Error, Result};

/// Rows per slice used for SELL unless configured otherwise.
pub const DEFAULT_SLICE_HEIGHT: usize = 32;

/// Bytes per stored index.
pub const INDEX_BYTES: u64 = 4;
/// Bytes per stored value.
pub const VALUE_BYTES: u64 = 8;

/// Coordinate-list matrix. After canonicalization entries are sorted by
/// `(row, col)` with no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl CooMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Sorts entries by `(row, col)` and sums duplicates.
    pub fn canonicalize(&mut self) {
        self.entries
            .sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        self.entries = merged;
    }

    pub fn validate(&self) -> Result<()> {
        for &(r, c, _) in &self.entries {
            if r as usize >= self.rows || c as usize >= self.cols {
                return Err(Error::Matrix(format!(
                    "entry ({r}, {c}) outside {}x{}",
                    self.rows, self.cols
                )));
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for &(r, c, v) in &self.entries {
            d[r as usize][c as usize] += v;
        }
        d
    }

    pub fn transpose(&self) -> CooMatrix {
        let mut t = CooMatrix {
            rows: self.cols,
            cols: self.rows,
            entries: self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect(),
        };
        t.canonicalize();
        t
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<u32>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_len(&self, row: usize) -> usize {
        (self.row_ptr[row + 1] - self.row_ptr[row]) as usize
    }

    pub fn row(&self, row: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[row] as usize, self.row_ptr[row + 1] as usize);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    /// Checks every structural invariant of the format.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Matrix(m));
        if self.row_ptr.len() != self.rows + 1 {
            return bad(format!(
                "row_ptr has {} entries, expected {}",
                self.row_ptr.len(),
                self.rows + 1
            ));
        }
        if self.row_ptr[0] != 0 {
            return bad("row_ptr[0] != 0".into());
        }
        if self.col_idx.len() != self.values.len()
            || self.row_ptr[self.rows] as usize != self.col_idx.len()
        {
            return bad("row_ptr, col_idx and values disagree on nnz".into());
        }
        for r in 0..self.rows {
            if self.row_ptr[r] > self.row_ptr[r + 1] {
                return bad(format!("row_ptr decreases at row {r}"));
            }
            let (cols, _) = self.row(r);
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("columns of row {r} not strictly increasing"));
            }
            if cols.iter().any(|&c| c as usize >= self.cols) {
                return bad(format!("column index out of range in row {r}"));
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for (r, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                row[c as usize] += v;
            }
        }
        d
    }

    pub fn max_row_len(&self) -> usize {
        (0..self.rows).map(|r| self.row_len(r)).max().unwrap_or(0)
    }
}

impl From<&CooMatrix> for CsrMatrix {
    fn from(m: &CooMatrix) -> Self {
        coo_to_csr(m)
    }
}

/// Builds CSR storage from a coordinate matrix. Entries need not be sorted;
/// duplicates are summed.
pub fn coo_to_csr(m: &CooMatrix) -> CsrMatrix {
    let mut coo = m.clone();
    coo.canonicalize();
    let mut row_ptr = vec![0u32; m.rows + 1];
    for &(r, _, _) in &coo.entries {
        row_ptr[r as usize + 1] += 1;
    }
    for r in 0..m.rows {
        row_ptr[r + 1] += row_ptr[r];
    }
    CsrMatrix {
        rows: m.rows,
        cols: m.cols,
        row_ptr,
        col_idx: coo.entries.iter().map(|e| e.1).collect(),
        values: coo.entries.iter().map(|e| e.2).collect(),
    }
}

/// Sliced ELLPACK. Each slice covers `slice_height` consecutive rows (the
/// last one may cover fewer real rows) and is padded to its longest row.
/// Storage inside a slice is lane-major: entry `k` of local row `r` lives at
/// `slice_ptr[s] + k * slice_height + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SellMatrix {
    pub rows: usize,
    pub cols: usize,
    pub slice_height: usize,
    pub slice_ptr: Vec<u32>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
    pub pad: Vec<bool>,
}

impl SellMatrix {
    pub fn num_slices(&self) -> usize {
        self.slice_ptr.len() - 1
    }

    pub fn slice_width(&self, s: usize) -> usize {
        (self.slice_ptr[s + 1] - self.slice_ptr[s]) as usize / self.slice_height
    }

    /// Packed entries of slice `s`, padding included.
    pub fn slice_len(&self, s: usize) -> usize {
        (self.slice_ptr[s + 1] - self.slice_ptr[s]) as usize
    }

    pub fn packed_len(&self) -> usize {
        self.col_idx.len()
    }

    pub fn padded_count(&self) -> usize {
        self.pad.iter().filter(|&&p| p).count()
    }

    pub fn nnz(&self) -> usize {
        self.packed_len() - self.padded_count()
    }

    /// Rows actually present in slice `s`.
    pub fn slice_rows(&self, s: usize) -> std::ops::Range<usize> {
        let start = s * self.slice_height;
        start..(start + self.slice_height).min(self.rows)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Matrix(m));
        if self.slice_height == 0 {
            return bad("slice height is zero".into());
        }
        if self.num_slices() != self.rows.div_ceil(self.slice_height) {
            return bad("slice count does not match rows".into());
        }
        if self.slice_ptr[0] != 0 || *self.slice_ptr.last().unwrap() as usize != self.col_idx.len()
        {
            return bad("slice_ptr does not span the packed arrays".into());
        }
        if self.values.len() != self.col_idx.len() || self.pad.len() != self.col_idx.len() {
            return bad("packed arrays differ in length".into());
        }
        for s in 0..self.num_slices() {
            if self.slice_ptr[s] > self.slice_ptr[s + 1] {
                return bad(format!("slice_ptr decreases at slice {s}"));
            }
            if self.slice_len(s) % self.slice_height != 0 {
                return bad(format!("slice {s} is not a whole number of lanes"));
            }
        }
        for (i, (&c, &p)) in self.col_idx.iter().zip(&self.pad).enumerate() {
            if self.cols > 0 && c as usize >= self.cols {
                return bad(format!("packed index {i} out of range"));
            }
            if p && self.values[i] != 0.0 {
                return bad(format!("padding entry {i} carries a nonzero value"));
            }
        }
        Ok(())
    }

    /// Dense expansion with padding dropped.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.cols]; self.rows];
        for s in 0..self.num_slices() {
            let base = self.slice_ptr[s] as usize;
            for k in 0..self.slice_width(s) {
                for (local, row) in self.slice_rows(s).enumerate() {
                    let at = base + k * self.slice_height + local;
                    if !self.pad[at] {
                        d[row][self.col_idx[at] as usize] += self.values[at];
                    }
                }
            }
        }
        d
    }
}

/// Converts CSR to sliced ELLPACK without reordering rows.
///
/// Padding entries carry value 0 and repeat the column of the row's last real
/// entry (0 for empty rows and for lanes past the last matrix row), so padded
/// gathers stay inside the source vector.
pub fn csr_to_sell(m: &CsrMatrix, slice_height: usize) -> Result<SellMatrix> {
    if slice_height == 0 {
        return Err(Error::Config("slice height must be at least 1".into()));
    }
    let slices = m.rows.div_ceil(slice_height);
    let mut slice_ptr = Vec::with_capacity(slices + 1);
    slice_ptr.push(0u32);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    let mut pad = Vec::new();
    for s in 0..slices {
        let rows = s * slice_height..((s + 1) * slice_height).min(m.rows);
        let width = rows.clone().map(|r| m.row_len(r)).max().unwrap_or(0);
        let base = col_idx.len();
        let len = width * slice_height;
        col_idx.resize(base + len, 0);
        values.resize(base + len, 0.0);
        pad.resize(base + len, true);
        for local in 0..slice_height {
            let row = s * slice_height + local;
            let (cols, vals) = if row < m.rows {
                m.row(row)
            } else {
                (&[][..], &[][..])
            };
            let filler = cols.last().copied().unwrap_or(0);
            for k in 0..width {
                let at = base + k * slice_height + local;
                if k < cols.len() {
                    col_idx[at] = cols[k];
                    values[at] = vals[k];
                    pad[at] = false;
                } else {
                    col_idx[at] = filler;
                }
            }
        }
        let end = u32::try_from(col_idx.len())
            .map_err(|_| Error::Matrix("packed SELL size exceeds 32-bit offsets".into()))?;
        slice_ptr.push(end);
    }
    Ok(SellMatrix {
        rows: m.rows,
        cols: m.cols,
        slice_height,
        slice_ptr,
        col_idx,
        values,
        pad,
    })
}

/// Either of the two layouts the workload can stream.
#[derive(Debug, Clone, PartialEq)]
pub enum SparseMatrix {
    Csr(CsrMatrix),
    Sell(SellMatrix),
}

impl SparseMatrix {
    pub fn rows(&self) -> usize {
        match self {
            SparseMatrix::Csr(m) => m.rows,
            SparseMatrix::Sell(m) => m.rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            SparseMatrix::Csr(m) => m.cols,
            SparseMatrix::Sell(m) => m.cols,
        }
    }

    /// Column indices in streaming order (packed order for SELL).
    pub fn col_idx(&self) -> &[u32] {
        match self {
            SparseMatrix::Csr(m) => &m.col_idx,
            SparseMatrix::Sell(m) => &m.col_idx,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            SparseMatrix::Csr(m) => &m.values,
            SparseMatrix::Sell(m) => &m.values,
        }
    }

    /// Row pointers for CSR, slice pointers for SELL.
    pub fn pointers(&self) -> &[u32] {
        match self {
            SparseMatrix::Csr(m) => &m.row_ptr,
            SparseMatrix::Sell(m) => &m.slice_ptr,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        match self {
            SparseMatrix::Csr(m) => m.to_dense(),
            SparseMatrix::Sell(m) => m.to_dense(),
        }
    }

    pub fn format_name(&self) -> &'static str {
        match self {
            SparseMatrix::Csr(_) => "csr",
            SparseMatrix::Sell(_) => "sell",
        }
    }
}

/// Dense reference product, used as the functional oracle for SpMV runs.
pub fn dense_spmv(dense: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    dense
        .iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity(n: usize) -> CooMatrix {
        CooMatrix {
            rows: n,
            cols: n,
            entries: (0..n as u32).map(|i| (i, i, 1.0)).collect(),
        }
    }

    #[test]
    fn csr_of_identity() {
        let csr = coo_to_csr(&identity(3));
        assert_eq!(csr.row_ptr, vec![0, 1, 2, 3]);
        assert_eq!(csr.col_idx, vec![0, 1, 2]);
        assert_eq!(csr.values, vec![1.0, 1.0, 1.0]);
        csr.validate().unwrap();
    }

    #[test]
    fn csr_of_empty() {
        let csr = coo_to_csr(&CooMatrix::new(2, 2));
        assert_eq!(csr.row_ptr, vec![0, 0, 0]);
        assert!(csr.col_idx.is_empty());
    }

    #[test]
    fn csr_sorts_entries() {
        let (a, b, c) = (7.0, 8.0, 9.0);
        let coo = CooMatrix {
            rows: 2,
            cols: 2,
            entries: vec![(0, 1, a), (0, 0, b), (1, 0, c)],
        };
        let csr = coo_to_csr(&coo);
        assert_eq!(csr.row_ptr, vec![0, 2, 3]);
        assert_eq!(csr.col_idx, vec![0, 1, 0]);
        assert_eq!(csr.values, vec![b, a, c]);
    }

    #[test]
    fn sell_identity_height_two() {
        let sell = csr_to_sell(&coo_to_csr(&identity(3)), 2).unwrap();
        assert_eq!(sell.num_slices(), 2);
        assert_eq!(sell.slice_ptr, vec![0, 2, 4]);
        assert_eq!(sell.slice_width(0), 1);
        assert_eq!(sell.slice_width(1), 1);
        assert_eq!(sell.col_idx, vec![0, 1, 2, 0]);
        assert_eq!(sell.pad, vec![false, false, false, true]);
        assert_eq!(sell.values[3], 0.0);
        sell.validate().unwrap();
    }

    #[test]
    fn sell_pads_short_rows_with_last_column() {
        // row 0: cols 0,2,3; row 1: col 1
        let coo = CooMatrix {
            rows: 2,
            cols: 4,
            entries: vec![(0, 0, 1.0), (0, 2, 2.0), (0, 3, 3.0), (1, 1, 4.0)],
        };
        let sell = csr_to_sell(&coo_to_csr(&coo), 2).unwrap();
        assert_eq!(sell.slice_width(0), 3);
        // lane-major: [r0k0, r1k0, r0k1, r1k1, r0k2, r1k2]
        assert_eq!(sell.col_idx, vec![0, 1, 2, 1, 3, 1]);
        assert_eq!(sell.pad, vec![false, false, false, true, false, true]);
        assert_eq!(sell.padded_count(), 2);
    }

    #[test]
    fn sell_height_one_has_no_padding() {
        let coo = CooMatrix {
            rows: 3,
            cols: 3,
            entries: vec![(0, 0, 1.0), (0, 1, 1.0), (2, 2, 1.0)],
        };
        let sell = csr_to_sell(&coo_to_csr(&coo), 1).unwrap();
        assert_eq!(sell.padded_count(), 0);
        assert_eq!(sell.num_slices(), 3);
    }

    #[test]
    fn sell_rejects_zero_height() {
        assert!(csr_to_sell(&coo_to_csr(&identity(2)), 0).is_err());
    }

    fn arb_coo() -> impl Strategy<Value = CooMatrix> {
        (1usize..40, 1usize..40).prop_flat_map(|(rows, cols)| {
            prop::collection::vec(
                (0..rows as u32, 0..cols as u32, -8i32..8),
                0..120,
            )
            .prop_map(move |es| CooMatrix {
                rows,
                cols,
                entries: es.into_iter().map(|(r, c, v)| (r, c, v as f64)).collect(),
            })
        })
    }

    proptest! {
        #[test]
        fn csr_round_trip(coo in arb_coo()) {
            let csr = coo_to_csr(&coo);
            csr.validate().unwrap();
            prop_assert_eq!(csr.to_dense(), coo.to_dense());
        }

        #[test]
        fn sell_is_lossless(coo in arb_coo(), h in prop::sample::select(vec![1usize, 2, 32])) {
            let csr = coo_to_csr(&coo);
            let sell = csr_to_sell(&csr, h).unwrap();
            sell.validate().unwrap();
            prop_assert_eq!(sell.to_dense(), csr.to_dense());
            let bound: usize = (0..sell.num_slices())
                .map(|s| h * sell.slice_rows(s).map(|r| csr.row_len(r)).max().unwrap_or(0))
                .sum();
            prop_assert_eq!(sell.padded_count(), bound - csr.nnz());
        }
    }
}
