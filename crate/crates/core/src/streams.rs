//! Translation of a tiled SpMV dataflow into the request streams seen by
//! memory: contiguous bursts for pointers and nonzeros and one indirect burst
//! per tile that gathers the source vector through the column indices.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, INDEX_BYTES, VALUE_BYTES};

pub const BLOCK_BYTES: u64 = 64;
const REGION_ALIGN: u64 = 4096;
const FIRST_REGION: u64 = 0x10_0000;

/// Byte placement of the SpMV arrays in DRAM. Regions are disjoint and
/// start on block boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressMap {
    pub ptr_base: u64,
    pub values_base: u64,
    pub index_base: u64,
    pub x_base: u64,
    pub y_base: u64,
    pub ptr_bytes: u64,
    pub values_bytes: u64,
    pub index_bytes: u64,
    pub x_bytes: u64,
    pub y_bytes: u64,
}

impl AddressMap {
    /// Lays the arrays of `m` out back to back.
    pub fn for_matrix(m: &SparseMatrix) -> AddressMap {
        let ptr_bytes = m.pointers().len() as u64 * INDEX_BYTES;
        let values_bytes = m.values().len() as u64 * VALUE_BYTES;
        let index_bytes = m.col_idx().len() as u64 * INDEX_BYTES;
        let x_bytes = m.cols() as u64 * VALUE_BYTES;
        let y_bytes = m.rows() as u64 * VALUE_BYTES;
        let mut next = FIRST_REGION;
        let mut place = |len: u64| {
            let at = next;
            next = (at + len.max(1)).next_multiple_of(REGION_ALIGN);
            at
        };
        AddressMap {
            ptr_base: place(ptr_bytes),
            values_base: place(values_bytes),
            index_base: place(index_bytes),
            x_base: place(x_bytes),
            y_base: place(y_bytes),
            ptr_bytes,
            values_bytes,
            index_bytes,
            x_bytes,
            y_bytes,
        }
    }

    fn regions(&self) -> [(u64, u64); 5] {
        [
            (self.ptr_base, self.ptr_bytes),
            (self.values_base, self.values_bytes),
            (self.index_base, self.index_bytes),
            (self.x_base, self.x_bytes),
            (self.y_base, self.y_bytes),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let mut rs = self.regions();
        if rs.iter().any(|r| r.0 % BLOCK_BYTES != 0) {
            return Err(Error::Config("address map region not block aligned".into()));
        }
        rs.sort();
        if rs.windows(2).any(|w| w[0].0 + w[0].1 > w[1].0) {
            return Err(Error::Config("address map regions overlap".into()));
        }
        Ok(())
    }

    /// Checks that the regions are large enough for `m`.
    pub fn covers(&self, m: &SparseMatrix) -> Result<()> {
        let need = AddressMap::for_matrix(m);
        if self.ptr_bytes < need.ptr_bytes
            || self.values_bytes < need.values_bytes
            || self.index_bytes < need.index_bytes
            || self.x_bytes < need.x_bytes
            || self.y_bytes < need.y_bytes
        {
            return Err(Error::Config("address map too small for matrix".into()));
        }
        self.validate()
    }

    /// Initial DRAM contents: pointers, nonzeros, indices and the source vector.
    pub fn memory_image(&self, m: &SparseMatrix, x: &[f64]) -> Vec<(u64, Vec<u8>)> {
        let u32s = |v: &[u32]| v.iter().flat_map(|e| e.to_le_bytes()).collect::<Vec<u8>>();
        let f64s = |v: &[f64]| v.iter().flat_map(|e| e.to_le_bytes()).collect::<Vec<u8>>();
        vec![
            (self.ptr_base, u32s(m.pointers())),
            (self.values_base, f64s(m.values())),
            (self.index_base, u32s(m.col_idx())),
            (self.x_base, f64s(x)),
        ]
        .into_iter()
        .filter(|(_, b)| !b.is_empty())
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContiguousBurst {
    pub base: u64,
    pub length_bytes: u64,
}

impl ContiguousBurst {
    /// Block-aligned addresses covering the burst.
    pub fn blocks(&self) -> impl Iterator<Item = u64> {
        let first = self.base / BLOCK_BYTES;
        let last = (self.base + self.length_bytes - 1) / BLOCK_BYTES;
        (first..=last).map(|b| b * BLOCK_BYTES)
    }
}

/// Gather `length` elements of the vector at `elem_base` through the index
/// array at `index_base`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndirectBurst {
    pub index_base: u64,
    pub elem_base: u64,
    pub length: usize,
    pub index_width: u64,
    pub elem_width: u64,
}

impl IndirectBurst {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Config("indirect burst of length zero".into()));
        }
        for w in [self.index_width, self.elem_width] {
            if w != 4 && w != 8 {
                return Err(Error::Config(format!("unsupported width {w}")));
            }
        }
        Ok(())
    }

    pub fn index_bytes(&self) -> u64 {
        self.length as u64 * self.index_width
    }
}

/// One double-buffered unit of work.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    /// Matrix rows whose results this tile produces.
    pub rows: Range<usize>,
    /// Row (CSR) or slice (SELL) range.
    pub groups: Range<usize>,
    /// Range of the packed nonzero stream, padding included.
    pub packed: Range<usize>,
    pub pointers: ContiguousBurst,
    pub values: Option<ContiguousBurst>,
    pub gather: Option<IndirectBurst>,
}

impl Tile {
    pub fn result_bytes(&self) -> u64 {
        self.rows.len() as u64 * VALUE_BYTES
    }

    pub fn packed_len(&self) -> usize {
        self.packed.len()
    }

    /// Slices for SELL; for CSR, rows grouped in `slice_height` chunks.
    pub fn slice_count(&self, m: &SparseMatrix) -> usize {
        match m {
            SparseMatrix::Sell(_) => self.groups.len(),
            SparseMatrix::Csr(_) => self.rows.len().div_ceil(crate::sparse::DEFAULT_SLICE_HEIGHT),
        }
    }
}

/// Splits the SpMV of `m` into tiles of at most `tile_nnz` packed entries,
/// cut on row (CSR) or slice (SELL) boundaries.
pub fn spmv_streams(m: &SparseMatrix, map: &AddressMap, tile_nnz: usize) -> Result<Vec<Tile>> {
    if tile_nnz == 0 {
        return Err(Error::Config("tile size must be at least one entry".into()));
    }
    map.covers(m)?;
    let ptr = m.pointers();
    let groups = ptr.len() - 1;
    let rows_of = |g: Range<usize>| -> Range<usize> {
        match m {
            SparseMatrix::Csr(_) => g,
            SparseMatrix::Sell(s) => {
                let start = (g.start * s.slice_height).min(s.rows);
                start..(g.end * s.slice_height).min(s.rows)
            }
        }
    };

    let mut tiles = Vec::new();
    let mut start = 0usize;
    while start < groups {
        let mut end = start;
        while end < groups {
            let len = (ptr[end + 1] - ptr[start]) as usize;
            if len > tile_nnz {
                break;
            }
            end += 1;
        }
        if end == start {
            let what = match m {
                SparseMatrix::Csr(_) => "row",
                SparseMatrix::Sell(_) => "slice",
            };
            return Err(Error::Config(format!(
                "{what} {start} holds {} entries, more than the tile size {tile_nnz}",
                ptr[start + 1] - ptr[start]
            )));
        }
        let packed = ptr[start] as usize..ptr[end] as usize;
        // the leading pointer belongs to the first tile only
        let first_ptr = if start == 0 { 0 } else { start + 1 };
        let pointers = ContiguousBurst {
            base: map.ptr_base + first_ptr as u64 * INDEX_BYTES,
            length_bytes: (end + 1 - first_ptr) as u64 * INDEX_BYTES,
        };
        let values = (!packed.is_empty()).then(|| ContiguousBurst {
            base: map.values_base + packed.start as u64 * VALUE_BYTES,
            length_bytes: packed.len() as u64 * VALUE_BYTES,
        });
        let gather = (!packed.is_empty()).then(|| IndirectBurst {
            index_base: map.index_base + packed.start as u64 * INDEX_BYTES,
            elem_base: map.x_base,
            length: packed.len(),
            index_width: INDEX_BYTES,
            elem_width: VALUE_BYTES,
        });
        tiles.push(Tile {
            rows: rows_of(start..end),
            groups: start..end,
            packed,
            pointers,
            values,
            gather,
        });
        start = end;
    }
    Ok(tiles)
}

/// Functional reference for a gather: `out[k] = x[idx[k]]`.
pub fn gather_oracle(x: &[f64], idx: &[u32]) -> Result<Vec<f64>> {
    idx.iter()
        .map(|&i| {
            x.get(i as usize).copied().ok_or(Error::GatherOutOfRange {
                index: i,
                len: x.len(),
            })
        })
        .collect()
}
