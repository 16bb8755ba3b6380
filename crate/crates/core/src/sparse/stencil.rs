use super::CooMatrix;
use crate::error::{Error, Result};

/// 27-point stencil on an `nx x ny x nz` grid in the HPCG style: 26.0 on the
/// diagonal, -1.0 for each in-bounds neighbor. Grid point `(x, y, z)` maps to
/// row `x + nx * (y + ny * z)`.
pub fn gen_stencil27(nx: usize, ny: usize, nz: usize) -> Result<CooMatrix> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::Config("stencil dimensions must be at least 1".into()));
    }
    let n = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .filter(|&v| v <= u32::MAX as usize)
        .ok_or_else(|| Error::Config(format!("{nx}x{ny}x{nz} grid overflows 32-bit indices")))?;

    let mut m = CooMatrix::new(n, n);
    m.entries.reserve(27 * n);
    let span = |p: usize, len: usize| p.saturating_sub(1)..=(p + 1).min(len - 1);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let row = (x + nx * (y + ny * z)) as u32;
                for zz in span(z, nz) {
                    for yy in span(y, ny) {
                        for xx in span(x, nx) {
                            let col = (xx + nx * (yy + ny * zz)) as u32;
                            let v = if col == row { 26.0 } else { -1.0 };
                            m.entries.push((row, col, v));
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Pairwise oracle: two grid points are coupled iff their Chebyshev
    /// distance is at most one.
    fn brute_force(nx: usize, ny: usize, nz: usize) -> Vec<Vec<f64>> {
        let n = nx * ny * nz;
        let coord = |i: usize| (i % nx, (i / nx) % ny, i / (nx * ny));
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (coord(i), coord(j));
                let close = a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1 && a.2.abs_diff(b.2) <= 1;
                if close {
                    d[i][j] = if i == j { 26.0 } else { -1.0 };
                }
            }
        }
        d
    }

    #[test]
    fn single_point() {
        let m = gen_stencil27(1, 1, 1).unwrap();
        assert_eq!(m.entries, vec![(0, 0, 26.0)]);
    }

    #[test]
    fn two_points() {
        let m = gen_stencil27(2, 1, 1).unwrap();
        assert_eq!(
            m.entries,
            vec![(0, 0, 26.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 26.0)]
        );
    }

    #[test]
    fn cube_row_lengths() {
        let m = gen_stencil27(3, 3, 3).unwrap();
        let csr = super::super::coo_to_csr(&m);
        assert_eq!(csr.rows, 27);
        assert_eq!(csr.row_len(13), 27);
        for corner in [0, 2, 6, 8, 18, 20, 24, 26] {
            assert_eq!(csr.row_len(corner), 8);
        }
    }

    #[test]
    fn matches_pairwise_oracle() {
        for dims in [(3, 3, 3), (4, 2, 3), (1, 5, 2)] {
            let m = gen_stencil27(dims.0, dims.1, dims.2).unwrap();
            assert_eq!(m.to_dense(), brute_force(dims.0, dims.1, dims.2));
        }
    }

    #[test]
    fn symmetric() {
        let m = gen_stencil27(4, 3, 2).unwrap();
        assert_eq!(m.to_dense(), m.transpose().to_dense());
    }

    #[test]
    fn generated_entries_are_canonical() {
        let m = gen_stencil27(3, 4, 2).unwrap();
        let mut c = m.clone();
        c.canonicalize();
        assert_eq!(c, m);
    }

    #[test]
    fn rejects_overflow_and_zero() {
        assert!(gen_stencil27(0, 1, 1).is_err());
        assert!(gen_stencil27(1 << 12, 1 << 12, 1 << 9).is_err());
    }
}
