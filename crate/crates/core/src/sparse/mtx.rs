use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::CooMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<CooMatrix> {
    let f = File::open(path.as_ref())?;
    parse_matrix_market(BufReader::new(f))
}

/// Reads a Matrix Market coordinate file. Symmetric inputs are expanded to
/// full storage, pattern entries become 1.0, duplicates are summed.
pub fn parse_matrix_market<R: BufRead>(reader: R) -> Result<CooMatrix> {
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (lineno, header) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => return Err(Error::parse(1, "empty input")),
    };
    let tokens: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(Error::parse(lineno, "malformed Matrix Market header"));
    }
    if tokens[2] != "coordinate" {
        return Err(Error::parse(
            lineno,
            format!("unsupported format '{}', only coordinate", tokens[2]),
        ));
    }
    let field = match tokens[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(Error::parse(lineno, format!("unsupported field '{other}'"))),
    };
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => {
            return Err(Error::parse(
                lineno,
                format!("unsupported symmetry '{other}'"),
            ))
        }
    };

    let mut size: Option<(usize, usize, usize)> = None;
    let mut coo = CooMatrix::new(0, 0);
    let mut seen = 0usize;

    for (lineno, line) in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let mut parts = t.split_whitespace();
        let Some((rows, cols, nnz)) = size else {
            let nums: Vec<usize> = parts
                .map(|p| p.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(lineno, "malformed size line"))?;
            if nums.len() != 3 {
                return Err(Error::parse(lineno, "size line needs rows, cols, nnz"));
            }
            if nums[0] > u32::MAX as usize || nums[1] > u32::MAX as usize {
                return Err(Error::parse(lineno, "dimensions exceed 32-bit indices"));
            }
            size = Some((nums[0], nums[1], nums[2]));
            coo = CooMatrix::new(nums[0], nums[1]);
            coo.entries.reserve(if symmetric { 2 * nums[2] } else { nums[2] });
            continue;
        };

        if seen == nnz {
            return Err(Error::parse(lineno, "more entries than declared"));
        }
        let mut index = |what: &str, bound: usize| -> Result<u32> {
            let v: usize = parts
                .next()
                .ok_or_else(|| Error::parse(lineno, format!("missing {what} index")))?
                .parse()
                .map_err(|_| Error::parse(lineno, format!("malformed {what} index")))?;
            if v == 0 || v > bound {
                return Err(Error::parse(
                    lineno,
                    format!("{what} index {v} outside 1..={bound}"),
                ));
            }
            Ok((v - 1) as u32)
        };
        let r = index("row", rows)?;
        let c = index("column", cols)?;
        let v = match field {
            Field::Pattern => 1.0,
            Field::Real | Field::Integer => parts
                .next()
                .ok_or_else(|| Error::parse(lineno, "missing value"))?
                .parse::<f64>()
                .map_err(|_| Error::parse(lineno, "malformed value"))?,
        };
        coo.entries.push((r, c, v));
        if symmetric && r != c {
            coo.entries.push((c, r, v));
        }
        seen += 1;
    }

    match size {
        None => Err(Error::parse(0, "missing size line")),
        Some((_, _, nnz)) if seen < nnz => Err(Error::parse(
            0,
            format!("declared {nnz} entries, found {seen}"),
        )),
        Some(_) => {
            coo.canonicalize();
            Ok(coo)
        }
    }
}

/// Writes `m` as a general real coordinate file.
pub fn write_matrix_market<W: Write>(mut w: W, m: &CooMatrix) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.rows, m.cols, m.entries.len())?;
    for &(r, c, v) in &m.entries {
        writeln!(w, "{} {} {v}", r + 1, c + 1)?;
    }
    w.flush()?;
    Ok(())
}
