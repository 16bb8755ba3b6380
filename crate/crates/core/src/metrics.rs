//! Metric formulas and the CSV result schema.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dram::{Category, DramCounters, BLOCK};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::streams::AddressMap;

/// Clock of the modeled system, in GHz.
pub const CLOCK_GHZ: f64 = 1.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLedger {
    pub cycles: u64,
    /// Cycles attributed to index fetch and gather.
    pub indirect_cycles: u64,
    pub bytes: [u64; 4],
    /// Channel total, accumulated independently of `bytes`.
    pub total_bytes: u64,
    pub narrow_served: u64,
    pub wide_elem_accesses: u64,
    pub effective_indirect_bytes: u64,
    pub ideal_bytes: u64,
    pub peak_bytes_per_cycle: f64,
}

impl MetricsLedger {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cycles: u64,
        indirect_cycles: u64,
        counters: &DramCounters,
        narrow_served: u64,
        elem_width: u64,
        ideal_bytes: u64,
        peak_bytes_per_cycle: f64,
    ) -> Self {
        Self {
            cycles,
            indirect_cycles,
            bytes: counters.bytes,
            total_bytes: counters.total_bytes,
            narrow_served,
            wide_elem_accesses: counters.requests_of(Category::Element),
            effective_indirect_bytes: narrow_served * elem_width,
            ideal_bytes,
            peak_bytes_per_cycle,
        }
    }

    pub fn bytes_of(&self, c: Category) -> u64 {
        self.bytes[c.slot()]
    }

    /// Per-category bytes must add up to the channel total.
    pub fn check_closure(&self) -> Result<()> {
        let sum: u64 = self.bytes.iter().sum();
        if sum != self.total_bytes {
            return Err(Error::Config(format!(
                "ledger does not close: categories sum to {sum}, channel moved {}",
                self.total_bytes
            )));
        }
        Ok(())
    }

    pub fn coalesce_rate(&self) -> Option<f64> {
        coalesce_rate(self.effective_indirect_bytes, self.wide_elem_accesses)
    }

    pub fn indirect_gbps(&self) -> f64 {
        indirect_bandwidth(self.effective_indirect_bytes, self.indirect_cycles)
    }

    pub fn utilization(&self) -> f64 {
        utilization_and_traffic(self).0
    }

    pub fn traffic_ratio(&self) -> f64 {
        utilization_and_traffic(self).1
    }
}

/// Effective bytes over bytes fetched for elements. Absent without any
/// element access.
pub fn coalesce_rate(effective_bytes: u64, wide_accesses: u64) -> Option<f64> {
    (wide_accesses > 0).then(|| effective_bytes as f64 / (wide_accesses * BLOCK as u64) as f64)
}

/// GB/s at the fixed clock.
pub fn indirect_bandwidth(effective_bytes: u64, cycles: u64) -> f64 {
    if cycles == 0 {
        return 0.0;
    }
    effective_bytes as f64 / cycles as f64 * CLOCK_GHZ
}

/// `(channel utilization, off-chip bytes over compulsory bytes)`.
pub fn utilization_and_traffic(l: &MetricsLedger) -> (f64, f64) {
    let util = if l.cycles == 0 || l.peak_bytes_per_cycle == 0.0 {
        0.0
    } else {
        l.total_bytes as f64 / (l.peak_bytes_per_cycle * l.cycles as f64)
    };
    let ratio = if l.ideal_bytes == 0 {
        0.0
    } else {
        l.total_bytes as f64 / l.ideal_bytes as f64
    };
    (util, ratio)
}

fn range_blocks(base: u64, len: u64) -> u64 {
    if len == 0 {
        return 0;
    }
    let b = BLOCK as u64;
    (base + len - 1) / b - base / b + 1
}

/// Distinct blocks of `x` touched by a gather through `idx`.
pub fn distinct_gather_blocks(x_base: u64, elem_width: u64, idx: &[u32]) -> u64 {
    let b = BLOCK as u64;
    idx.iter()
        .map(|&i| (x_base + i as u64 * elem_width) / b)
        .collect::<HashSet<_>>()
        .len() as u64
}

/// Compulsory bytes of an SpMV pass: every array once, each gathered block
/// once.
pub fn ideal_spmv_bytes(m: &SparseMatrix, map: &AddressMap) -> u64 {
    let contiguous = range_blocks(map.ptr_base, map.ptr_bytes)
        + range_blocks(map.values_base, map.values_bytes)
        + range_blocks(map.index_base, map.index_bytes)
        + range_blocks(map.y_base, map.y_bytes);
    (contiguous + distinct_gather_blocks(map.x_base, 8, m.col_idx())) * BLOCK as u64
}

/// Compulsory bytes of a bare gather stream: the index array and each
/// gathered block once.
pub fn ideal_gather_bytes(m: &SparseMatrix, map: &AddressMap) -> u64 {
    (range_blocks(map.index_base, map.index_bytes) + distinct_gather_blocks(map.x_base, 8, m.col_idx()))
        * BLOCK as u64
}

/// Column order of the result CSV.
pub const CSV_COLUMNS: [&str; 17] = [
    "run_id",
    "matrix",
    "format",
    "variant",
    "window",
    "cycles",
    "bytes_index",
    "bytes_element",
    "bytes_contig",
    "bytes_result",
    "narrow_served",
    "wide_elem_accesses",
    "indirect_gbps",
    "coalesce_rate",
    "utilization",
    "traffic_ratio",
    "error",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub run_id: usize,
    pub matrix: String,
    pub format: String,
    pub variant: String,
    pub window: Option<usize>,
    pub ledger: MetricsLedger,
}

/// One CSV row, as written and read back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: usize,
    pub matrix: String,
    pub format: String,
    pub variant: String,
    pub window: Option<usize>,
    pub cycles: Option<u64>,
    pub bytes_index: Option<u64>,
    pub bytes_element: Option<u64>,
    pub bytes_contig: Option<u64>,
    pub bytes_result: Option<u64>,
    pub narrow_served: Option<u64>,
    pub wide_elem_accesses: Option<u64>,
    pub indirect_gbps: Option<f64>,
    pub coalesce_rate: Option<f64>,
    pub utilization: Option<f64>,
    pub traffic_ratio: Option<f64>,
    pub error: Option<String>,
}

impl CsvRow {
    pub fn from_report(r: &RunReport) -> Self {
        let l = &r.ledger;
        let (util, ratio) = utilization_and_traffic(l);
        Self {
            run_id: r.run_id,
            matrix: r.matrix.clone(),
            format: r.format.clone(),
            variant: r.variant.clone(),
            window: r.window,
            cycles: Some(l.cycles),
            bytes_index: Some(l.bytes_of(Category::Index)),
            bytes_element: Some(l.bytes_of(Category::Element)),
            bytes_contig: Some(l.bytes_of(Category::Contig)),
            bytes_result: Some(l.bytes_of(Category::Result)),
            narrow_served: Some(l.narrow_served),
            wide_elem_accesses: Some(l.wide_elem_accesses),
            indirect_gbps: Some(round6(l.indirect_gbps())),
            coalesce_rate: l.coalesce_rate().map(round6),
            utilization: Some(round6(util)),
            traffic_ratio: Some(round6(ratio)),
            error: None,
        }
    }

    pub fn failed(
        run_id: usize,
        matrix: &str,
        format: &str,
        variant: &str,
        window: Option<usize>,
        err: &Error,
    ) -> Self {
        Self {
            run_id,
            matrix: matrix.to_string(),
            format: format.to_string(),
            variant: variant.to_string(),
            window,
            cycles: None,
            bytes_index: None,
            bytes_element: None,
            bytes_contig: None,
            bytes_result: None,
            narrow_served: None,
            wide_elem_accesses: None,
            indirect_gbps: None,
            coalesce_rate: None,
            utilization: None,
            traffic_ratio: None,
            error: Some(err.to_string()),
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    pub fn total_bytes(&self) -> Option<u64> {
        Some(self.bytes_index? + self.bytes_element? + self.bytes_contig? + self.bytes_result?)
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

pub fn write_csv<W: Write>(w: W, rows: &[CsvRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<CsvRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let want: Vec<&str> = CSV_COLUMNS.to_vec();
    let got: Vec<&str> = headers.iter().collect();
    if got != want {
        return Err(Error::parse(1, format!("unexpected columns: {}", got.join(","))));
    }
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Emit {
    Summary,
    Breakdown,
}

impl std::str::FromStr for Emit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summary" => Ok(Emit::Summary),
            "breakdown" => Ok(Emit::Breakdown),
            _ => Err(Error::Config(format!("unknown report kind '{s}'"))),
        }
    }
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map(|v| format!("{v:.prec$}")).unwrap_or_else(|| "-".into())
}

/// Text tables over a result set.
///
/// `summary` lists bandwidth, coalesce rate and utilization per run, with
/// the speedup of each run over the slowest run on the same matrix.
/// `breakdown` splits channel bandwidth into element fetch, index fetch,
/// other traffic and unused capacity.
pub fn render_report(rows: &[CsvRow], emit: Emit, peak_bytes_per_cycle: f64) -> String {
    let mut s = String::new();
    match emit {
        Emit::Summary => {
            s.push_str(&format!(
                "{:<5} {:<24} {:<5} {:<8} {:>6} {:>12} {:>9} {:>9} {:>7} {:>8}\n",
                "id", "matrix", "fmt", "variant", "window", "cycles", "GB/s", "coalesce", "util", "speedup"
            ));
            for r in rows {
                if let Some(e) = &r.error {
                    s.push_str(&format!(
                        "{:<5} {:<24} {:<5} {:<8} error: {e}\n",
                        r.run_id, r.matrix, r.format, r.variant
                    ));
                    continue;
                }
                let slowest = rows
                    .iter()
                    .filter(|o| o.matrix == r.matrix && o.format == r.format)
                    .filter_map(|o| o.cycles)
                    .max();
                let speedup = match (slowest, r.cycles) {
                    (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
                    _ => None,
                };
                s.push_str(&format!(
                    "{:<5} {:<24} {:<5} {:<8} {:>6} {:>12} {:>9} {:>9} {:>7} {:>8}\n",
                    r.run_id,
                    r.matrix,
                    r.format,
                    r.variant,
                    r.window.map(|w| w.to_string()).unwrap_or_else(|| "-".into()),
                    r.cycles.unwrap_or(0),
                    fmt_opt(r.indirect_gbps, 2),
                    fmt_opt(r.coalesce_rate, 3),
                    fmt_opt(r.utilization, 3),
                    fmt_opt(speedup, 2),
                ));
            }
        }
        Emit::Breakdown => {
            s.push_str(&format!(
                "{:<5} {:<24} {:<8} {:>6} {:>10} {:>10} {:>10} {:>10}\n",
                "id", "matrix", "variant", "window", "elem GB/s", "index GB/s", "other GB/s", "loss GB/s"
            ));
            for r in rows.iter().filter(|r| !r.is_error()) {
                let cycles = r.cycles.unwrap_or(0).max(1) as f64;
                let gb = |b: Option<u64>| b.unwrap_or(0) as f64 / cycles * CLOCK_GHZ;
                let elem = gb(r.bytes_element);
                let index = gb(r.bytes_index);
                let other = gb(r.bytes_contig) + gb(r.bytes_result);
                let loss = (peak_bytes_per_cycle * CLOCK_GHZ - elem - index - other).max(0.0);
                s.push_str(&format!(
                    "{:<5} {:<24} {:<8} {:>6} {:>10.2} {:>10.2} {:>10.2} {:>10.2}\n",
                    r.run_id,
                    r.matrix,
                    r.variant,
                    r.window.map(|w| w.to_string()).unwrap_or_else(|| "-".into()),
                    elem,
                    index,
                    other,
                    loss
                ));
            }
        }
    }
    s
}
