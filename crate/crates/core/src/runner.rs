//! Simulation configuration, single runs and sweeps.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapter::{run_indirect_stream, AdapterConfig, StreamOptions, WideEvent};
use crate::coalescer::Mode;
use crate::dram::DramConfig;
use crate::error::{Error, Result};
use crate::metrics::{ideal_gather_bytes, ideal_spmv_bytes, CsvRow, MetricsLedger, RunReport};
use crate::sparse::{
    coo_to_csr, csr_to_sell, gen_stencil27, read_cached, read_matrix_market, write_cached, SparseMatrix,
    DEFAULT_SLICE_HEIGHT, VALUE_BYTES,
};
use crate::streams::{spmv_streams, AddressMap};
use crate::system::{run_spmv, LlcConfig, SpmvOptions, SpmvSetup, SystemVariant, VpsConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csr,
    Sell,
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::Csr => "csr",
            Format::Sell => "sell",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csr" => Ok(Format::Csr),
            "sell" => Ok(Format::Sell),
            other => Err(Error::Config(format!("unknown format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mlpnc,
    Mlp,
    Seq,
    /// LLC baseline; SpMV runs only.
    Base,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Mlpnc => "mlpnc",
            Variant::Mlp => "mlp",
            Variant::Seq => "seq",
            Variant::Base => "base",
        }
    }

    pub fn uses_window(self) -> bool {
        matches!(self, Variant::Mlp | Variant::Seq)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlpnc" => Ok(Variant::Mlpnc),
            "mlp" => Ok(Variant::Mlp),
            "seq" => Ok(Variant::Seq),
            "base" => Ok(Variant::Base),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// What a run measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// The matrix's gather stream alone, fed back to back.
    Stream,
    /// Full tiled SpMV.
    Spmv,
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stream" => Ok(RunMode::Stream),
            "spmv" => Ok(RunMode::Spmv),
            other => Err(Error::Config(format!("unknown run mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunsConfig {
    /// Matrix Market paths or `stencil:NXxNYxNZ`.
    pub matrices: Vec<String>,
    pub variants: Vec<Variant>,
    pub windows: Vec<usize>,
    pub format: Format,
    pub mode: RunMode,
    pub slice_height: usize,
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for sweeps; defaults to the available parallelism.
    pub threads: Option<usize>,
}

impl Default for RunsConfig {
    fn default() -> Self {
        Self {
            matrices: Vec::new(),
            variants: vec![Variant::Mlpnc, Variant::Mlp, Variant::Seq],
            windows: vec![64, 256],
            format: Format::Sell,
            mode: RunMode::Stream,
            slice_height: DEFAULT_SLICE_HEIGHT,
            cache_dir: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub adapter: AdapterConfig,
    pub dram: DramConfig,
    pub vps: VpsConfig,
    pub llc: LlcConfig,
    pub runs: RunsConfig,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.adapter.validate()?;
        self.dram.validate()?;
        self.vps.validate()?;
        self.llc.validate()?;
        if self.runs.slice_height == 0 {
            return Err(Error::Config("slice height must be positive".into()));
        }
        Ok(())
    }

    /// Runs in config order: matrices, then variants, then windows.
    pub fn expand(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for m in &self.runs.matrices {
            for &v in &self.runs.variants {
                let windows: Vec<Option<usize>> = if v.uses_window() {
                    self.runs.windows.iter().map(|&w| Some(w)).collect()
                } else {
                    vec![None]
                };
                for window in windows {
                    out.push(RunSpec {
                        matrix: m.clone(),
                        format: self.runs.format,
                        variant: v,
                        window,
                        mode: self.runs.mode,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSpec {
    pub matrix: String,
    pub format: Format,
    pub variant: Variant,
    pub window: Option<usize>,
    pub mode: RunMode,
}

impl RunSpec {
    pub fn label(&self) -> String {
        match self.mode {
            RunMode::Stream => self.variant.name().to_string(),
            RunMode::Spmv => self
                .system_variant()
                .map(|v| v.label())
                .unwrap_or_else(|_| self.variant.name().to_string()),
        }
    }

    pub fn system_variant(&self) -> Result<SystemVariant> {
        let window = self.window.unwrap_or(256);
        Ok(match self.variant {
            Variant::Base => SystemVariant::Base,
            Variant::Mlpnc => SystemVariant::PACK0,
            Variant::Mlp => SystemVariant::Pack {
                mode: Mode::Mlp,
                window,
            },
            Variant::Seq => SystemVariant::Pack {
                mode: Mode::Seq,
                window,
            },
        })
    }

    fn coalescer_mode(&self) -> Result<Mode> {
        match self.variant {
            Variant::Mlpnc => Ok(Mode::Mlpnc),
            Variant::Mlp => Ok(Mode::Mlp),
            Variant::Seq => Ok(Mode::Seq),
            Variant::Base => Err(Error::Config("the base variant only runs in spmv mode".into())),
        }
    }
}

/// Deterministic input vector with exactly representable entries.
pub fn default_x(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 + (i % 8) as f64 * 0.25).collect()
}

fn parse_stencil(spec: &str) -> Option<Result<(usize, usize, usize)>> {
    let dims = spec.strip_prefix("stencil:")?;
    let parts: Vec<&str> = dims.split('x').collect();
    let parsed: std::result::Result<Vec<usize>, _> = parts.iter().map(|p| p.parse::<usize>()).collect();
    Some(match parsed.as_deref() {
        Ok([a]) => Ok((*a, *a, *a)),
        Ok([a, b, c]) => Ok((*a, *b, *c)),
        _ => Err(Error::Config(format!("bad stencil spec '{spec}', expected stencil:NXxNYxNZ"))),
    })
}

/// Loads `spec` in `format`, through the binary cache when a directory is
/// given.
pub fn load_matrix(spec: &str, format: Format, slice_height: usize, cache_dir: Option<&Path>) -> Result<SparseMatrix> {
    let cache_file = cache_dir.map(|d| {
        let stem: String = spec
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        d.join(format!("{stem}.{}{slice_height}.spmc", format.name()))
    });
    if let Some(f) = &cache_file {
        if cache_is_fresh(f, spec) {
            let m = read_cached(std::io::BufReader::new(std::fs::File::open(f)?))?;
            let ok = match (&m, format) {
                (SparseMatrix::Csr(_), Format::Csr) => true,
                (SparseMatrix::Sell(s), Format::Sell) => s.slice_height == slice_height,
                _ => false,
            };
            if ok {
                return Ok(m);
            }
        }
    }
    let coo = match parse_stencil(spec) {
        Some(dims) => {
            let (x, y, z) = dims?;
            gen_stencil27(x, y, z)?
        }
        None => read_matrix_market(spec).map_err(|e| match e {
            Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{spec}: {io}"))),
            e => e,
        })?,
    };
    let csr = coo_to_csr(&coo);
    let m = match format {
        Format::Csr => SparseMatrix::Csr(csr),
        Format::Sell => SparseMatrix::Sell(csr_to_sell(&csr, slice_height)?),
    };
    if let Some(f) = &cache_file {
        std::fs::create_dir_all(f.parent().expect("cache file has a directory"))?;
        write_cached(std::io::BufWriter::new(std::fs::File::create(f)?), &m)?;
    }
    Ok(m)
}

fn cache_is_fresh(cache: &Path, spec: &str) -> bool {
    let Ok(c) = std::fs::metadata(cache).and_then(|m| m.modified()) else {
        return false;
    };
    if spec.starts_with("stencil:") {
        return true;
    }
    std::fs::metadata(spec)
        .and_then(|m| m.modified())
        .map(|src| src <= c)
        .unwrap_or(false)
}

/// Result of one run plus the downstream request log when asked for.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub events: Vec<WideEvent>,
}

pub fn execute(id: usize, spec: &RunSpec, m: &SparseMatrix, cfg: &SimConfig, record_events: bool) -> Result<RunOutput> {
    let x = default_x(m.cols());
    let map = AddressMap::for_matrix(m);
    let peak = cfg.dram.peak_bytes_per_cycle();
    let (ledger, events) = match spec.mode {
        RunMode::Stream => {
            let mode = spec.coalescer_mode()?;
            let adapter = cfg.adapter.with_mode(mode, spec.window.unwrap_or(cfg.adapter.coalescer.window));
            let tiles = spmv_streams(m, &map, cfg.vps.tile_entries())?;
            let bursts: Vec<_> = tiles.iter().filter_map(|t| t.gather).collect();
            let run = run_indirect_stream(
                &bursts,
                map.memory_image(m, &x),
                &adapter,
                &cfg.dram,
                &StreamOptions { record_events },
            )?;
            let idx = m.col_idx();
            for (b, t) in tiles.iter().filter(|t| t.gather.is_some()).enumerate() {
                let got = run.elements(b);
                let ok = got.len() == t.packed.len()
                    && got
                        .iter()
                        .zip(&idx[t.packed.clone()])
                        .all(|(&g, &i)| g == x[i as usize].to_bits());
                if !ok {
                    return Err(Error::Matrix(format!("gathered data of burst {b} differs from x")));
                }
            }
            let served: u64 = bursts.iter().map(|b| b.length as u64).sum();
            let ledger = MetricsLedger::new(
                run.cycles,
                run.cycles,
                &run.counters,
                served,
                VALUE_BYTES,
                ideal_gather_bytes(m, &map),
                peak,
            );
            (ledger, run.events)
        }
        RunMode::Spmv => {
            let variant = spec.system_variant()?;
            let setup = SpmvSetup {
                vps: &cfg.vps,
                adapter: &cfg.adapter,
                dram: &cfg.dram,
                llc: &cfg.llc,
            };
            let run = run_spmv(
                variant,
                m,
                &x,
                &setup,
                &SpmvOptions {
                    repetitions: 1,
                    record_events,
                },
            )?;
            check_spmv(m, &x, &run.y)?;
            let ledger = MetricsLedger::new(
                run.cycles,
                run.indirect_cycles,
                &run.counters,
                run.narrow_served,
                VALUE_BYTES,
                ideal_spmv_bytes(m, &map),
                peak,
            );
            (ledger, run.events)
        }
    };
    ledger.check_closure()?;
    Ok(RunOutput {
        report: RunReport {
            run_id: id,
            matrix: spec.matrix.clone(),
            format: spec.format.name().to_string(),
            variant: spec.label(),
            window: spec.window,
            ledger,
        },
        events,
    })
}

/// Sparse reference product, summed in stored order.
pub fn reference_spmv(m: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.rows()];
    match m {
        SparseMatrix::Csr(c) => {
            for (r, yr) in y.iter_mut().enumerate() {
                let (cols, vals) = c.row(r);
                *yr = cols.iter().zip(vals).map(|(&j, v)| v * x[j as usize]).sum();
            }
        }
        SparseMatrix::Sell(s) => {
            for sl in 0..s.num_slices() {
                let rows = s.slice_rows(sl);
                let base = s.slice_ptr[sl] as usize;
                for k in 0..s.slice_width(sl) {
                    for lane in 0..rows.len() {
                        let p = base + k * s.slice_height + lane;
                        y[rows.start + lane] += s.values[p] * x[s.col_idx[p] as usize];
                    }
                }
            }
        }
    }
    y
}

fn check_spmv(m: &SparseMatrix, x: &[f64], y: &[f64]) -> Result<()> {
    let want = reference_spmv(m, x);
    for (r, (a, b)) in y.iter().zip(&want).enumerate() {
        if (a - b).abs() > 1e-12 * b.abs().max(1.0) {
            return Err(Error::Matrix(format!("y[{r}] = {a}, expected {b}")));
        }
    }
    Ok(())
}

/// Runs every configured run. Failing runs become error rows; the rest
/// proceed. Rows come back in config order regardless of scheduling.
pub fn sweep(cfg: &SimConfig) -> Vec<CsvRow> {
    let specs = cfg.expand();
    let mut matrices: HashMap<String, Arc<Result<SparseMatrix>>> = HashMap::new();
    for s in &specs {
        matrices.entry(s.matrix.clone()).or_insert_with(|| {
            Arc::new(load_matrix(
                &s.matrix,
                cfg.runs.format,
                cfg.runs.slice_height,
                cfg.runs.cache_dir.as_deref(),
            ))
        });
    }
    let threads = cfg
        .runs
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .clamp(1, specs.len().max(1));
    let run_one = |id: usize| -> CsvRow {
        let s = &specs[id];
        let fail = |e: &Error| CsvRow::failed(id, &s.matrix, s.format.name(), &s.label(), s.window, e);
        match matrices[&s.matrix].as_ref() {
            Err(e) => fail(e),
            Ok(m) => match execute(id, s, m, cfg, false) {
                Ok(out) => CsvRow::from_report(&out.report),
                Err(e) => fail(&e),
            },
        }
    };
    let mut rows: Vec<Option<CsvRow>> = vec![None; specs.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let id = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if id >= specs.len() {
                            break;
                        }
                        done.push((id, run_one(id)));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (id, row) in h.join().expect("sweep worker panicked") {
                rows[id] = Some(row);
            }
        }
    });
    rows.into_iter().map(|r| r.expect("every run produced a row")).collect()
}
