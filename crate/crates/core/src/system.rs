//! End-to-end SpMV timing: a vector core with an L2 scratchpad whose
//! prefetcher streams double-buffered tiles through the adapter, and a
//! baseline that runs the naive loop through a single-level LLC.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::adapter::{Adapter, AdapterConfig, PortArbiter, WideEvent, DEADLOCK_CYCLES};
use crate::coalescer::{Mode, PortRequest};
use crate::dram::{Category, DramChannel, DramConfig, DramCounters, StreamId, WideRequest, BLOCK};
use crate::error::{Error, Result};
use crate::sparse::{SparseMatrix, VALUE_BYTES};
use crate::streams::{spmv_streams, AddressMap, ContiguousBurst, Tile};

const CONTIG_STREAMS: [StreamId; 2] = [2, 3];
const RESULT_STREAM: StreamId = 4;
const LLC_STREAM: StreamId = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VpsConfig {
    pub lanes: usize,
    pub l2_bytes: usize,
    pub per_slice_overhead: u64,
    pub outstanding_prefetches: usize,
    /// Bytes of packed values per tile; defaults to one L2 array.
    pub tile_bytes: Option<usize>,
}

impl Default for VpsConfig {
    fn default() -> Self {
        Self {
            lanes: 16,
            l2_bytes: 384 * 1024,
            per_slice_overhead: 10,
            outstanding_prefetches: 2,
            tile_bytes: None,
        }
    }
}

impl VpsConfig {
    pub fn partition_bytes(&self) -> usize {
        self.l2_bytes / 6
    }

    pub fn tile_entries(&self) -> usize {
        self.tile_bytes.unwrap_or(self.partition_bytes()) / VALUE_BYTES as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("vps: {m}")));
        if self.lanes == 0 {
            return bad("lanes must be positive".into());
        }
        if self.l2_bytes == 0 || self.l2_bytes % 6 != 0 {
            return bad(format!("l2 size {} not divisible into six arrays", self.l2_bytes));
        }
        if self.outstanding_prefetches == 0 {
            return bad("at least one prefetch must be allowed".into());
        }
        if let Some(t) = self.tile_bytes {
            if t > self.partition_bytes() {
                return bad(format!(
                    "tile of {t} bytes exceeds the {}-byte partition",
                    self.partition_bytes()
                ));
            }
            if t < VALUE_BYTES as usize {
                return bad(format!("tile of {t} bytes holds no entries"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlcConfig {
    pub capacity: usize,
    pub line: usize,
    pub ways: usize,
    pub hit_latency: u64,
}

impl Default for LlcConfig {
    fn default() -> Self {
        Self {
            capacity: 1 << 20,
            line: 64,
            ways: 8,
            hit_latency: 12,
        }
    }
}

impl LlcConfig {
    pub fn sets(&self) -> usize {
        self.capacity / (self.line * self.ways)
    }

    pub fn validate(&self) -> Result<()> {
        if self.line != BLOCK {
            return Err(Error::Config(format!("llc line must be {BLOCK} bytes")));
        }
        if self.ways == 0 || self.sets() == 0 || self.sets() * self.ways * self.line != self.capacity {
            return Err(Error::Config(format!(
                "llc capacity {} is not sets x {} ways x {} bytes",
                self.capacity, self.ways, self.line
            )));
        }
        Ok(())
    }
}

/// `ceil(entries / lanes) + overhead * slices`.
pub fn compute_model(packed_entries: usize, slices: usize, cfg: &VpsConfig) -> u64 {
    if packed_entries == 0 {
        return 0;
    }
    packed_entries.div_ceil(cfg.lanes) as u64 + cfg.per_slice_overhead * slices as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SystemVariant {
    /// Naive loop through the LLC.
    Base,
    /// Adapter-backed prefetching system.
    Pack { mode: Mode, window: usize },
}

impl SystemVariant {
    pub const PACK0: SystemVariant = SystemVariant::Pack {
        mode: Mode::Mlpnc,
        window: 0,
    };
    pub const PACK64: SystemVariant = SystemVariant::Pack {
        mode: Mode::Mlp,
        window: 64,
    };
    pub const PACK256: SystemVariant = SystemVariant::Pack {
        mode: Mode::Mlp,
        window: 256,
    };

    pub fn label(&self) -> String {
        match self {
            SystemVariant::Base => "base".into(),
            SystemVariant::Pack { mode: Mode::Mlpnc, .. } => "pack0".into(),
            SystemVariant::Pack { mode: Mode::Mlp, window } => format!("pack{window}"),
            SystemVariant::Pack { mode: Mode::Seq, window } => format!("packseq{window}"),
        }
    }
}

impl std::str::FromStr for SystemVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        if s == "base" || s == "base-llc" {
            return Ok(SystemVariant::Base);
        }
        if s == "pack0" {
            return Ok(SystemVariant::PACK0);
        }
        if let Some(w) = s.strip_prefix("pack") {
            if let Ok(window) = w.parse() {
                return Ok(SystemVariant::Pack {
                    mode: Mode::Mlp,
                    window,
                });
            }
        }
        Err(Error::Config(format!("unknown system variant '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct SpmvOptions {
    pub repetitions: usize,
    pub record_events: bool,
}

impl Default for SpmvOptions {
    fn default() -> Self {
        Self {
            repetitions: 1,
            record_events: false,
        }
    }
}

/// Counter snapshot for one SpMV pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PassStats {
    pub cycles: u64,
    pub indirect_cycles: u64,
    pub counters: DramCounters,
    pub narrow_served: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileTiming {
    pub transfer_start: u64,
    pub transfer_end: u64,
    pub compute_start: u64,
    pub compute_end: u64,
}

#[derive(Debug, Clone)]
pub struct SpmvRun {
    pub variant: SystemVariant,
    pub y: Vec<f64>,
    pub cycles: u64,
    /// Time spent fetching indices and gathering.
    pub indirect_cycles: u64,
    pub counters: DramCounters,
    pub narrow_served: u64,
    pub passes: Vec<PassStats>,
    pub tiles: Vec<TileTiming>,
    pub events: Vec<WideEvent>,
    pub max_concurrent_transfers: usize,
}

pub struct SpmvSetup<'a> {
    pub vps: &'a VpsConfig,
    pub adapter: &'a AdapterConfig,
    pub dram: &'a DramConfig,
    pub llc: &'a LlcConfig,
}

pub fn run_spmv(
    variant: SystemVariant,
    m: &SparseMatrix,
    x: &[f64],
    setup: &SpmvSetup,
    opts: &SpmvOptions,
) -> Result<SpmvRun> {
    setup.vps.validate()?;
    if x.len() != m.cols() {
        return Err(Error::Matrix(format!(
            "x has {} entries for {} columns",
            x.len(),
            m.cols()
        )));
    }
    if opts.repetitions == 0 {
        return Err(Error::Config("at least one repetition is required".into()));
    }
    let map = AddressMap::for_matrix(m);
    let mut dram = DramChannel::new(setup.dram.clone())?;
    dram.load_image(map.memory_image(m, x))?;
    match variant {
        SystemVariant::Base => {
            setup.llc.validate()?;
            BaseSystem::new(m, x, &map, setup, dram, opts.record_events)?.run(opts)
        }
        SystemVariant::Pack { mode, window } => {
            let cfg = setup.adapter.with_mode(mode, window.max(1));
            let tiles = spmv_streams(m, &map, setup.vps.tile_entries())?;
            PackSystem::new(m, &map, setup.vps, &cfg, dram, tiles, opts.record_events)?
                .run(variant, opts)
        }
    }
}

/// Accumulates `y` for the tile's rows from gathered `x` values.
fn accumulate(m: &SparseMatrix, tile: &Tile, gathered: &[f64], y: &mut [f64]) {
    let vals = &m.values()[tile.packed.clone()];
    match m {
        SparseMatrix::Csr(c) => {
            for r in tile.rows.clone() {
                let lo = c.row_ptr[r] as usize - tile.packed.start;
                let hi = c.row_ptr[r + 1] as usize - tile.packed.start;
                for k in lo..hi {
                    y[r] += vals[k] * gathered[k];
                }
            }
        }
        SparseMatrix::Sell(s) => {
            let h = s.slice_height;
            for sl in tile.groups.clone() {
                let base = s.slice_ptr[sl] as usize;
                let rows = s.slice_rows(sl);
                for k in 0..s.slice_width(sl) {
                    for lane in 0..rows.len() {
                        let p = base + k * h + lane - tile.packed.start;
                        y[rows.start + lane] += vals[p] * gathered[p];
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
struct ContigEngine {
    stream: StreamId,
    category: Category,
    write: bool,
    next: u64,
    end: u64,
    pending: u64,
    port: Option<PortRequest>,
}

impl ContigEngine {
    fn new(stream: StreamId, category: Category, write: bool) -> Self {
        Self {
            stream,
            category,
            write,
            next: 0,
            end: 0,
            pending: 0,
            port: None,
        }
    }

    fn start(&mut self, burst: ContiguousBurst) {
        debug_assert!(self.is_idle());
        let mut blocks = burst.blocks();
        let first = blocks.next().expect("burst covers at least one block");
        let count = 1 + blocks.count() as u64;
        self.next = first;
        self.end = first + count * BLOCK as u64;
        self.pending = count;
    }

    fn is_idle(&self) -> bool {
        self.pending == 0
    }

    fn step(&mut self) {
        if self.port.is_none() && self.next < self.end {
            let req = if self.write {
                WideRequest::write(self.next, self.category, self.stream)
            } else {
                WideRequest::read(self.next, self.category, self.stream)
            };
            self.port = Some(PortRequest { req, popcount: 0 });
            self.next += BLOCK as u64;
        }
    }

    fn on_response(&mut self) {
        self.pending -= 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JobKind {
    Pointers,
    Values,
    Gather,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    tile: usize,
    kind: JobKind,
}

#[derive(Debug, Clone, Copy)]
enum Running {
    Contig(usize),
    Gather,
}

struct PackSystem<'a> {
    m: &'a SparseMatrix,
    vps: &'a VpsConfig,
    dram: DramChannel,
    adapter: Adapter,
    arbiter: PortArbiter,
    contig: [ContigEngine; 2],
    result: ContigEngine,
    result_queue: VecDeque<ContiguousBurst>,
    tiles: Vec<Tile>,
    y_base: u64,
}

impl<'a> PackSystem<'a> {
    fn new(
        m: &'a SparseMatrix,
        map: &AddressMap,
        vps: &'a VpsConfig,
        cfg: &AdapterConfig,
        dram: DramChannel,
        tiles: Vec<Tile>,
        record: bool,
    ) -> Result<Self> {
        Ok(Self {
            m,
            vps,
            dram,
            adapter: Adapter::new(cfg)?,
            arbiter: PortArbiter::new(record),
            contig: [
                ContigEngine::new(CONTIG_STREAMS[0], Category::Contig, false),
                ContigEngine::new(CONTIG_STREAMS[1], Category::Contig, false),
            ],
            result: ContigEngine::new(RESULT_STREAM, Category::Result, true),
            result_queue: VecDeque::new(),
            tiles,
            y_base: map.y_base,
        })
    }

    fn run(mut self, variant: SystemVariant, opts: &SpmvOptions) -> Result<SpmvRun> {
        let mut cycle = 0u64;
        let mut passes = Vec::new();
        let mut y = Vec::new();
        let mut timings = Vec::new();
        let mut max_concurrent = 0;
        let mut narrow_total = 0;
        for _ in 0..opts.repetitions {
            let before = *self.dram.counters();
            let narrow_before = self.adapter.progress();
            let start = cycle;
            let (py, t, indirect, conc) = self.pass(&mut cycle)?;
            y = py;
            timings = t;
            max_concurrent = max_concurrent.max(conc);
            let after = *self.dram.counters();
            let served = self.adapter.progress() - narrow_before;
            narrow_total += served;
            passes.push(PassStats {
                cycles: cycle - start,
                indirect_cycles: indirect,
                counters: counters_delta(&after, &before),
                narrow_served: served,
            });
        }
        Ok(SpmvRun {
            variant,
            y,
            cycles: cycle,
            indirect_cycles: passes.iter().map(|p| p.indirect_cycles).sum(),
            counters: *self.dram.counters(),
            narrow_served: narrow_total,
            passes,
            tiles: timings,
            events: self.arbiter.take_events(),
            max_concurrent_transfers: max_concurrent,
        })
    }

    fn pass(&mut self, cycle: &mut u64) -> Result<(Vec<f64>, Vec<TileTiming>, u64, usize)> {
        let n = self.tiles.len();
        let mut y = vec![0.0; self.m.rows()];
        let mut jobs = Vec::with_capacity(3 * n);
        for (t, tile) in self.tiles.iter().enumerate() {
            jobs.push(Job {
                tile: t,
                kind: JobKind::Pointers,
            });
            if tile.values.is_some() {
                jobs.push(Job {
                    tile: t,
                    kind: JobKind::Values,
                });
                jobs.push(Job {
                    tile: t,
                    kind: JobKind::Gather,
                });
            }
        }
        let mut jobs_left = vec![0usize; n];
        for j in &jobs {
            jobs_left[j.tile] += 1;
        }
        let mut timing = vec![
            TileTiming {
                transfer_start: u64::MAX,
                transfer_end: u64::MAX,
                compute_start: u64::MAX,
                compute_end: u64::MAX,
            };
            n
        ];
        let mut gathered: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut running: Vec<(Job, Running)> = Vec::new();
        let mut next_job = 0;
        let mut gather_start = 0;
        let mut indirect = 0;
        let mut computed = 0;
        let mut computing: Option<usize> = None;
        let mut max_concurrent = 0;
        let mut last_activity = *cycle;
        let mut last_mark = (0u64, 0usize, 0usize);

        loop {
            let c = *cycle;
            for resp in self.dram.step(c) {
                match resp.stream {
                    s if s == CONTIG_STREAMS[0] => self.contig[0].on_response(),
                    s if s == CONTIG_STREAMS[1] => self.contig[1].on_response(),
                    RESULT_STREAM => self.result.on_response(),
                    _ => self.adapter.on_response(resp),
                }
            }
            self.adapter.step(c);
            for beat in self.adapter.take_beats() {
                let Some((job, _)) = running.iter().find(|(j, _)| j.kind == JobKind::Gather) else {
                    unreachable!("beats without a gather job");
                };
                gathered[job.tile].extend(beat.elems.iter().map(|&b| f64::from_bits(b)));
            }

            // retire finished transfer jobs
            let mut i = 0;
            while i < running.len() {
                let (job, r) = running[i];
                let done = match r {
                    Running::Contig(e) => self.contig[e].is_idle(),
                    Running::Gather => !self.adapter.is_busy(),
                };
                if done {
                    if let Running::Gather = r {
                        indirect += c - gather_start;
                    }
                    running.swap_remove(i);
                    jobs_left[job.tile] -= 1;
                    if jobs_left[job.tile] == 0 {
                        timing[job.tile].transfer_end = c;
                    }
                } else {
                    i += 1;
                }
            }

            // compute
            if let Some(t) = computing {
                if c >= timing[t].compute_end {
                    accumulate(self.m, &self.tiles[t], &gathered[t], &mut y);
                    gathered[t] = Vec::new();
                    let rows = &self.tiles[t].rows;
                    if !rows.is_empty() {
                        self.result_queue.push_back(ContiguousBurst {
                            base: self.y_base + rows.start as u64 * VALUE_BYTES,
                            length_bytes: rows.len() as u64 * VALUE_BYTES,
                        });
                    }
                    computing = None;
                    computed += 1;
                }
            }
            if computing.is_none() && computed < n && timing[computed].transfer_end <= c {
                let t = computed;
                let tile = &self.tiles[t];
                let cost = compute_model(tile.packed_len(), tile.slice_count(self.m), self.vps);
                timing[t].compute_start = c;
                timing[t].compute_end = c + cost;
                computing = Some(t);
            }

            // prefetcher: in-order job start, bounded outstanding, double buffered
            while next_job < jobs.len() && running.len() < self.vps.outstanding_prefetches {
                let job = jobs[next_job];
                if job.tile >= computed + 2 {
                    break;
                }
                let slot = match job.kind {
                    JobKind::Gather if self.adapter.is_busy() => break,
                    JobKind::Gather => Running::Gather,
                    _ => match self.contig.iter().position(ContigEngine::is_idle) {
                        Some(e) if !running.iter().any(|(_, r)| matches!(r, Running::Contig(x) if *x == e)) => {
                            Running::Contig(e)
                        }
                        _ => break,
                    },
                };
                let tile = &self.tiles[job.tile];
                match (job.kind, slot) {
                    (JobKind::Pointers, Running::Contig(e)) => self.contig[e].start(tile.pointers),
                    (JobKind::Values, Running::Contig(e)) => {
                        self.contig[e].start(tile.values.expect("values job implies values"))
                    }
                    (JobKind::Gather, _) => {
                        self.adapter.start(tile.gather.expect("gather job implies gather"))?;
                        gather_start = c;
                    }
                    _ => unreachable!(),
                }
                if timing[job.tile].transfer_start == u64::MAX {
                    timing[job.tile].transfer_start = c;
                }
                running.push((job, slot));
                next_job += 1;
            }
            let in_transfer = (0..n)
                .filter(|&t| timing[t].transfer_start <= c && timing[t].transfer_end > c)
                .count();
            max_concurrent = max_concurrent.max(in_transfer);

            if self.result.is_idle() {
                if let Some(b) = self.result_queue.pop_front() {
                    self.result.start(b);
                }
            }
            for e in &mut self.contig {
                e.step();
            }
            self.result.step();

            let yield_index = self.adapter.index_deprioritized();
            let [ip, ep] = self.adapter.ports();
            let [c0, c1] = &mut self.contig;
            self.arbiter.arbitrate(
                c,
                &mut self.dram,
                &mut [ip, ep, &mut c0.port, &mut c1.port, &mut self.result.port],
                &[yield_index, false, false, false, false],
            )?;

            *cycle += 1;
            if computed == n
                && running.is_empty()
                && self.result.is_idle()
                && self.result_queue.is_empty()
                && self.dram.is_idle()
            {
                break;
            }
            let mark = (self.dram.counters().total_bytes, computed, next_job);
            if mark != last_mark {
                last_mark = mark;
                last_activity = c;
            } else if c - last_activity > DEADLOCK_CYCLES {
                return Err(Error::Deadlock {
                    cycle: c,
                    what: format!("spmv stalled at tile {computed} of {n}"),
                });
            }
        }
        Ok((y, timing, indirect, max_concurrent))
    }
}

fn counters_delta(a: &DramCounters, b: &DramCounters) -> DramCounters {
    let mut d = DramCounters {
        total_bytes: a.total_bytes - b.total_bytes,
        row_hits: a.row_hits - b.row_hits,
        row_misses: a.row_misses - b.row_misses,
        ..DramCounters::default()
    };
    for i in 0..4 {
        d.bytes[i] = a.bytes[i] - b.bytes[i];
        d.requests[i] = a.requests[i] - b.requests[i];
    }
    d
}

/// Outcome of one cache lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LlcOutcome {
    Hit,
    /// Miss; carries the evicted line's address and dirtiness, if any.
    Miss(Option<(u64, bool)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy)]
struct Line {
    tag: u64,
    dirty: bool,
    used: u64,
}

/// Set-associative, LRU, write-back, write-allocate cache.
#[derive(Debug, Clone)]
pub struct Llc {
    cfg: LlcConfig,
    sets: Vec<Vec<Line>>,
    clock: u64,
}

impl Llc {
    pub fn new(cfg: LlcConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            sets: vec![Vec::with_capacity(cfg.ways); cfg.sets()],
            cfg,
            clock: 0,
        })
    }

    pub fn config(&self) -> &LlcConfig {
        &self.cfg
    }

    pub fn access(&mut self, addr: u64, kind: AccessKind) -> LlcOutcome {
        self.clock += 1;
        let line_no = addr / self.cfg.line as u64;
        let nsets = self.sets.len() as u64;
        let set = &mut self.sets[(line_no % nsets) as usize];
        let tag = line_no / nsets;
        let write = kind == AccessKind::Write;
        if let Some(l) = set.iter_mut().find(|l| l.tag == tag) {
            l.used = self.clock;
            l.dirty |= write;
            return LlcOutcome::Hit;
        }
        let new = Line {
            tag,
            dirty: write,
            used: self.clock,
        };
        if set.len() < self.cfg.ways {
            set.push(new);
            return LlcOutcome::Miss(None);
        }
        let victim = set
            .iter_mut()
            .min_by_key(|l| l.used)
            .expect("full set has lines");
        let evicted = ((victim.tag * nsets + line_no % nsets) * self.cfg.line as u64, victim.dirty);
        *victim = new;
        LlcOutcome::Miss(Some(evicted))
    }

    /// Drains every dirty line, returning their addresses.
    pub fn flush(&mut self) -> Vec<u64> {
        let nsets = self.sets.len() as u64;
        let mut out = Vec::new();
        for (s, set) in self.sets.iter_mut().enumerate() {
            for l in set.iter_mut().filter(|l| l.dirty) {
                out.push((l.tag * nsets + s as u64) * self.cfg.line as u64);
                l.dirty = false;
            }
        }
        out.sort_unstable();
        out
    }
}

/// `llc_access` for callers that track their own cache.
pub fn llc_access(llc: &mut Llc, addr: u64, kind: AccessKind) -> LlcOutcome {
    llc.access(addr, kind)
}

struct BaseSystem<'a> {
    m: &'a SparseMatrix,
    map: &'a AddressMap,
    vps: &'a VpsConfig,
    llc: Llc,
    dram: DramChannel,
    cycle: u64,
    writes: VecDeque<WideRequest>,
    events: Option<Vec<WideEvent>>,
}

impl<'a> BaseSystem<'a> {
    fn new(
        m: &'a SparseMatrix,
        _x: &[f64],
        map: &'a AddressMap,
        setup: &'a SpmvSetup,
        dram: DramChannel,
        record: bool,
    ) -> Result<Self> {
        Ok(Self {
            m,
            map,
            vps: setup.vps,
            llc: Llc::new(setup.llc.clone())?,
            dram,
            cycle: 0,
            writes: VecDeque::new(),
            events: record.then(Vec::new),
        })
    }

    fn category_of(&self, addr: u64) -> Category {
        let map = self.map;
        if addr >= map.index_base && addr < map.index_base + map.index_bytes.max(1) {
            Category::Index
        } else if addr >= map.x_base && addr < map.x_base + map.x_bytes.max(1) {
            Category::Element
        } else if addr >= map.y_base && addr < map.y_base + map.y_bytes.max(1) {
            Category::Result
        } else {
            Category::Contig
        }
    }

    /// One cycle of background write-back draining plus the DRAM itself.
    fn tick(&mut self) -> Vec<crate::dram::WideResponse> {
        if let Some(&w) = self.writes.front() {
            if self.dram.submit(w, self.cycle).expect("aligned write-back") {
                self.writes.pop_front();
                self.log(w, 0);
            }
        }
        let out = self.dram.step(self.cycle);
        self.cycle += 1;
        out
    }

    fn log(&mut self, req: WideRequest, popcount: u32) {
        if let Some(log) = &mut self.events {
            log.push(WideEvent {
                cycle: self.cycle,
                tag: req.addr,
                popcount,
                category: req.category,
            });
        }
    }

    /// Blocking batch: looks up every distinct line, fills the misses and
    /// waits for the last one.
    fn batch(&mut self, addrs: &[u64], kind: AccessKind) -> Result<()> {
        let start = self.cycle;
        let mut lines: Vec<u64> = addrs.iter().map(|a| a & !(BLOCK as u64 - 1)).collect();
        lines.sort_unstable();
        let mut counted: Vec<(u64, u32)> = Vec::new();
        for l in lines {
            match counted.last_mut() {
                Some((last, n)) if *last == l => *n += 1,
                _ => counted.push((l, 1)),
            }
        }
        let mut fills = VecDeque::new();
        for &(l, n) in &counted {
            if let LlcOutcome::Miss(ev) = self.llc.access(l, kind) {
                let cat = self.category_of(l);
                let pop = if cat == Category::Element { n } else { 0 };
                fills.push_back((WideRequest::read(l, cat, LLC_STREAM), pop));
                if let Some((victim, true)) = ev {
                    let cat = self.category_of(victim);
                    self.writes.push_back(WideRequest::write(victim, cat, RESULT_STREAM));
                }
            }
        }
        let mut outstanding = fills.len();
        while outstanding > 0 {
            let issue = self.cycle;
            if let Some(&(f, pop)) = fills.front() {
                if self.dram.submit(f, issue)? {
                    fills.pop_front();
                    self.log(f, pop);
                }
            }
            outstanding -= self
                .tick()
                .iter()
                .filter(|r| r.stream == LLC_STREAM)
                .count();
            if self.cycle - start > DEADLOCK_CYCLES {
                return Err(Error::Deadlock {
                    cycle: self.cycle,
                    what: "llc fill never returned".into(),
                });
            }
        }
        let done = start + self.llc.config().hit_latency;
        while self.cycle < done {
            self.tick();
        }
        Ok(())
    }

    fn idle(&mut self, cycles: u64) {
        for _ in 0..cycles {
            self.tick();
        }
    }

    fn run(mut self, opts: &SpmvOptions) -> Result<SpmvRun> {
        let mut passes = Vec::new();
        let mut y = Vec::new();
        for _ in 0..opts.repetitions {
            let before = *self.dram.counters();
            let start = self.cycle;
            let (py, indirect) = self.pass()?;
            y = py;
            if passes.len() + 1 == opts.repetitions {
                for a in self.llc.flush() {
                    let cat = self.category_of(a);
                    self.writes.push_back(WideRequest::write(a, cat, RESULT_STREAM));
                }
                while !self.writes.is_empty() || !self.dram.is_idle() {
                    self.tick();
                }
            }
            passes.push(PassStats {
                cycles: self.cycle - start,
                indirect_cycles: indirect,
                counters: counters_delta(self.dram.counters(), &before),
                narrow_served: self.m.col_idx().len() as u64,
            });
        }
        Ok(SpmvRun {
            variant: SystemVariant::Base,
            y,
            cycles: self.cycle,
            indirect_cycles: passes.iter().map(|p| p.indirect_cycles).sum(),
            counters: *self.dram.counters(),
            narrow_served: passes.iter().map(|p| p.narrow_served).sum(),
            passes,
            tiles: Vec::new(),
            events: self.events.take().unwrap_or_default(),
            max_concurrent_transfers: 0,
        })
    }

    /// Row groups with their packed positions, in program order. Each group
    /// is one vector strip: lanes run over rows, steps over entries.
    fn strips(&self) -> Vec<(std::ops::Range<usize>, Vec<Vec<usize>>)> {
        match self.m {
            SparseMatrix::Sell(s) => (0..s.num_slices())
                .map(|sl| {
                    let rows = s.slice_rows(sl);
                    let base = s.slice_ptr[sl] as usize;
                    let steps = (0..s.slice_width(sl))
                        .map(|k| (0..rows.len()).map(|l| base + k * s.slice_height + l).collect())
                        .collect();
                    (rows, steps)
                })
                .collect(),
            SparseMatrix::Csr(c) => (0..c.rows)
                .map(|r| {
                    let lo = c.row_ptr[r] as usize;
                    let hi = c.row_ptr[r + 1] as usize;
                    let steps = (lo..hi)
                        .step_by(self.vps.lanes)
                        .map(|a| (a..(a + self.vps.lanes).min(hi)).collect())
                        .collect();
                    (r..r + 1, steps)
                })
                .collect(),
        }
    }

    fn pass(&mut self) -> Result<(Vec<f64>, u64)> {
        let m = self.m;
        let map = self.map;
        let lanes = self.vps.lanes;
        let mut y = vec![0.0; m.rows()];
        let mut indirect = 0;
        let xs = read_x(&self.dram, map, m.cols());
        let (idx, vals) = (m.col_idx(), m.values());
        for (g, (rows, steps)) in self.strips().into_iter().enumerate() {
            let ptr_addr = map.ptr_base + g as u64 * 4;
            self.batch(&[ptr_addr, ptr_addr + 4], AccessKind::Read)?;
            let mut entries = 0;
            for step in &steps {
                for chunk in step.chunks(lanes) {
                    let t0 = self.cycle;
                    let ia: Vec<u64> = chunk.iter().map(|&p| map.index_base + p as u64 * 4).collect();
                    self.batch(&ia, AccessKind::Read)?;
                    let t1 = self.cycle;
                    let va: Vec<u64> = chunk.iter().map(|&p| map.values_base + p as u64 * 8).collect();
                    self.batch(&va, AccessKind::Read)?;
                    let t2 = self.cycle;
                    let xa: Vec<u64> = chunk.iter().map(|&p| map.x_base + idx[p] as u64 * 8).collect();
                    self.batch(&xa, AccessKind::Read)?;
                    indirect += (t1 - t0) + (self.cycle - t2);
                    entries += chunk.len();
                }
                for (lane, &p) in step.iter().enumerate() {
                    let row = match m {
                        SparseMatrix::Sell(_) => rows.start + lane,
                        SparseMatrix::Csr(_) => rows.start,
                    };
                    y[row] += vals[p] * xs[idx[p] as usize];
                }
            }
            let ya: Vec<u64> = rows.clone().map(|r| map.y_base + r as u64 * 8).collect();
            if !ya.is_empty() {
                self.batch(&ya, AccessKind::Write)?;
            }
            self.idle(compute_model(entries, 1, self.vps));
        }
        Ok((y, indirect))
    }
}

fn read_x(dram: &DramChannel, map: &AddressMap, n: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(n);
    let mut addr = map.x_base;
    while x.len() < n {
        let b = dram.store().read_block(addr);
        for c in b.chunks_exact(8) {
            if x.len() < n {
                x.push(f64::from_le_bytes(c.try_into().unwrap()));
            }
        }
        addr += BLOCK as u64;
    }
    x
}
