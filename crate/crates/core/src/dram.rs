//! Parameterized model of a single wide DRAM channel.
//!
//! Requests are 64-byte blocks. The scheduler is FR-FCFS over an intake
//! queue of `scheduler_depth` entries: a row-buffer hit on a ready bank wins,
//! otherwise the oldest request whose bank is ready. One request is issued
//! every `burst_cycles`, so the data bus tops out at 64 B per 2 cycles. A
//! row miss keeps its bank busy for the activation time
//! (`t_row_miss - t_row_hit`), and returns are spaced at least one burst
//! apart on the data bus.
//!
//! Responses are delivered in per-stream submission order.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Index,
    Element,
    Contig,
    Result,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Index,
        Category::Element,
        Category::Contig,
        Category::Result,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Index => "INDEX",
            Category::Element => "ELEMENT",
            Category::Contig => "CONTIG",
            Category::Result => "RESULT",
        }
    }

    /// Index into per-category counter arrays.
    pub fn slot(self) -> usize {
        self as usize
    }
}

/// Identifies a submitter; ordering is guaranteed per stream.
pub type StreamId = u16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DramConfig {
    pub banks: usize,
    pub row_bytes: u64,
    pub t_row_hit: u64,
    pub t_row_miss: u64,
    pub scheduler_depth: usize,
    /// Data-bus cycles per 64-byte block.
    pub burst_cycles: u64,
}

impl Default for DramConfig {
    fn default() -> Self {
        Self {
            banks: 16,
            row_bytes: 1024,
            t_row_hit: 20,
            t_row_miss: 44,
            scheduler_depth: 16,
            burst_cycles: 2,
        }
    }
}

impl DramConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("dram: {m}")));
        if self.banks == 0 {
            return bad("bank count must be positive");
        }
        if self.row_bytes == 0 || self.row_bytes % BLOCK as u64 != 0 {
            return bad("row size must be a positive multiple of 64");
        }
        if self.t_row_hit == 0 || self.t_row_miss < self.t_row_hit {
            return bad("latencies must satisfy 1 <= t_row_hit <= t_row_miss");
        }
        if self.scheduler_depth == 0 || self.burst_cycles == 0 {
            return bad("scheduler depth and burst cycles must be positive");
        }
        Ok(())
    }

    /// Peak bandwidth in bytes per cycle.
    pub fn peak_bytes_per_cycle(&self) -> f64 {
        BLOCK as f64 / self.burst_cycles as f64
    }

    fn bank_row(&self, addr: u64) -> (usize, u64) {
        let row_index = addr / self.row_bytes;
        (
            (row_index % self.banks as u64) as usize,
            row_index / self.banks as u64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WideRequest {
    pub addr: u64,
    pub category: Category,
    pub stream: StreamId,
    pub write: bool,
    pub issue_cycle: u64,
}

impl WideRequest {
    pub fn read(addr: u64, category: Category, stream: StreamId) -> Self {
        Self {
            addr,
            category,
            stream,
            write: false,
            issue_cycle: 0,
        }
    }

    pub fn write(addr: u64, category: Category, stream: StreamId) -> Self {
        Self {
            write: true,
            ..Self::read(addr, category, stream)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WideResponse {
    pub addr: u64,
    pub data: [u8; BLOCK],
    pub category: Category,
    pub stream: StreamId,
    pub write: bool,
    pub complete_cycle: u64,
}

/// Byte-addressable initial memory contents. Unloaded bytes read as zero.
#[derive(Debug, Default, Clone)]
pub struct BackingStore {
    regions: Vec<(u64, Vec<u8>)>,
}

impl BackingStore {
    pub fn load(&mut self, addr: u64, bytes: Vec<u8>) -> Result<()> {
        let end = addr + bytes.len() as u64;
        for (base, data) in &self.regions {
            let other_end = base + data.len() as u64;
            if addr < other_end && *base < end {
                return Err(Error::Overlap(addr.max(*base)));
            }
        }
        let at = self.regions.partition_point(|r| r.0 < addr);
        self.regions.insert(at, (addr, bytes));
        Ok(())
    }

    pub fn read_block(&self, addr: u64) -> [u8; BLOCK] {
        let mut out = [0u8; BLOCK];
        let end = addr + BLOCK as u64;
        let first = self
            .regions
            .partition_point(|(b, d)| b + d.len() as u64 <= addr);
        for (base, data) in &self.regions[first..] {
            if *base >= end {
                break;
            }
            let lo = addr.max(*base);
            let hi = end.min(base + data.len() as u64);
            if lo < hi {
                let src = &data[(lo - base) as usize..(hi - base) as usize];
                out[(lo - addr) as usize..(hi - addr) as usize].copy_from_slice(src);
            }
        }
        out
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DramCounters {
    pub bytes: [u64; 4],
    pub requests: [u64; 4],
    /// Independently accumulated total, for ledger closure checks.
    pub total_bytes: u64,
    pub row_hits: u64,
    pub row_misses: u64,
}

impl DramCounters {
    pub fn bytes_of(&self, c: Category) -> u64 {
        self.bytes[c.slot()]
    }

    pub fn requests_of(&self, c: Category) -> u64 {
        self.requests[c.slot()]
    }
}

/// An issue decision, recorded when tracing is enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IssueEvent {
    pub cycle: u64,
    pub addr: u64,
    pub row_hit: bool,
    pub complete: u64,
}

#[derive(Debug, Clone, Copy)]
struct Bank {
    open_row: Option<u64>,
    ready_at: u64,
}

#[derive(Debug, Clone)]
struct Queued {
    req: WideRequest,
    seq: u64,
}

#[derive(Debug, Clone)]
struct InFlight {
    req: WideRequest,
    seq: u64,
    complete: u64,
}

#[derive(Debug, Default, Clone)]
struct StreamOrder {
    next_submit: u64,
    next_deliver: u64,
    done: BTreeMap<u64, WideResponse>,
}

pub struct DramChannel {
    cfg: DramConfig,
    store: BackingStore,
    queue: VecDeque<Queued>,
    banks: Vec<Bank>,
    next_issue: u64,
    last_return: Option<u64>,
    inflight: VecDeque<InFlight>,
    streams: BTreeMap<StreamId, StreamOrder>,
    counters: DramCounters,
    trace: Option<Vec<IssueEvent>>,
}

impl DramChannel {
    pub fn new(cfg: DramConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            banks: vec![
                Bank {
                    open_row: None,
                    ready_at: 0
                };
                cfg.banks
            ],
            cfg,
            store: BackingStore::default(),
            queue: VecDeque::new(),
            next_issue: 0,
            last_return: None,
            inflight: VecDeque::new(),
            streams: BTreeMap::new(),
            counters: DramCounters::default(),
            trace: None,
        })
    }

    pub fn config(&self) -> &DramConfig {
        &self.cfg
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> &[IssueEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn load_image(&mut self, regions: impl IntoIterator<Item = (u64, Vec<u8>)>) -> Result<()> {
        for (addr, bytes) in regions {
            self.store.load(addr, bytes)?;
        }
        Ok(())
    }

    pub fn store(&self) -> &BackingStore {
        &self.store
    }

    pub fn counters(&self) -> &DramCounters {
        &self.counters
    }

    pub fn can_accept(&self) -> bool {
        self.queue.len() < self.cfg.scheduler_depth
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Offers a request at `cycle`. Returns `Ok(false)` when the intake
    /// queue is full; the caller retries later.
    pub fn submit(&mut self, mut req: WideRequest, cycle: u64) -> Result<bool> {
        if req.addr % BLOCK as u64 != 0 {
            return Err(Error::Unaligned(req.addr));
        }
        if !self.can_accept() {
            return Ok(false);
        }
        req.issue_cycle = cycle;
        let order = self.streams.entry(req.stream).or_default();
        let seq = order.next_submit;
        order.next_submit += 1;
        self.queue.push_back(Queued { req, seq });
        Ok(true)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
            && self.inflight.is_empty()
            && self.streams.values().all(|s| s.done.is_empty())
    }

    /// Advances one cycle and returns responses that became deliverable.
    pub fn step(&mut self, cycle: u64) -> Vec<WideResponse> {
        if cycle >= self.next_issue {
            self.issue(cycle);
        }
        let mut out = Vec::new();
        let mut touched = false;
        while self.inflight.front().is_some_and(|f| f.complete <= cycle) {
            let f = self.inflight.pop_front().unwrap();
            let slot = f.req.category.slot();
            self.counters.bytes[slot] += BLOCK as u64;
            self.counters.requests[slot] += 1;
            self.counters.total_bytes += BLOCK as u64;
            let data = if f.req.write {
                [0u8; BLOCK]
            } else {
                self.store.read_block(f.req.addr)
            };
            let resp = WideResponse {
                addr: f.req.addr,
                data,
                category: f.req.category,
                stream: f.req.stream,
                write: f.req.write,
                complete_cycle: f.complete,
            };
            self.streams
                .get_mut(&f.req.stream)
                .expect("stream registered at submit")
                .done
                .insert(f.seq, resp);
            touched = true;
        }
        if touched {
            for order in self.streams.values_mut() {
                while let Some(r) = order.done.remove(&order.next_deliver) {
                    order.next_deliver += 1;
                    out.push(r);
                }
            }
        }
        out
    }

    fn issue(&mut self, cycle: u64) {
        let mut oldest_ready = None;
        let mut hit = None;
        for (i, q) in self.queue.iter().enumerate() {
            let (b, row) = self.cfg.bank_row(q.req.addr);
            let bank = &self.banks[b];
            if bank.ready_at > cycle {
                continue;
            }
            if bank.open_row == Some(row) {
                hit = Some(i);
                break;
            }
            if oldest_ready.is_none() {
                oldest_ready = Some(i);
            }
        }
        let Some(pick) = hit.or(oldest_ready) else {
            return;
        };
        let q = self.queue.remove(pick).unwrap();
        let (b, row) = self.cfg.bank_row(q.req.addr);
        let row_hit = hit.is_some();
        let latency = if row_hit {
            self.counters.row_hits += 1;
            self.cfg.t_row_hit
        } else {
            self.counters.row_misses += 1;
            let bank = &mut self.banks[b];
            bank.open_row = Some(row);
            bank.ready_at = cycle + (self.cfg.t_row_miss - self.cfg.t_row_hit);
            self.cfg.t_row_miss
        };
        let mut complete = cycle + latency;
        if let Some(last) = self.last_return {
            complete = complete.max(last + self.cfg.burst_cycles);
        }
        self.last_return = Some(complete);
        self.next_issue = cycle + self.cfg.burst_cycles;
        if let Some(t) = &mut self.trace {
            t.push(IssueEvent {
                cycle,
                addr: q.req.addr,
                row_hit,
                complete,
            });
        }
        self.inflight.push_back(InFlight {
            req: q.req,
            seq: q.seq,
            complete,
        });
    }

    /// Whether any queued request could issue this cycle as a row hit.
    pub fn has_ready_hit(&self, cycle: u64) -> bool {
        self.queue.iter().any(|q| {
            let (b, row) = self.cfg.bank_row(q.req.addr);
            self.banks[b].ready_at <= cycle && self.banks[b].open_row == Some(row)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel() -> DramChannel {
        DramChannel::new(DramConfig::default()).unwrap()
    }

    fn run_until_idle(d: &mut DramChannel, start: u64) -> Vec<WideResponse> {
        let mut out = Vec::new();
        let mut c = start;
        while !d.is_idle() {
            out.extend(d.step(c));
            c += 1;
        }
        out
    }

    #[test]
    fn intake_backpressure() {
        let mut d = channel();
        assert!(d.submit(WideRequest::read(0, Category::Element, 0), 0).unwrap());
        for i in 1..16 {
            assert!(d.submit(WideRequest::read(i * 64, Category::Element, 0), 0).unwrap());
        }
        assert!(!d.submit(WideRequest::read(0x4000, Category::Element, 0), 0).unwrap());
    }

    #[test]
    fn unaligned_is_an_error() {
        let mut d = channel();
        assert!(matches!(
            d.submit(WideRequest::read(0x1001, Category::Element, 0), 0),
            Err(Error::Unaligned(0x1001))
        ));
    }

    #[test]
    fn closed_row_latency() {
        let mut d = channel();
        d.submit(WideRequest::read(0x2000, Category::Element, 0), 5).unwrap();
        let r = run_until_idle(&mut d, 5);
        assert_eq!(r[0].complete_cycle, 5 + 44);
    }

    #[test]
    fn same_row_pair() {
        let mut d = channel();
        d.submit(WideRequest::read(0, Category::Element, 0), 0).unwrap();
        d.submit(WideRequest::read(64, Category::Element, 0), 0).unwrap();
        let r = run_until_idle(&mut d, 0);
        assert_eq!(r[0].complete_cycle, 44);
        // hit issued once the bank has activated (24), data queued behind the first
        assert_eq!(r[1].complete_cycle, 46);
        assert_eq!(d.counters().row_hits, 1);
    }

    #[test]
    fn saturated_row_stream_reaches_peak() {
        let mut d = channel();
        let n = 2000u64;
        let mut next = 0u64;
        let mut done = 0u64;
        let mut first = None;
        let mut last = 0;
        let mut c = 0;
        while done < n {
            while next < n && d.can_accept() {
                // stay inside one row: 16 blocks per 1 KiB row
                d.submit(WideRequest::read((next % 16) * 64, Category::Contig, 0), c)
                    .unwrap();
                next += 1;
            }
            for r in d.step(c) {
                first.get_or_insert(r.complete_cycle);
                last = r.complete_cycle;
                done += 1;
            }
            c += 1;
        }
        let bytes_per_cycle = (n - 1) as f64 * 64.0 / (last - first.unwrap()) as f64;
        assert!((bytes_per_cycle - 32.0).abs() < 1e-9, "{bytes_per_cycle}");
    }

    #[test]
    fn row_hit_bypasses_older_miss() {
        let mut d = channel();
        d.enable_trace();
        // open row 0 of bank 0
        d.submit(WideRequest::read(0, Category::Element, 0), 0).unwrap();
        run_until_idle(&mut d, 0);
        // older request to a different row of bank 0, then a hit on the open row
        let other_row = 16 * 1024;
        d.submit(WideRequest::read(other_row, Category::Element, 1), 100).unwrap();
        d.submit(WideRequest::read(128, Category::Element, 2), 100).unwrap();
        run_until_idle(&mut d, 100);
        let t = d.trace();
        assert_eq!(t[1].addr, 128);
        assert!(t[1].row_hit);
        assert_eq!(t[2].addr, other_row);
    }

    #[test]
    fn per_stream_order_is_fifo() {
        let mut d = channel();
        d.submit(WideRequest::read(0, Category::Element, 0), 0).unwrap();
        run_until_idle(&mut d, 0);
        // first request misses (other row), second hits the open row and
        // issues first, but is delivered second
        d.submit(WideRequest::read(16 * 1024, Category::Element, 7), 50).unwrap();
        d.submit(WideRequest::read(64, Category::Element, 7), 50).unwrap();
        let r = run_until_idle(&mut d, 50);
        assert_eq!(r[0].addr, 16 * 1024);
        assert_eq!(r[1].addr, 64);
    }

    #[test]
    fn image_reads_and_defaults() {
        let mut d = channel();
        let bytes: Vec<u8> = (0..200u32).map(|i| i as u8).collect();
        d.load_image([(0x10000, bytes.clone())]).unwrap();
        assert_eq!(&d.store().read_block(0x10000)[..], &bytes[..64]);
        assert_eq!(d.store().read_block(0x10000 + 192)[..8], bytes[192..200]);
        assert_eq!(d.store().read_block(0x10000 + 192)[8..], [0u8; 56]);
        assert_eq!(d.store().read_block(0x90000), [0u8; 64]);
        assert!(matches!(
            d.load_image([(0x10040, vec![1, 2, 3])]),
            Err(Error::Overlap(_))
        ));
    }

    #[test]
    fn bad_configs() {
        for cfg in [
            DramConfig { row_bytes: 100, ..Default::default() },
            DramConfig { t_row_hit: 0, ..Default::default() },
            DramConfig { t_row_miss: 10, ..Default::default() },
            DramConfig { banks: 0, ..Default::default() },
        ] {
            assert!(DramChannel::new(cfg).is_err());
        }
    }
}
