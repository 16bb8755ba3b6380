//! Indirect stream unit: index fetcher, index splitter, element request
//! generator and element packer.
//!
//! The fetcher streams the index array as aligned 64-byte reads. Index `s`
//! of a burst goes to port `s mod N`; each port turns its indices into
//! narrow element requests for the coalescer. Ordered elements coming back
//! are packed into bus-wide beats.

use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::coalescer::{Coalescer, Mode, NarrowRequest, PortRequest};
use crate::dram::{Category, StreamId, WideRequest, WideResponse, BLOCK};
use crate::error::{Error, Result};
use crate::streams::IndirectBurst;

/// DRAM stream used for index reads.
pub const INDEX_STREAM: StreamId = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsuConfig {
    pub n_ports: usize,
    pub bus_width: u64,
    pub index_queue_depth: usize,
    /// Index reads allowed in flight.
    pub prefetch_credit: usize,
}

impl Default for IsuConfig {
    fn default() -> Self {
        Self {
            n_ports: 4,
            bus_width: 64,
            index_queue_depth: 256,
            prefetch_credit: 16,
        }
    }
}

impl IsuConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ports == 0 || !self.n_ports.is_power_of_two() {
            return Err(Error::Config(format!(
                "isu: port count {} is not a power of two",
                self.n_ports
            )));
        }
        if self.bus_width != BLOCK as u64 {
            return Err(Error::Config(format!(
                "isu: only a {BLOCK}-byte bus is modeled, got {}",
                self.bus_width
            )));
        }
        if self.index_queue_depth == 0 || self.prefetch_credit == 0 {
            return Err(Error::Config("isu: depths must be positive".into()));
        }
        Ok(())
    }
}

/// Sequence numbers covered by the index block at `block_addr`.
pub fn index_block_seqs(burst: &IndirectBurst, block_addr: u64) -> Range<u64> {
    let end = burst.index_base + burst.index_bytes();
    let lo = block_addr.max(burst.index_base);
    let hi = (block_addr + BLOCK as u64).min(end);
    if lo >= hi {
        return 0..0;
    }
    let first = (lo - burst.index_base).div_ceil(burst.index_width);
    let last = (hi - burst.index_base).div_ceil(burst.index_width);
    first..last
}

/// Aligned index blocks read for a burst, with the sequences each covers.
pub fn index_blocks(burst: &IndirectBurst) -> Vec<(u64, Range<u64>)> {
    let first = burst.index_base & !(BLOCK as u64 - 1);
    let end = burst.index_base + burst.index_bytes();
    (first..end)
        .step_by(BLOCK)
        .map(|b| (b, index_block_seqs(burst, b)))
        .collect()
}

/// Decodes the indices in `seqs` from a fetched block and distributes them
/// round-robin: sequence `s` goes to port `s mod n_ports`.
pub fn split_indices(
    burst: &IndirectBurst,
    block_addr: u64,
    data: &[u8; BLOCK],
    seqs: Range<u64>,
    n_ports: usize,
) -> Vec<Vec<(u64, u32)>> {
    let mut ports = vec![Vec::new(); n_ports];
    for s in seqs {
        let at = (burst.index_base + s * burst.index_width - block_addr) as usize;
        let idx = match burst.index_width {
            4 => u32::from_le_bytes(data[at..at + 4].try_into().unwrap()),
            _ => u64::from_le_bytes(data[at..at + 8].try_into().unwrap()) as u32,
        };
        ports[(s % n_ports as u64) as usize].push((s, idx));
    }
    ports
}

pub fn element_address(elem_base: u64, index: u32, elem_width: u64) -> u64 {
    elem_base + index as u64 * elem_width
}

/// A bus beat of packed elements. `valid_count` is below capacity only for
/// the last beat of a burst.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBeat {
    pub elems: Vec<u64>,
    pub valid_count: usize,
}

#[derive(Debug, Clone)]
struct Packer {
    per_beat: usize,
    buf: Vec<u64>,
}

impl Packer {
    fn push(&mut self, v: u64, out: &mut Vec<PackedBeat>) {
        self.buf.push(v);
        if self.buf.len() == self.per_beat {
            self.flush(out);
        }
    }

    fn flush(&mut self, out: &mut Vec<PackedBeat>) {
        if !self.buf.is_empty() {
            let elems = std::mem::take(&mut self.buf);
            out.push(PackedBeat {
                valid_count: elems.len(),
                elems,
            });
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct IsuStats {
    pub index_reads: u64,
    pub narrow_generated: u64,
    pub elements_packed: u64,
    pub beats: u64,
    pub max_index_occupancy: usize,
}

pub struct IndirectStreamUnit {
    cfg: IsuConfig,
    serialize: bool,
    burst: Option<IndirectBurst>,
    next_block: u64,
    index_end: u64,
    index_q: Vec<VecDeque<(u64, u32)>>,
    reserved: Vec<usize>,
    inflight: VecDeque<(u64, Range<u64>)>,
    fetch_out: Option<PortRequest>,
    index_resp: VecDeque<WideResponse>,
    gen_next: u64,
    packer: Packer,
    received: u64,
    beats: Vec<PackedBeat>,
    stats: IsuStats,
}

impl IndirectStreamUnit {
    /// `mode` selects serialized generation for the SEQ variant.
    pub fn new(cfg: IsuConfig, mode: Mode) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            serialize: mode == Mode::Seq,
            burst: None,
            next_block: 0,
            index_end: 0,
            index_q: vec![VecDeque::new(); cfg.n_ports],
            reserved: vec![0; cfg.n_ports],
            inflight: VecDeque::new(),
            fetch_out: None,
            index_resp: VecDeque::new(),
            gen_next: 0,
            packer: Packer {
                per_beat: 1,
                buf: Vec::new(),
            },
            received: 0,
            beats: Vec::new(),
            stats: IsuStats::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &IsuConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &IsuStats {
        &self.stats
    }

    pub fn burst(&self) -> Option<&IndirectBurst> {
        self.burst.as_ref()
    }

    pub fn start(&mut self, burst: IndirectBurst) -> Result<()> {
        burst.validate()?;
        if burst.index_base % burst.index_width != 0 {
            return Err(Error::Config(format!(
                "index array at {:#x} not aligned to its width",
                burst.index_base
            )));
        }
        if self.is_busy() {
            return Err(Error::Config("indirect stream unit already busy".into()));
        }
        self.next_block = burst.index_base & !(BLOCK as u64 - 1);
        self.index_end = burst.index_base + burst.index_bytes();
        self.gen_next = 0;
        self.received = 0;
        self.packer = Packer {
            per_beat: (self.cfg.bus_width / burst.elem_width) as usize,
            buf: Vec::new(),
        };
        self.burst = Some(burst);
        Ok(())
    }

    pub fn is_busy(&self) -> bool {
        self.burst
            .map(|b| self.received < b.length as u64)
            .unwrap_or(false)
    }

    pub fn port(&mut self) -> &mut Option<PortRequest> {
        &mut self.fetch_out
    }

    pub fn accept_response(&mut self, resp: WideResponse) {
        self.index_resp.push_back(resp);
    }

    pub fn take_beats(&mut self) -> Vec<PackedBeat> {
        std::mem::take(&mut self.beats)
    }

    /// Feeds in-order elements from the downsizer to the packer.
    pub fn pack(&mut self, elems: &[(u64, u64)]) {
        let Some(burst) = self.burst else {
            return;
        };
        let before = self.beats.len();
        for &(seq, v) in elems {
            debug_assert_eq!(seq, self.received);
            self.packer.push(v, &mut self.beats);
            self.received += 1;
            self.stats.elements_packed += 1;
        }
        if self.received == burst.length as u64 {
            self.packer.flush(&mut self.beats);
        }
        self.stats.beats += (self.beats.len() - before) as u64;
    }

    /// Element request generator, index splitter and fetcher, in that order.
    pub fn step(&mut self, _cycle: u64, coal: &mut Coalescer) {
        let Some(burst) = self.burst else {
            return;
        };
        self.generate(&burst, coal);
        self.split(&burst);
        self.fetch(&burst);
    }

    fn generate(&mut self, burst: &IndirectBurst, coal: &mut Coalescer) {
        let n = self.cfg.n_ports;
        if self.serialize {
            let p = (self.gen_next % n as u64) as usize;
            if let Some(&(seq, idx)) = self.index_q[p].front() {
                if seq == self.gen_next && self.offer(burst, coal, seq, idx) {
                    self.index_q[p].pop_front();
                    self.gen_next += 1;
                }
            }
            return;
        }
        for p in 0..n {
            if let Some(&(seq, idx)) = self.index_q[p].front() {
                if self.offer(burst, coal, seq, idx) {
                    self.index_q[p].pop_front();
                }
            }
        }
    }

    fn offer(&mut self, burst: &IndirectBurst, coal: &mut Coalescer, seq: u64, idx: u32) -> bool {
        let ok = coal.push(NarrowRequest {
            seq,
            addr: element_address(burst.elem_base, idx, burst.elem_width),
            width: burst.elem_width,
        });
        if ok {
            self.stats.narrow_generated += 1;
        }
        ok
    }

    fn split(&mut self, burst: &IndirectBurst) {
        let Some(resp) = self.index_resp.pop_front() else {
            return;
        };
        let (addr, seqs) = self
            .inflight
            .pop_front()
            .expect("index response without a matching read");
        debug_assert_eq!(addr, resp.addr);
        let n = self.cfg.n_ports;
        for (p, items) in split_indices(burst, addr, &resp.data, seqs, n)
            .into_iter()
            .enumerate()
        {
            self.reserved[p] -= items.len();
            self.index_q[p].extend(items);
            self.stats.max_index_occupancy = self.stats.max_index_occupancy.max(self.index_q[p].len());
        }
    }

    fn fetch(&mut self, burst: &IndirectBurst) {
        if self.next_block >= self.index_end
            || self.fetch_out.is_some()
            || self.inflight.len() >= self.cfg.prefetch_credit
        {
            return;
        }
        let seqs = index_block_seqs(burst, self.next_block);
        let n = self.cfg.n_ports as u64;
        let mut need = vec![0usize; self.cfg.n_ports];
        for s in seqs.clone() {
            need[(s % n) as usize] += 1;
        }
        let fits = (0..self.cfg.n_ports)
            .all(|p| self.index_q[p].len() + self.reserved[p] + need[p] <= self.cfg.index_queue_depth);
        if !fits {
            return;
        }
        for p in 0..self.cfg.n_ports {
            self.reserved[p] += need[p];
        }
        self.fetch_out = Some(PortRequest {
            req: WideRequest::read(self.next_block, Category::Index, INDEX_STREAM),
            popcount: 0,
        });
        self.inflight.push_back((self.next_block, seqs));
        self.stats.index_reads += 1;
        self.next_block += BLOCK as u64;
    }
}
