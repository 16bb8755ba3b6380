//! Request coalescer.
//!
//! Narrow element requests enter `W` request queues through the upsizer
//! (sequence `s` lands in queue `s mod W`). The regulator hands complete
//! windows of the `W` oldest requests to the request watcher, or a partial
//! window after a timeout. The watcher keeps a single CSHR: each cycle it
//! absorbs every valid window entry that falls in the CSHR's block, and when
//! misses remain it issues the block downstream together with a metadata
//! record (hitmap + per-slot offsets). The next tag comes from the oldest
//! remaining miss.
//!
//! On the way back the response splitter extracts each hit's element from
//! the 64-byte block into the slot's element queue, and the downsizer drains
//! element queues strictly in sequence order.
//!
//! The CSHR outlives its window: once a window is exhausted the CSHR waits
//! for the next one, which may keep adding hits to the same block. It is
//! flushed by a miss, by the watchdog, or at end of burst. A slot already set
//! in the hitmap cannot be hit again by a later window's entry.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dram::{Category, StreamId, WideRequest, WideResponse, BLOCK};
use crate::error::{Error, Result};

/// DRAM stream used for coalesced element reads.
pub const ELEMENT_STREAM: StreamId = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One wide access per narrow request.
    Mlpnc,
    /// N-port parallel coalescer.
    Mlp,
    /// Same window, requests serialized to one per cycle.
    Seq,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mlpnc => "mlpnc",
            Mode::Mlp => "mlp",
            Mode::Seq => "seq",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlpnc" => Ok(Mode::Mlpnc),
            "mlp" => Ok(Mode::Mlp),
            "seq" => Ok(Mode::Seq),
            other => Err(Error::Config(format!("unknown coalescer mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoalescerConfig {
    pub mode: Mode,
    pub window: usize,
    pub n_ports: usize,
    pub upsizer_queue_depth: usize,
    pub downsizer_queue_depth: usize,
    pub hitmap_queue_depth: usize,
    /// Defaults to `2048 / W` when unset.
    pub offsets_queue_depth: Option<usize>,
    pub regulator_timeout: u64,
    pub watchdog_timeout: u64,
}

impl Default for CoalescerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mlp,
            window: 256,
            n_ports: 4,
            upsizer_queue_depth: 2,
            downsizer_queue_depth: 2,
            hitmap_queue_depth: 128,
            offsets_queue_depth: None,
            regulator_timeout: 64,
            watchdog_timeout: 64,
        }
    }
}

impl CoalescerConfig {
    pub fn new(mode: Mode, window: usize, n_ports: usize) -> Self {
        Self {
            mode,
            window,
            n_ports,
            ..Self::default()
        }
    }

    /// Ports seen by the coalescer: one when serialized.
    pub fn effective_ports(&self) -> usize {
        match self.mode {
            Mode::Seq => 1,
            _ => self.n_ports,
        }
    }

    /// Window size in effect. Without coalescing the queues only need to
    /// absorb one request per port.
    pub fn effective_window(&self) -> usize {
        match self.mode {
            Mode::Mlpnc => self.n_ports,
            _ => self.window,
        }
    }

    pub fn offsets_depth(&self) -> usize {
        self.offsets_queue_depth
            .unwrap_or((2048 / self.effective_window()).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("coalescer: {m}")));
        if self.n_ports == 0 || !self.n_ports.is_power_of_two() {
            return bad(format!("port count {} is not a power of two", self.n_ports));
        }
        if self.mode != Mode::Mlpnc {
            if self.window == 0 || !self.window.is_power_of_two() {
                return bad(format!("window {} is not a power of two", self.window));
            }
            if self.window < self.effective_ports() {
                return bad(format!(
                    "window {} smaller than port count {}",
                    self.window,
                    self.effective_ports()
                ));
            }
            if self.effective_window() > u16::MAX as usize {
                return bad("window too large".into());
            }
        }
        if self.upsizer_queue_depth == 0
            || self.downsizer_queue_depth == 0
            || self.hitmap_queue_depth == 0
            || self.offsets_depth() == 0
        {
            return bad("queue depths must be positive".into());
        }
        if self.regulator_timeout == 0 || self.watchdog_timeout == 0 {
            return bad("timeouts must be positive".into());
        }
        Ok(())
    }

    /// Label used in reports, e.g. `MLP256`.
    pub fn label(&self) -> String {
        match self.mode {
            Mode::Mlpnc => "MLPnc".to_string(),
            Mode::Mlp => format!("MLP{}", self.window),
            Mode::Seq => format!("SEQ{}", self.window),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NarrowRequest {
    pub seq: u64,
    pub addr: u64,
    pub width: u64,
}

impl NarrowRequest {
    pub fn block(&self) -> u64 {
        self.addr & !(BLOCK as u64 - 1)
    }

    pub fn offset(&self) -> u8 {
        (self.addr & (BLOCK as u64 - 1)) as u8
    }
}

/// Upsizer queue for `seq` arriving on port `seq mod n`.
pub fn upsizer_queue(seq: u64, n_ports: usize, window: usize) -> usize {
    let n = n_ports as u64;
    let per_port = (window / n_ports) as u64;
    let port = seq % n;
    (port + n * ((seq / n) % per_port)) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CshrStatus {
    /// No tag adopted.
    Empty,
    /// Tag adopted, hits accumulating.
    Coalescing,
}

#[derive(Debug, Clone)]
pub struct Cshr {
    tag: Option<u64>,
    hitmap: Vec<bool>,
    hits: Vec<(u16, u64)>,
    offsets: Vec<u8>,
}

impl Cshr {
    fn new(window: usize) -> Self {
        Self {
            tag: None,
            hitmap: vec![false; window],
            hits: Vec::new(),
            offsets: Vec::new(),
        }
    }

    pub fn status(&self) -> CshrStatus {
        if self.tag.is_some() {
            CshrStatus::Coalescing
        } else {
            CshrStatus::Empty
        }
    }

    pub fn tag(&self) -> Option<u64> {
        self.tag
    }

    pub fn popcount(&self) -> usize {
        self.hits.len()
    }

    fn clear(&mut self) {
        for &(slot, _) in &self.hits {
            self.hitmap[slot as usize] = false;
        }
        self.hits.clear();
        self.offsets.clear();
        self.tag = None;
    }
}

/// Metadata pushed with every wide access: the window slots it feeds (with
/// the model-only sequence numbers used for assertions) and their offsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaRecord {
    pub tag: u64,
    pub slots: Vec<u16>,
    pub offsets: Vec<u8>,
}

impl MetaRecord {
    pub fn popcount(&self) -> usize {
        self.slots.len()
    }

    pub fn hitmap_bits(&self) -> u128 {
        self.slots.iter().fold(0u128, |acc, &s| acc | (1u128 << (s % 128)))
    }
}

/// A wide access waiting for the downstream port, with its popcount.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRequest {
    pub req: WideRequest,
    pub popcount: u32,
}

/// Extracts the `width`-byte element at `offset` of a block.
pub fn extract_element(block: &[u8; BLOCK], offset: u8, width: u64) -> u64 {
    let o = offset as usize;
    match width {
        8 => u64::from_le_bytes(block[o..o + 8].try_into().unwrap()),
        4 => u32::from_le_bytes(block[o..o + 4].try_into().unwrap()) as u64,
        _ => unreachable!("element width validated at burst start"),
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CoalescerStats {
    pub windows: u64,
    pub partial_windows: u64,
    pub wide_issued: u64,
    pub narrow_absorbed: u64,
    pub watchdog_flushes: u64,
    pub max_upsizer_occupancy: usize,
    pub max_element_occupancy: usize,
    pub max_hitmap_occupancy: usize,
    pub max_offsets_occupancy: usize,
}

pub struct Coalescer {
    cfg: CoalescerConfig,
    w: usize,
    n: usize,
    offsets_depth: usize,

    req_queues: Vec<VecDeque<NarrowRequest>>,
    nonempty: usize,
    reg_timer: u64,

    window: Vec<Option<NarrowRequest>>,
    remaining: Vec<u16>,
    window_active: bool,
    cshr: Cshr,
    watchdog: u64,
    out: Option<PortRequest>,

    hitmap_q: VecDeque<Vec<(u16, u64)>>,
    offsets_q: Vec<VecDeque<u8>>,
    responses: VecDeque<WideResponse>,
    elem_q: Vec<VecDeque<(u64, u64)>>,

    elem_width: u64,
    burst_len: u64,
    pushed: u64,
    absorbed: u64,
    next_out: u64,

    emitted: Option<Vec<MetaRecord>>,
    stats: CoalescerStats,
}

impl Coalescer {
    pub fn new(cfg: CoalescerConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.effective_window();
        Ok(Self {
            w,
            n: cfg.effective_ports(),
            offsets_depth: cfg.offsets_depth(),
            req_queues: vec![VecDeque::new(); w],
            nonempty: 0,
            reg_timer: 0,
            window: vec![None; w],
            remaining: Vec::with_capacity(w),
            window_active: false,
            cshr: Cshr::new(w),
            watchdog: 0,
            out: None,
            hitmap_q: VecDeque::new(),
            offsets_q: vec![VecDeque::new(); w],
            responses: VecDeque::new(),
            elem_q: vec![VecDeque::new(); w],
            elem_width: 8,
            burst_len: 0,
            pushed: 0,
            absorbed: 0,
            next_out: 0,
            emitted: None,
            stats: CoalescerStats::default(),
            cfg,
        })
    }

    pub fn config(&self) -> &CoalescerConfig {
        &self.cfg
    }

    pub fn window_size(&self) -> usize {
        self.w
    }

    pub fn ports(&self) -> usize {
        self.n
    }

    pub fn stats(&self) -> &CoalescerStats {
        &self.stats
    }

    pub fn cshr(&self) -> &Cshr {
        &self.cshr
    }

    /// Keeps a copy of every emitted metadata record.
    pub fn record_emissions(&mut self) {
        self.emitted = Some(Vec::new());
    }

    pub fn emissions(&self) -> &[MetaRecord] {
        self.emitted.as_deref().unwrap_or(&[])
    }

    /// Starts a burst of `len` requests. The previous burst must be drained.
    pub fn begin_burst(&mut self, len: u64, elem_width: u64) -> Result<()> {
        if !self.is_drained() {
            return Err(Error::Config("coalescer still busy with a burst".into()));
        }
        self.burst_len = len;
        self.elem_width = elem_width;
        self.pushed = 0;
        self.absorbed = 0;
        self.next_out = 0;
        Ok(())
    }

    pub fn is_drained(&self) -> bool {
        self.next_out == self.burst_len
            && self.out.is_none()
            && self.hitmap_q.is_empty()
            && self.cshr.hits.is_empty()
    }

    pub fn delivered(&self) -> u64 {
        self.next_out
    }

    /// Upsizer intake. Returns `false` (backpressure) when the target queue
    /// is full.
    pub fn push(&mut self, req: NarrowRequest) -> bool {
        let q = upsizer_queue(req.seq, self.n, self.w);
        let depth = self.cfg.upsizer_queue_depth;
        let queue = &mut self.req_queues[q];
        if queue.len() >= depth {
            return false;
        }
        if queue.is_empty() {
            self.nonempty += 1;
        }
        queue.push_back(req);
        self.stats.max_upsizer_occupancy = self.stats.max_upsizer_occupancy.max(queue.len());
        self.pushed += 1;
        true
    }

    pub fn can_push(&self, seq: u64) -> bool {
        self.req_queues[upsizer_queue(seq, self.n, self.w)].len() < self.cfg.upsizer_queue_depth
    }

    /// Pending downstream access, if any.
    pub fn port(&mut self) -> &mut Option<PortRequest> {
        &mut self.out
    }

    pub fn hitmap_occupancy(&self) -> usize {
        self.hitmap_q.len()
    }

    pub fn accept_response(&mut self, resp: WideResponse) {
        self.responses.push_back(resp);
    }

    /// One cycle of the return path, watcher and regulator.
    pub fn step(&mut self, _cycle: u64) {
        self.split_step();
        self.watcher_step();
        self.regulator_step();
    }

    /// Downsizer: moves up to N elements out in sequence order.
    pub fn pop_ordered(&mut self, out: &mut Vec<(u64, u64)>) {
        for _ in 0..self.n {
            if self.next_out >= self.burst_len {
                break;
            }
            let slot = (self.next_out % self.w as u64) as usize;
            match self.elem_q[slot].front() {
                Some(&(seq, v)) if seq == self.next_out => {
                    self.elem_q[slot].pop_front();
                    out.push((seq, v));
                    self.next_out += 1;
                }
                Some(&(seq, _)) => {
                    debug_assert!(false, "slot {slot} holds seq {seq}, expected {}", self.next_out);
                    break;
                }
                None => break,
            }
        }
    }

    fn regulator_step(&mut self) {
        if self.window_active {
            return;
        }
        if self.nonempty == 0 {
            self.reg_timer = 0;
            return;
        }
        let full = self.nonempty == self.w;
        if !full {
            self.reg_timer += 1;
            let tail = self.pushed == self.burst_len;
            if self.reg_timer < self.cfg.regulator_timeout && !tail {
                return;
            }
            self.stats.partial_windows += 1;
        }
        self.reg_timer = 0;
        self.remaining.clear();
        for slot in 0..self.w {
            if let Some(r) = self.req_queues[slot].pop_front() {
                if self.req_queues[slot].is_empty() {
                    self.nonempty -= 1;
                }
                self.window[slot] = Some(r);
                self.remaining.push(slot as u16);
            }
        }
        self.window_active = true;
        self.watchdog = 0;
        self.stats.windows += 1;
    }

    fn watcher_step(&mut self) {
        if self.window_active {
            if self.cshr.tag.is_none() {
                let first = self.remaining[0] as usize;
                self.cshr.tag = Some(self.window[first].unwrap().block());
            }
            let tag = self.cshr.tag.unwrap();
            let single = self.cfg.mode == Mode::Mlpnc;
            if !single || self.cshr.hits.is_empty() {
                let mut taken = 0;
                let window = &mut self.window;
                let cshr = &mut self.cshr;
                self.remaining.retain(|&slot| {
                    if single && taken == 1 {
                        return true;
                    }
                    let r = window[slot as usize].unwrap();
                    if r.block() == tag && !cshr.hitmap[slot as usize] {
                        cshr.hitmap[slot as usize] = true;
                        cshr.hits.push((slot, r.seq));
                        cshr.offsets.push(r.offset());
                        window[slot as usize] = None;
                        taken += 1;
                        false
                    } else {
                        true
                    }
                });
                self.absorbed += taken;
            }
            if !self.remaining.is_empty() || single {
                if self.try_issue() && !self.remaining.is_empty() {
                    let next = self.remaining[0] as usize;
                    self.cshr.tag = Some(self.window[next].unwrap().block());
                }
            }
            if self.remaining.is_empty() {
                self.window_active = false;
                self.watchdog = 0;
            }
        } else if !self.cshr.hits.is_empty() {
            self.watchdog += 1;
            if self.absorbed == self.burst_len {
                self.try_issue();
            } else if self.watchdog >= self.cfg.watchdog_timeout && self.try_issue() {
                self.stats.watchdog_flushes += 1;
            }
        }
    }

    fn try_issue(&mut self) -> bool {
        if self.cshr.hits.is_empty() {
            self.cshr.tag = None;
            return true;
        }
        if self.out.is_some() || self.hitmap_q.len() >= self.cfg.hitmap_queue_depth {
            return false;
        }
        if self
            .cshr
            .hits
            .iter()
            .any(|&(slot, _)| self.offsets_q[slot as usize].len() >= self.offsets_depth)
        {
            return false;
        }
        let tag = self.cshr.tag.expect("hits imply a tag");
        for (&(slot, _), &off) in self.cshr.hits.iter().zip(&self.cshr.offsets) {
            let q = &mut self.offsets_q[slot as usize];
            q.push_back(off);
            self.stats.max_offsets_occupancy = self.stats.max_offsets_occupancy.max(q.len());
        }
        if let Some(log) = &mut self.emitted {
            log.push(MetaRecord {
                tag,
                slots: self.cshr.hits.iter().map(|h| h.0).collect(),
                offsets: self.cshr.offsets.clone(),
            });
        }
        let popcount = self.cshr.hits.len() as u32;
        self.hitmap_q.push_back(self.cshr.hits.clone());
        self.stats.max_hitmap_occupancy = self.stats.max_hitmap_occupancy.max(self.hitmap_q.len());
        self.stats.wide_issued += 1;
        self.stats.narrow_absorbed += popcount as u64;
        self.out = Some(PortRequest {
            req: WideRequest::read(tag, Category::Element, ELEMENT_STREAM),
            popcount,
        });
        self.cshr.clear();
        true
    }

    fn split_step(&mut self) {
        let Some(resp) = self.responses.front() else {
            return;
        };
        let meta = self
            .hitmap_q
            .front_mut()
            .expect("element response without metadata");
        let depth = self.cfg.downsizer_queue_depth;
        let (elem_q, offsets_q) = (&mut self.elem_q, &mut self.offsets_q);
        let width = self.elem_width;
        meta.retain(|&(slot, seq)| {
            let q = &mut elem_q[slot as usize];
            if q.len() >= depth {
                return true;
            }
            let off = offsets_q[slot as usize]
                .pop_front()
                .expect("offset recorded at issue");
            q.push_back((seq, extract_element(&resp.data, off, width)));
            false
        });
        let occ = self.elem_q.iter().map(VecDeque::len).max().unwrap_or(0);
        self.stats.max_element_occupancy = self.stats.max_element_occupancy.max(occ);
        if meta.is_empty() {
            self.hitmap_q.pop_front();
            self.responses.pop_front();
        }
    }
}

/// Brute-force grouping of one window: take the lowest-index entry's block,
/// collect every entry in that block, repeat. Returns `(tag, slots)` pairs in
/// emission order.
pub fn greedy_groups(window: &[Option<u64>]) -> Vec<(u64, Vec<u16>)> {
    let mut left: Vec<(u16, u64)> = window
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|a| (i as u16, a & !(BLOCK as u64 - 1))))
        .collect();
    let mut out = Vec::new();
    while let Some(&(_, tag)) = left.first() {
        let (hit, miss): (Vec<_>, Vec<_>) = left.into_iter().partition(|e| e.1 == tag);
        out.push((tag, hit.into_iter().map(|e| e.0).collect()));
        left = miss;
    }
    out
}
