//! Indirect stream unit plus coalescer, wired to a DRAM channel.
//!
//! All DRAM clients present at most one pending request through a port
//! register. [`PortArbiter`] picks one per cycle round-robin; index fetches
//! give way to other traffic while the hitmap queue is three quarters full.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::coalescer::{Coalescer, CoalescerConfig, CoalescerStats, Mode, PortRequest};
use crate::dram::{Category, DramChannel, DramConfig, DramCounters, WideResponse};
use crate::error::{Error, Result};
use crate::isu::{IndirectStreamUnit, IsuConfig, IsuStats, PackedBeat};
use crate::streams::IndirectBurst;

/// Cycles without any forward progress before a run is declared stuck.
pub const DEADLOCK_CYCLES: u64 = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub isu: IsuConfig,
    pub coalescer: CoalescerConfig,
}

impl AdapterConfig {
    pub fn variant(mode: Mode, window: usize, n_ports: usize) -> Self {
        Self {
            isu: IsuConfig {
                n_ports,
                ..IsuConfig::default()
            },
            coalescer: CoalescerConfig::new(mode, window, n_ports),
        }
    }

    pub fn with_mode(&self, mode: Mode, window: usize) -> Self {
        let mut c = self.clone();
        c.coalescer.mode = mode;
        c.coalescer.window = window;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.isu.validate()?;
        self.coalescer.validate()?;
        if self.isu.n_ports != self.coalescer.n_ports {
            return Err(Error::Config(format!(
                "isu has {} ports but the coalescer {}",
                self.isu.n_ports, self.coalescer.n_ports
            )));
        }
        Ok(())
    }
}

pub struct Adapter {
    isu: IndirectStreamUnit,
    coal: Coalescer,
    scratch: Vec<(u64, u64)>,
}

impl Adapter {
    pub fn new(cfg: &AdapterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            isu: IndirectStreamUnit::new(cfg.isu.clone(), cfg.coalescer.mode)?,
            coal: Coalescer::new(cfg.coalescer.clone())?,
            scratch: Vec::new(),
        })
    }

    pub fn start(&mut self, burst: IndirectBurst) -> Result<()> {
        self.isu.start(burst)?;
        self.coal.begin_burst(burst.length as u64, burst.elem_width)
    }

    pub fn is_busy(&self) -> bool {
        self.isu.is_busy()
    }

    pub fn step(&mut self, cycle: u64) {
        self.scratch.clear();
        self.coal.pop_ordered(&mut self.scratch);
        self.isu.pack(&self.scratch);
        self.coal.step(cycle);
        self.isu.step(cycle, &mut self.coal);
    }

    pub fn on_response(&mut self, resp: WideResponse) {
        match resp.category {
            Category::Index => self.isu.accept_response(resp),
            Category::Element => self.coal.accept_response(resp),
            c => debug_assert!(false, "adapter got a {} response", c.name()),
        }
    }

    /// Index port then element port.
    pub fn ports(&mut self) -> [&mut Option<PortRequest>; 2] {
        [self.isu.port(), self.coal.port()]
    }

    pub fn index_deprioritized(&self) -> bool {
        let depth = self.coal.config().hitmap_queue_depth;
        self.coal.hitmap_occupancy() * 4 >= depth * 3
    }

    pub fn take_beats(&mut self) -> Vec<PackedBeat> {
        self.isu.take_beats()
    }

    /// Elements delivered so far, for progress tracking.
    pub fn progress(&self) -> u64 {
        self.isu.stats().elements_packed
    }

    pub fn isu_stats(&self) -> &IsuStats {
        self.isu.stats()
    }

    pub fn coalescer_stats(&self) -> &CoalescerStats {
        self.coal.stats()
    }

    pub fn coalescer(&self) -> &Coalescer {
        &self.coal
    }

    pub fn coalescer_mut(&mut self) -> &mut Coalescer {
        &mut self.coal
    }
}

/// One downstream wide request as seen at the channel port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WideEvent {
    pub cycle: u64,
    pub tag: u64,
    pub popcount: u32,
    pub category: Category,
}

pub fn write_event_log<W: Write>(w: W, events: &[WideEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["cycle", "tag", "popcount", "category"])?;
    for e in events {
        out.write_record([
            e.cycle.to_string(),
            format!("{:#x}", e.tag),
            e.popcount.to_string(),
            e.category.name().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Default)]
pub struct PortArbiter {
    next: usize,
    log: Option<Vec<WideEvent>>,
}

impl PortArbiter {
    pub fn new(record: bool) -> Self {
        Self {
            next: 0,
            log: record.then(Vec::new),
        }
    }

    pub fn events(&self) -> &[WideEvent] {
        self.log.as_deref().unwrap_or(&[])
    }

    pub fn take_events(&mut self) -> Vec<WideEvent> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Submits at most one pending request. Ports flagged in `yield_to`
    /// are only served when no other port has work.
    pub fn arbitrate(
        &mut self,
        cycle: u64,
        dram: &mut DramChannel,
        ports: &mut [&mut Option<PortRequest>],
        yield_to: &[bool],
    ) -> Result<bool> {
        if !dram.can_accept() {
            return Ok(false);
        }
        let n = ports.len();
        let strong = (0..n).any(|i| ports[i].is_some() && !yield_to.get(i).copied().unwrap_or(false));
        let pick = (0..n).map(|k| (self.next + k) % n).find(|&i| {
            ports[i].is_some() && (!strong || !yield_to.get(i).copied().unwrap_or(false))
        });
        let Some(i) = pick else {
            return Ok(false);
        };
        let p = ports[i].expect("picked port has a request");
        if !dram.submit(p.req, cycle)? {
            return Ok(false);
        }
        *ports[i] = None;
        self.next = (i + 1) % n;
        if let Some(log) = &mut self.log {
            log.push(WideEvent {
                cycle,
                tag: p.req.addr,
                popcount: p.popcount,
                category: p.req.category,
            });
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, Default)]
pub struct StreamOptions {
    pub record_events: bool,
}

#[derive(Debug, Clone)]
pub struct StreamRun {
    pub cycles: u64,
    /// Cycles spent on each burst, back to back.
    pub burst_cycles: Vec<u64>,
    pub beats: Vec<Vec<PackedBeat>>,
    pub counters: DramCounters,
    pub events: Vec<WideEvent>,
    pub isu: IsuStats,
    pub coalescer: CoalescerStats,
}

impl StreamRun {
    /// Concatenated elements of burst `b`.
    pub fn elements(&self, b: usize) -> Vec<u64> {
        self.beats[b].iter().flat_map(|x| x.elems.iter().copied()).collect()
    }
}

/// Runs the bursts back to back through the adapter, with the adapter as the
/// only channel client (an ideal requestor that always accepts beats).
pub fn run_indirect_stream(
    bursts: &[IndirectBurst],
    image: Vec<(u64, Vec<u8>)>,
    cfg: &AdapterConfig,
    dram_cfg: &DramConfig,
    opts: &StreamOptions,
) -> Result<StreamRun> {
    let mut dram = DramChannel::new(dram_cfg.clone())?;
    dram.load_image(image)?;
    let mut adapter = Adapter::new(cfg)?;
    let mut arb = PortArbiter::new(opts.record_events);
    let mut beats = Vec::with_capacity(bursts.len());
    let mut burst_cycles = Vec::with_capacity(bursts.len());
    let mut next = 0;
    let mut started_at = 0;
    let mut current: Vec<PackedBeat> = Vec::new();
    let mut active = false;
    let mut cycle = 0u64;
    let mut last_progress = (0u64, 0u64);

    loop {
        if !adapter.is_busy() {
            if active {
                current.extend(adapter.take_beats());
                beats.push(std::mem::take(&mut current));
                burst_cycles.push(cycle - started_at);
            }
            if next == bursts.len() {
                break;
            }
            adapter.start(bursts[next])?;
            next += 1;
            active = true;
            started_at = cycle;
        }
        for resp in dram.step(cycle) {
            adapter.on_response(resp);
        }
        adapter.step(cycle);
        current.extend(adapter.take_beats());
        let yield_index = adapter.index_deprioritized();
        arb.arbitrate(cycle, &mut dram, &mut adapter.ports(), &[yield_index, false])?;

        let p = adapter.progress();
        if p != last_progress.0 {
            last_progress = (p, cycle);
        } else if cycle - last_progress.1 > DEADLOCK_CYCLES {
            return Err(Error::Deadlock {
                cycle,
                what: format!("indirect stream stalled after {p} elements"),
            });
        }
        cycle += 1;
    }

    Ok(StreamRun {
        cycles: cycle,
        burst_cycles,
        beats,
        counters: *dram.counters(),
        events: arb.take_events(),
        isu: *adapter.isu_stats(),
        coalescer: *adapter.coalescer_stats(),
    })
}
