//! Feeds one window of narrow requests into the coalescer and prints the
//! wide accesses it emits next to the greedy grouping.

use coalesce_sim::coalescer::{greedy_groups, Coalescer, CoalescerConfig, Mode, NarrowRequest};
use coalesce_sim::dram::{WideResponse, BLOCK};

fn main() -> coalesce_sim::Result<()> {
    let idx = [0u64, 1, 9, 2, 16, 8, 3, 17];
    let addrs: Vec<u64> = idx.iter().map(|i| 0x1000 + i * 8).collect();
    let w = addrs.len();

    for mode in [Mode::Mlpnc, Mode::Mlp] {
        let mut c = Coalescer::new(CoalescerConfig::new(mode, w, 2))?;
        c.record_emissions();
        c.begin_burst(w as u64, 8)?;
        let mut next = 0;
        let mut out = Vec::new();
        for cycle in 0..100 {
            // upsizer queues are shallow, so feed as space frees up
            while next < w && c.push(NarrowRequest { seq: next as u64, addr: addrs[next], width: 8 }) {
                next += 1;
            }
            c.step(cycle);
            if let Some(p) = c.port().take() {
                c.accept_response(WideResponse {
                    addr: p.req.addr,
                    data: [0; BLOCK],
                    category: p.req.category,
                    stream: p.req.stream,
                    write: false,
                    complete_cycle: cycle,
                });
            }
            c.pop_ordered(&mut out);
        }
        println!("{}: {} wide accesses", c.config().label(), c.emissions().len());
        for e in c.emissions() {
            println!("  block {:#x} slots {:?} hitmap {:#010b}", e.tag, e.slots, e.hitmap_bits());
        }
    }

    let window: Vec<Option<u64>> = addrs.iter().map(|&a| Some(a)).collect();
    println!("greedy grouping:");
    for (tag, slots) in greedy_groups(&window) {
        println!("  block {tag:#x} slots {slots:?}");
    }
    Ok(())
}
