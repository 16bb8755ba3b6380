//! Drives the DRAM channel directly with a row-friendly and a row-hostile
//! request pattern.

use coalesce_sim::dram::{Category, DramChannel, DramConfig, WideRequest};

fn drive(addrs: &[u64]) -> coalesce_sim::Result<(u64, u64, u64)> {
    let mut ch = DramChannel::new(DramConfig::default())?;
    let mut next = 0;
    let mut cycle = 0;
    while next < addrs.len() || !ch.is_idle() {
        if next < addrs.len() && ch.submit(WideRequest::read(addrs[next], Category::Element, 1), cycle)? {
            next += 1;
        }
        ch.step(cycle);
        cycle += 1;
    }
    let c = ch.counters();
    Ok((cycle, c.row_hits, c.row_misses))
}

fn main() -> coalesce_sim::Result<()> {
    let cfg = DramConfig::default();
    let n = 512u64;
    let sequential: Vec<u64> = (0..n).map(|i| i * 64).collect();
    // same bank, different row every time
    let stride = cfg.row_bytes * cfg.banks as u64;
    let conflicting: Vec<u64> = (0..n).map(|i| i * stride).collect();
    for (name, addrs) in [("sequential", sequential), ("bank conflicts", conflicting)] {
        let (cycles, hits, misses) = drive(&addrs)?;
        println!(
            "{name:>15}: {cycles:6} cycles, {hits:4} row hits, {misses:4} misses, {:.1} GB/s",
            (n * 64) as f64 / cycles as f64
        );
    }
    println!("peak {:.0} B/cycle", cfg.peak_bytes_per_cycle());
    Ok(())
}
