//! Measures gather bandwidth of the indirect stream unit on a stencil for
//! each coalescer mode.

use coalesce_sim::adapter::{run_indirect_stream, AdapterConfig, StreamOptions};
use coalesce_sim::coalescer::Mode;
use coalesce_sim::dram::{Category, DramConfig};
use coalesce_sim::metrics::indirect_bandwidth;
use coalesce_sim::runner::default_x;
use coalesce_sim::sparse::{coo_to_csr, csr_to_sell, gen_stencil27, SparseMatrix};
use coalesce_sim::streams::{spmv_streams, AddressMap};

fn main() -> coalesce_sim::Result<()> {
    let n = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(12);
    let m = SparseMatrix::Sell(csr_to_sell(&coo_to_csr(&gen_stencil27(n, n, n)?), 32)?);
    let x = default_x(m.cols());
    let map = AddressMap::for_matrix(&m);
    let bursts: Vec<_> = spmv_streams(&m, &map, 8192)?.iter().filter_map(|t| t.gather).collect();
    let elems: u64 = bursts.iter().map(|b| b.length as u64).sum();

    println!("stencil {n}^3 SELL, {elems} gathered elements");
    for (mode, w) in [(Mode::Mlpnc, 4), (Mode::Seq, 256), (Mode::Mlp, 64), (Mode::Mlp, 256)] {
        let cfg = AdapterConfig::variant(mode, w, 4);
        let run = run_indirect_stream(
            &bursts,
            map.memory_image(&m, &x),
            &cfg,
            &DramConfig::default(),
            &StreamOptions::default(),
        )?;
        println!(
            "{:>7}: {:8} cycles {:6.2} GB/s {:7} element accesses",
            cfg.coalescer.label(),
            run.cycles,
            indirect_bandwidth(elems * 8, run.cycles),
            run.counters.requests_of(Category::Element)
        );
    }
    Ok(())
}
