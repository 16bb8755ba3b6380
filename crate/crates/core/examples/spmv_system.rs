//! Runs a full SpMV through the LLC baseline and the packed variants.

use coalesce_sim::adapter::AdapterConfig;
use coalesce_sim::dram::{Category, DramConfig};
use coalesce_sim::runner::{default_x, reference_spmv};
use coalesce_sim::sparse::{coo_to_csr, csr_to_sell, gen_stencil27, SparseMatrix};
use coalesce_sim::system::{run_spmv, LlcConfig, SpmvOptions, SpmvSetup, SystemVariant, VpsConfig};

fn main() -> coalesce_sim::Result<()> {
    let n = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(12);
    let m = SparseMatrix::Sell(csr_to_sell(&coo_to_csr(&gen_stencil27(n, n, n)?), 32)?);
    let x = default_x(m.cols());
    let want = reference_spmv(&m, &x);
    let (vps, adapter, dram, llc) = (
        VpsConfig::default(),
        AdapterConfig::default(),
        DramConfig::default(),
        LlcConfig::default(),
    );
    let setup = SpmvSetup {
        vps: &vps,
        adapter: &adapter,
        dram: &dram,
        llc: &llc,
    };

    let mut base = None;
    for v in [SystemVariant::Base, SystemVariant::PACK0, SystemVariant::PACK64, SystemVariant::PACK256] {
        let run = run_spmv(v, &m, &x, &setup, &SpmvOptions::default())?;
        let base_cycles = *base.get_or_insert(run.cycles);
        let err = run.y.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "{:>8}: {:9} cycles ({:5.2}x) indirect {:9} element bytes {:9} max |err| {err:.1e}",
            v.label(),
            run.cycles,
            base_cycles as f64 / run.cycles as f64,
            run.indirect_cycles,
            run.counters.bytes_of(Category::Element)
        );
    }

    let two = run_spmv(
        SystemVariant::Base,
        &m,
        &x,
        &setup,
        &SpmvOptions { repetitions: 2, record_events: false },
    )?;
    for (i, p) in two.passes.iter().enumerate() {
        println!("base pass {}: {} cycles, {} element bytes", i + 1, p.cycles, p.counters.bytes_of(Category::Element));
    }
    Ok(())
}
