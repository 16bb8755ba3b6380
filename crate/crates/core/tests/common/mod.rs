#![allow(dead_code)]

use coalesce_sim::adapter::AdapterConfig;
use coalesce_sim::coalescer::Mode;
use coalesce_sim::sparse::{coo_to_csr, csr_to_sell, CooMatrix, SparseMatrix};
use coalesce_sim::streams::IndirectBurst;
use rand::Rng;

pub const X_BASE: u64 = 0x40_0000;
pub const I_BASE: u64 = 0x1000;

/// Random matrix with a mix of banded and scattered columns and some empty
/// rows. Values are small integers so products stay exact.
pub fn random_matrix<R: Rng>(rng: &mut R) -> CooMatrix {
    let rows = rng.gen_range(1..160);
    let cols = rng.gen_range(1..400);
    let mut m = CooMatrix::new(rows, cols);
    for r in 0..rows {
        if rng.gen_bool(0.1) {
            continue;
        }
        let n = rng.gen_range(0..12);
        for _ in 0..n {
            let c = if rng.gen_bool(0.6) {
                let center = r * cols / rows;
                (center + rng.gen_range(0..8)).min(cols - 1)
            } else {
                rng.gen_range(0..cols)
            };
            m.entries.push((r as u32, c as u32, rng.gen_range(-4..=4) as f64));
        }
    }
    m.canonicalize();
    m
}

pub fn random_format<R: Rng>(rng: &mut R, coo: &CooMatrix) -> SparseMatrix {
    let csr = coo_to_csr(coo);
    if rng.gen_bool(0.5) {
        SparseMatrix::Csr(csr)
    } else {
        let h = [1usize, 4, 8, 32][rng.gen_range(0..4)];
        SparseMatrix::Sell(csr_to_sell(&csr, h).unwrap())
    }
}

/// Random adapter configuration with W in {4..256} and N in {1, 2, 4}.
pub fn random_adapter<R: Rng>(rng: &mut R) -> AdapterConfig {
    let n = [1usize, 2, 4][rng.gen_range(0..3)];
    let w = [4usize, 8, 16, 32, 64, 128, 256][rng.gen_range(0..7)].max(n);
    let mode = [Mode::Mlpnc, Mode::Mlp, Mode::Seq][rng.gen_range(0..3)];
    let mut cfg = AdapterConfig::variant(mode, w, n);
    if rng.gen_bool(0.3) {
        cfg.coalescer.regulator_timeout = rng.gen_range(1..100);
        cfg.coalescer.watchdog_timeout = rng.gen_range(1..100);
    }
    if rng.gen_bool(0.2) {
        cfg.isu.index_queue_depth = rng.gen_range(16..64);
        cfg.coalescer.hitmap_queue_depth = rng.gen_range(1..8);
    }
    cfg
}

/// Index trace mixing runs, repeats, and random jumps over `span` elements.
pub fn random_trace<R: Rng>(rng: &mut R, len: usize, span: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(len);
    let mut cur = rng.gen_range(0..span);
    while out.len() < len {
        match rng.gen_range(0..4) {
            0 => cur = rng.gen_range(0..span),
            1 => {}
            _ => cur = (cur + rng.gen_range(1..4)) % span,
        }
        out.push(cur);
    }
    out
}

/// Memory image and burst for gathering `x[idx]`.
pub fn gather_image(idx: &[u32], x: &[f64]) -> (Vec<(u64, Vec<u8>)>, IndirectBurst) {
    let ib: Vec<u8> = idx.iter().flat_map(|v| v.to_le_bytes()).collect();
    let xb: Vec<u8> = x.iter().flat_map(|v| v.to_le_bytes()).collect();
    (
        vec![(I_BASE, ib), (X_BASE, xb)],
        IndirectBurst {
            index_base: I_BASE,
            elem_base: X_BASE,
            length: idx.len(),
            index_width: 4,
            elem_width: 8,
        },
    )
}

pub fn x_for(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i % 11) as f64 - 5.0).collect()
}
