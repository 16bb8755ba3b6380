//! Builds a small 27-point stencil and compares its CSR and SELL layouts.

use coalesce_sim::sparse::{coo_to_csr, csr_to_sell, dense_spmv, gen_stencil27, SparseMatrix};

fn main() -> coalesce_sim::Result<()> {
    let coo = gen_stencil27(4, 4, 4)?;
    let csr = coo_to_csr(&coo);
    println!("stencil 4x4x4: {} rows, {} nonzeros", csr.rows, csr.nnz());
    println!("row lengths: min {} max {}", (0..csr.rows).map(|r| csr.row_len(r)).min().unwrap(), csr.max_row_len());

    for h in [1, 8, 32] {
        let sell = csr_to_sell(&csr, h)?;
        println!(
            "SELL-{h}: {} slices, {} packed entries, {} padding",
            sell.num_slices(),
            sell.packed_len(),
            sell.padded_count()
        );
    }

    let x: Vec<f64> = (0..csr.cols).map(|i| i as f64).collect();
    let want = dense_spmv(&coo.to_dense(), &x);
    for m in [SparseMatrix::Csr(csr.clone()), SparseMatrix::Sell(csr_to_sell(&csr, 32)?)] {
        let y = dense_spmv(&m.to_dense(), &x);
        println!("{} dense product matches: {}", m.format_name(), y == want);
    }
    Ok(())
}
