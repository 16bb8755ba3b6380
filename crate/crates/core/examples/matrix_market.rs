//! Writes a stencil as Matrix Market, parses it back and converts it.

use std::io::Cursor;

use coalesce_sim::sparse::{coo_to_csr, gen_stencil27, parse_matrix_market, write_matrix_market};

fn main() -> coalesce_sim::Result<()> {
    let original = gen_stencil27(3, 3, 2)?;
    let mut text = Vec::new();
    write_matrix_market(&mut text, &original)?;
    let shown: String = String::from_utf8_lossy(&text).lines().take(5).collect::<Vec<_>>().join("\n");
    println!("{shown}\n...");

    let parsed = parse_matrix_market(Cursor::new(&text))?;
    println!("round trip equal: {}", parsed == original);

    // symmetric inputs are expanded to both triangles
    let sym = "%%MatrixMarket matrix coordinate real symmetric\n3 3 3\n1 1 4.0\n2 1 -1.0\n3 3 2.0\n";
    let m = coo_to_csr(&parse_matrix_market(Cursor::new(sym))?);
    println!("symmetric file: {} stored entries, row 0 = {:?}", m.nnz(), m.row(0));
    Ok(())
}
