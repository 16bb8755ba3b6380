//! Runs a small parameter sweep from an inline configuration and prints
//! the summary table.

use coalesce_sim::metrics::{render_report, write_csv, Emit};
use coalesce_sim::runner::{sweep, SimConfig};

const CONFIG: &str = r#"
[runs]
matrices = ["stencil:8", "stencil:10"]
variants = ["mlpnc", "mlp", "seq"]
windows = [32, 256]
"#;

fn main() -> coalesce_sim::Result<()> {
    let cfg = SimConfig::from_toml(CONFIG)?;
    let rows = sweep(&cfg);
    write_csv(std::io::stdout(), &rows)?;
    println!();
    let peak = cfg.dram.peak_bytes_per_cycle();
    print!("{}", render_report(&rows, Emit::Summary, peak));
    print!("{}", render_report(&rows, Emit::Breakdown, peak));
    Ok(())
}
