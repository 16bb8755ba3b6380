use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use coalesce_sim::adapter::write_event_log;
use coalesce_sim::metrics::{read_csv, render_report, write_csv, CsvRow, Emit};
use coalesce_sim::runner::{execute, load_matrix, sweep, Format, RunMode, RunSpec, SimConfig, Variant};
use coalesce_sim::sparse::{gen_stencil27, write_matrix_market};
use coalesce_sim::Result;

#[derive(Parser)]
#[command(name = "coalesce-sim", version, about = "Indirect stream coalescing simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one configuration and print a CSV row.
    Run {
        /// Matrix Market file or stencil:NXxNYxNZ.
        #[arg(long)]
        matrix: String,
        #[arg(long, default_value = "sell")]
        format: Format,
        #[arg(long, default_value = "mlp")]
        variant: Variant,
        #[arg(long, default_value_t = 256)]
        window: usize,
        #[arg(long)]
        ports: Option<usize>,
        #[arg(long)]
        tile_bytes: Option<usize>,
        /// `stream` measures the gather alone, `spmv` runs the whole system.
        #[arg(long, default_value = "stream")]
        mode: RunMode,
        /// Base configuration; command-line flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the downstream request log as CSV.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a 27-point stencil matrix in Matrix Market format.
    GenStencil {
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        #[arg(long)]
        nz: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every configured run; exits with status 2 if any run failed.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a result CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "summary")]
        emit: Emit,
    },
    /// Print the default configuration file.
    DefaultConfig,
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn main() -> ExitCode {
    match real_main(Cli::parse()) {
        Ok(code) => code,
        Err(coalesce_sim::Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn real_main(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run {
            matrix,
            format,
            variant,
            window,
            ports,
            tile_bytes,
            mode,
            config,
            events,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => SimConfig::load(p)?,
                None => SimConfig::default(),
            };
            if let Some(n) = ports {
                cfg.adapter.isu.n_ports = n;
                cfg.adapter.coalescer.n_ports = n;
            }
            if tile_bytes.is_some() {
                cfg.vps.tile_bytes = tile_bytes;
            }
            cfg.validate()?;
            let spec = RunSpec {
                matrix,
                format,
                variant,
                window: variant.uses_window().then_some(window),
                mode,
            };
            let m = load_matrix(&spec.matrix, format, cfg.runs.slice_height, cfg.runs.cache_dir.as_deref())?;
            let run = execute(0, &spec, &m, &cfg, events.is_some())?;
            if let Some(p) = events {
                write_event_log(BufWriter::new(File::create(p)?), &run.events)?;
            }
            write_csv(output(out.as_ref())?, &[CsvRow::from_report(&run.report)])?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::GenStencil { nx, ny, nz, out } => {
            let m = gen_stencil27(nx, ny, nz)?;
            write_matrix_market(output(out.as_ref())?, &m)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sweep { config, out } => {
            let cfg = SimConfig::load(config)?;
            let rows = sweep(&cfg);
            write_csv(output(out.as_ref())?, &rows)?;
            let failed = rows.iter().filter(|r| r.is_error()).count();
            if failed > 0 {
                eprintln!("{failed} of {} runs failed", rows.len());
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { input, emit } => {
            let rows = read_csv(File::open(input)?)?;
            let peak = SimConfig::default().dram.peak_bytes_per_cycle();
            print!("{}", render_report(&rows, emit, peak));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::DefaultConfig => {
            print!("{}", SimConfig::default().to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}
