//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use coalesce_sim::adapter::{run_indirect_stream, StreamOptions};
use coalesce_sim::coalescer::{greedy_groups, Coalescer, CoalescerConfig, Mode, NarrowRequest};
use coalesce_sim::dram::{Category, DramConfig, WideResponse, BLOCK};
use coalesce_sim::metrics::MetricsLedger;
use coalesce_sim::runner::{execute, load_matrix, Format, RunMode, RunSpec, SimConfig, Variant};
use coalesce_sim::sparse::{dense_spmv, SparseMatrix};
use coalesce_sim::streams::{gather_oracle, spmv_streams, AddressMap};
use coalesce_sim::system::{run_spmv, LlcConfig, SpmvOptions, SpmvRun, SpmvSetup, SystemVariant, VpsConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STENCILS: [usize; 3] = [16, 24, 32];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn largest_group(m: &SparseMatrix) -> usize {
    m.pointers().windows(2).map(|w| (w[1] - w[0]) as usize).max().unwrap_or(0)
}

fn functional_case(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coo = common::random_matrix(&mut rng);
    let m = common::random_format(&mut rng, &coo);
    let x = common::x_for(m.cols());
    let adapter = common::random_adapter(&mut rng);
    let group = largest_group(&m).max(1);
    let tile_entries = rng.gen_range(group..=group.max(2048));

    // gather stream
    let map = AddressMap::for_matrix(&m);
    let tiles = spmv_streams(&m, &map, tile_entries).map_err(|e| e.to_string())?;
    let bursts: Vec<_> = tiles.iter().filter_map(|t| t.gather).collect();
    let run = run_indirect_stream(
        &bursts,
        map.memory_image(&m, &x),
        &adapter,
        &DramConfig::default(),
        &StreamOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    for (b, t) in tiles.iter().filter(|t| t.gather.is_some()).enumerate() {
        let want = gather_oracle(&x, &m.col_idx()[t.packed.clone()]).map_err(|e| e.to_string())?;
        let got: Vec<f64> = run.elements(b).into_iter().map(f64::from_bits).collect();
        if got.len() != want.len() || got.iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("seed {seed}: burst {b} gather mismatch ({})", adapter.coalescer.label()));
        }
    }

    // whole SpMV
    let variants = [
        SystemVariant::Base,
        SystemVariant::PACK0,
        SystemVariant::PACK64,
        SystemVariant::PACK256,
        SystemVariant::Pack {
            mode: Mode::Seq,
            window: adapter.coalescer.window,
        },
        SystemVariant::Pack {
            mode: Mode::Mlp,
            window: adapter.coalescer.window,
        },
    ];
    let variant = variants[rng.gen_range(0..variants.len())];
    let vps = VpsConfig {
        tile_bytes: Some((tile_entries * 8).min(VpsConfig::default().partition_bytes())),
        ..VpsConfig::default()
    };
    let setup = SpmvSetup {
        vps: &vps,
        adapter: &adapter,
        dram: &DramConfig::default(),
        llc: &LlcConfig::default(),
    };
    let out = run_spmv(variant, &m, &x, &setup, &SpmvOptions::default()).map_err(|e| e.to_string())?;
    let want = dense_spmv(&m.to_dense(), &x);
    for (r, (a, b)) in out.y.iter().zip(&want).enumerate() {
        if (a - b).abs() > 1e-12 * b.abs().max(1.0) {
            return Err(format!("seed {seed}: y[{r}] = {a}, want {b} ({})", variant.label()));
        }
    }
    Ok(())
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let failures: Vec<String> = (0..200).filter_map(|s| functional_case(s).err()).collect();
    let secs = t.elapsed();
    let pass = failures.is_empty() && secs < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "200 random gather + SpMV cases match their oracles ({} failures) in {:.1}s{}",
            failures.len(),
            secs.as_secs_f64(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn conservation_case(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
    let cfg = common::random_adapter(&mut rng);
    let span = rng.gen_range(8..2000);
    let len = rng.gen_range(1..600);
    let idx = common::random_trace(&mut rng, len, span);
    let x = common::x_for(span as usize);
    let (img, burst) = common::gather_image(&idx, &x);
    let run = run_indirect_stream(
        &[burst],
        img,
        &cfg,
        &DramConfig::default(),
        &StreamOptions { record_events: true },
    )
    .map_err(|e| format!("seed {seed}: {e}"))?;
    let label = cfg.coalescer.label();
    let popsum: u64 = run
        .events
        .iter()
        .filter(|e| e.category == Category::Element)
        .map(|e| e.popcount as u64)
        .sum();
    if popsum != len as u64 {
        return Err(format!("seed {seed} {label}: popcount sum {popsum} != {len}"));
    }
    let ledger = MetricsLedger::new(run.cycles, run.cycles, &run.counters, len as u64, 8, 1, 32.0);
    ledger.check_closure().map_err(|e| format!("seed {seed}: {e}"))?;
    let elem_events = run.events.iter().filter(|e| e.category == Category::Element).count() as u64;
    if elem_events != ledger.wide_elem_accesses {
        return Err(format!("seed {seed}: event log and counters disagree"));
    }
    let c = &cfg.coalescer;
    let s = &run.coalescer;
    let limits = [
        ("upsizer", s.max_upsizer_occupancy, c.upsizer_queue_depth),
        ("element", s.max_element_occupancy, c.downsizer_queue_depth),
        ("hitmap", s.max_hitmap_occupancy, c.hitmap_queue_depth),
        ("offsets", s.max_offsets_occupancy, c.offsets_depth()),
        ("index", run.isu.max_index_occupancy, cfg.isu.index_queue_depth),
    ];
    for (name, seen, depth) in limits {
        if seen > depth {
            return Err(format!("seed {seed} {label}: {name} queue reached {seen} > {depth}"));
        }
    }
    let got: Vec<u64> = run.elements(0);
    let want: Vec<u64> = idx.iter().map(|&i| x[i as usize].to_bits()).collect();
    if got != want {
        return Err(format!("seed {seed} {label}: output order or data wrong"));
    }
    Ok(())
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let failures: Vec<String> = (0..1000).filter_map(|s| conservation_case(s).err()).collect();
    let secs = t.elapsed();
    outcome(
        failures.is_empty() && secs < Duration::from_secs(120),
        format!(
            "1000 random traces conserve requests, close the ledger and respect queue depths ({} failures) in {:.1}s{}",
            failures.len(),
            secs.as_secs_f64(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

struct StreamResults {
    /// (stencil size, format) -> gbps / coalesce rate per variant label.
    rows: Vec<(usize, Format, String, f64, Option<f64>)>,
}

impl StreamResults {
    fn get(&self, n: usize, f: Format, label: &str) -> (f64, Option<f64>) {
        let r = self
            .rows
            .iter()
            .find(|r| r.0 == n && r.1 == f && r.2 == label)
            .unwrap_or_else(|| panic!("missing {label} for {n}^3"));
        (r.3, r.4)
    }
}

fn stream_results(cfg: &SimConfig) -> Result<StreamResults, String> {
    let mut rows = Vec::new();
    for n in STENCILS {
        for format in [Format::Sell, Format::Csr] {
            let spec = format!("stencil:{n}x{n}x{n}");
            let m = load_matrix(&spec, format, 32, None).map_err(|e| e.to_string())?;
            for (variant, window, label) in [
                (Variant::Mlpnc, None, "MLPnc"),
                (Variant::Mlp, Some(64), "MLP64"),
                (Variant::Mlp, Some(256), "MLP256"),
                (Variant::Seq, Some(256), "SEQ256"),
            ] {
                let rs = RunSpec {
                    matrix: spec.clone(),
                    format,
                    variant,
                    window,
                    mode: RunMode::Stream,
                };
                let out = execute(0, &rs, &m, cfg, false).map_err(|e| format!("{spec} {label}: {e}"))?;
                let l = &out.report.ledger;
                rows.push((n, format, label.to_string(), l.indirect_gbps(), l.coalesce_rate()));
            }
        }
    }
    Ok(StreamResults { rows })
}

fn criterion_3(r: &StreamResults, elapsed: Duration) -> Outcome {
    let vals: Vec<(usize, f64)> = STENCILS.iter().map(|&n| (n, r.get(n, Format::Sell, "MLPnc").0)).collect();
    let pass = vals.iter().all(|&(_, g)| (2.0..=4.0).contains(&g)) && elapsed < Duration::from_secs(300);
    outcome(
        pass,
        format!(
            "MLPnc SELL indirect bandwidth in [2.0, 4.0] GB/s: {}",
            vals.iter().map(|(n, g)| format!("{n}^3={g:.2}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn criterion_4(r: &StreamResults) -> Outcome {
    let ratios: Vec<(usize, f64)> = STENCILS
        .iter()
        .map(|&n| (n, r.get(n, Format::Sell, "MLP256").0 / r.get(n, Format::Sell, "MLPnc").0))
        .collect();
    outcome(
        ratios.iter().all(|&(_, x)| x >= 5.0),
        format!(
            "MLP256 / MLPnc >= 5x: {}",
            ratios.iter().map(|(n, x)| format!("{n}^3={x:.2}x")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn criterion_5(r: &StreamResults) -> Outcome {
    let mut seq_max: f64 = 0.0;
    let mut ratios = Vec::new();
    for n in STENCILS {
        for f in [Format::Sell, Format::Csr] {
            let seq = r.get(n, f, "SEQ256").0;
            seq_max = seq_max.max(seq);
            ratios.push((n, f, r.get(n, f, "MLP256").0 / seq));
        }
    }
    let pass = seq_max <= 8.0 && ratios.iter().all(|r| r.2 >= 1.5);
    outcome(
        pass,
        format!(
            "SEQ256 <= 8 GB/s (max {seq_max:.2}); MLP256 / SEQ256 >= 1.5x: {}",
            ratios
                .iter()
                .map(|(n, f, x)| format!("{n}^3/{}={x:.2}x", f.name()))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn spmv(variant: SystemVariant, m: &SparseMatrix, cfg: &SimConfig, reps: usize) -> SpmvRun {
    let x = coalesce_sim::runner::default_x(m.cols());
    let setup = SpmvSetup {
        vps: &cfg.vps,
        adapter: &cfg.adapter,
        dram: &cfg.dram,
        llc: &cfg.llc,
    };
    run_spmv(
        variant,
        m,
        &x,
        &setup,
        &SpmvOptions {
            repetitions: reps,
            record_events: false,
        },
    )
    .expect("spmv run")
}

struct SpmvResults {
    /// (n, pack0, pack64, pack256)
    runs: Vec<(usize, SpmvRun, SpmvRun, SpmvRun)>,
    base32: SpmvRun,
}

fn spmv_results(cfg: &SimConfig) -> SpmvResults {
    let mut runs = Vec::new();
    let mut base32 = None;
    for n in STENCILS {
        let m = load_matrix(&format!("stencil:{n}x{n}x{n}"), Format::Sell, 32, None).unwrap();
        runs.push((
            n,
            spmv(SystemVariant::PACK0, &m, cfg, 1),
            spmv(SystemVariant::PACK64, &m, cfg, 1),
            spmv(SystemVariant::PACK256, &m, cfg, 1),
        ));
        if n == 32 {
            base32 = Some(spmv(SystemVariant::Base, &m, cfg, 1));
        }
    }
    SpmvResults {
        runs,
        base32: base32.expect("32^3 is in the benchmark set"),
    }
}

fn criterion_6(s: &SpmvResults, r: &StreamResults) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (n, p0, p64, p256) in &s.runs {
        let (a, b, c) = (p256.indirect_cycles, p64.indirect_cycles, p0.indirect_cycles);
        let rate = |l| r.get(*n, Format::Sell, l).1.unwrap_or(0.0);
        let (r256, r64, rnc) = (rate("MLP256"), rate("MLP64"), rate("MLPnc"));
        ok &= a <= b && b <= c && r256 >= r64 && r64 >= rnc;
        parts.push(format!(
            "{n}^3 time {a}<={b}<={c} rate {r256:.3}>={r64:.3}>={rnc:.3}"
        ));
    }
    outcome(ok, format!("window monotonicity: {}", parts.join("; ")))
}

fn criterion_7(s: &SpmvResults) -> Outcome {
    let (_, p0, _, p256) = s.runs.iter().find(|r| r.0 == 32).expect("32^3 run");
    let pack = p0.cycles as f64 / p256.cycles as f64;
    let base = s.base32.cycles as f64 / p0.cycles as f64;
    outcome(
        pack >= 2.0 && base > 1.0,
        format!("32^3 SpMV speedup pack256/pack0 = {pack:.2}x (>= 2), pack0/base = {base:.2}x (> 1)"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = 0;
    let mut first = None;
    for case in 0..500 {
        let w = [4usize, 8, 16, 32, 64, 128, 256][rng.gen_range(0..7)];
        let n = [1usize, 2, 4][rng.gen_range(0..3)];
        let mode = if rng.gen_bool(0.5) { Mode::Mlp } else { Mode::Seq };
        let blocks = rng.gen_range(1..=w as u64);
        let addrs: Vec<u64> = (0..w)
            .map(|_| 0x8000 + rng.gen_range(0..blocks) * 64 + rng.gen_range(0..8) * 8)
            .collect();
        let mut c = Coalescer::new(CoalescerConfig::new(mode, w, n)).unwrap();
        c.record_emissions();
        c.begin_burst(w as u64, 8).unwrap();
        for (s, &a) in addrs.iter().enumerate() {
            assert!(c.push(NarrowRequest {
                seq: s as u64,
                addr: a,
                width: 8
            }));
        }
        let mut out = Vec::new();
        for cycle in 0..(8 * w as u64 + 64) {
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
        let got: Vec<(u64, Vec<u16>)> = c.emissions().iter().map(|e| (e.tag, e.slots.clone())).collect();
        let window: Vec<Option<u64>> = addrs.iter().map(|&a| Some(a)).collect();
        let offsets_ok = c.emissions().iter().all(|e| {
            e.slots
                .iter()
                .zip(&e.offsets)
                .all(|(&s, &o)| addrs[s as usize] == e.tag + o as u64)
        });
        if got != greedy_groups(&window) || !offsets_ok {
            failures += 1;
            first.get_or_insert(case);
        }
    }
    outcome(
        failures == 0,
        format!(
            "500 random windows match the greedy grouping oracle ({failures} mismatches{})",
            first.map(|c| format!(", first case {c}")).unwrap_or_default()
        ),
    )
}

fn criterion_9(cfg: &SimConfig) -> (Option<Outcome>, String) {
    let Ok(path) = std::env::var("AF_SHELL10_MTX") else {
        return (None, "af_shell10 not provided (set AF_SHELL10_MTX to a .mtx path)".into());
    };
    let run = || -> coalesce_sim::Result<(f64, f64)> {
        let m = load_matrix(&path, Format::Sell, 32, None)?;
        let spec = RunSpec {
            matrix: path.clone(),
            format: Format::Sell,
            variant: Variant::Mlp,
            window: Some(256),
            mode: RunMode::Stream,
        };
        let out = execute(0, &spec, &m, cfg, false)?;
        let l = &out.report.ledger;
        Ok((l.bytes_of(Category::Index) as f64 / l.cycles as f64, l.indirect_gbps()))
    };
    match run() {
        Ok((index, gather)) => (
            Some(outcome(
                true,
                format!(
                    "af_shell10 MLP256 index-fetch bandwidth {index:.2} GB/s (reference 13.2 GB/s, deviation {:+.1}%), gather {gather:.2} GB/s",
                    (index / 13.2 - 1.0) * 100.0
                ),
            )),
            String::new(),
        ),
        Err(e) => (Some(outcome(false, format!("af_shell10 run failed: {e}"))), String::new()),
    }
}

fn main() -> ExitCode {
    let cfg = SimConfig::default();
    let mut results: Vec<(u32, Outcome)> = Vec::new();

    results.push((1, criterion_1()));
    results.push((2, criterion_2()));
    let t = Instant::now();
    match stream_results(&cfg) {
        Ok(streams) => {
            results.push((3, criterion_3(&streams, t.elapsed())));
            results.push((4, criterion_4(&streams)));
            results.push((5, criterion_5(&streams)));
            let sp = spmv_results(&cfg);
            results.push((6, criterion_6(&sp, &streams)));
            results.push((7, criterion_7(&sp)));
        }
        Err(e) => {
            for c in 3..=7 {
                results.push((c, outcome(false, format!("benchmark runs failed: {e}"))));
            }
        }
    }
    results.push((8, criterion_8()));

    let mut failed = 0;
    for (c, o) in &results {
        println!("criterion {c}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    match criterion_9(&cfg) {
        (Some(o), _) => {
            println!("criterion 9: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            failed += usize::from(!o.pass);
        }
        (None, why) => println!("criterion 9: SKIP {why}"),
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
