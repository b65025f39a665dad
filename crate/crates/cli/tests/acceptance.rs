//! Acceptance checks, one printed PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so each criterion reports on its own
//! line even when an earlier one fails. Expected values below are written
//! out by hand and never read back from the built-in table.

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use ptxlat_core::analysis::{
    analyze_run, compute_cpi, launch_overhead_curve, memory_latency, shared_latency, tc_latency,
    AnalysisConfig,
};
use ptxlat_core::codegen::{
    build_chase, generate, inventory, validate_ptx, BenchKind, BenchRequest, ChaseLayout,
    ClockWidth, DeviceLimits, Microbenchmark, PointerChaseConfig,
};
use ptxlat_core::isa::{parse_signature, CacheOp, LatencyMeasurement, LatencyTable, MemoryLevel};
use ptxlat_core::report::{self, Format};
use ptxlat_core::runner::{run, Backend, RunResult, VirtualBackend};
use ptxlat_core::trace::{expected_mapping, read_trace, verify_mapping, ParseMode};
use ptxlat_core::{seed_paper_table, CycleRange, Cycles};

fn small() -> DeviceLimits {
    DeviceLimits {
        l1_bytes: 16 * 1024,
        l2_bytes: 64 * 1024,
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn ptxlat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptxlat"))
        .args(args)
        .output()
        .expect("spawn ptxlat")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "ptxlat failed: {:?}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Virtual {
    table: LatencyTable,
    limits: DeviceLimits,
    backend: Backend,
    cfg: AnalysisConfig,
}

impl Virtual {
    fn new() -> Virtual {
        let table = seed_paper_table();
        let limits = small();
        Virtual {
            backend: Backend::Virtual(VirtualBackend::new(table.clone(), &limits).unwrap()),
            cfg: AnalysisConfig::from_table(&table),
            table,
            limits,
        }
    }

    fn run(&self, req: &BenchRequest) -> (Microbenchmark, RunResult) {
        let bench = generate(req, &self.limits).unwrap();
        let r = run(&bench, &self.backend).unwrap_or_else(|e| panic!("{}: {e}", bench.id));
        (bench, r)
    }

    /// Runs `req` and returns the analyzed per-instruction value after
    /// checking the trace against the expected SASS.
    fn analyzed(&self, req: &BenchRequest) -> Cycles {
        let (bench, r) = self.run(req);
        let t = r.parsed_trace(ParseMode::Strict).unwrap();
        let a = analyze_run(&bench, r.clocks(), &t.events, &self.table, &self.cfg).unwrap();
        assert!(a.mapping.matched, "{}: {:?}", bench.id, a.mapping);
        a.value
    }
}

fn alu(sig: &str) -> BenchRequest {
    BenchRequest::Alu {
        spec: parse_signature(sig).unwrap(),
        clock_width: ClockWidth::Bits64,
        variant: 0,
    }
}

fn int(v: i64) -> Cycles {
    Cycles::from_int(v)
}

fn launch_curve() {
    let started = Instant::now();
    let v = Virtual::new();
    let mut ms = Vec::new();
    for n in 1..=4 {
        let (bench, r) = v.run(&alu(&format!("add.u32:x{n}")));
        assert_eq!(bench.timed_count, n);
        ms.push(LatencyMeasurement {
            start_clock: r.start_clock,
            end_clock: r.end_clock,
            instruction_count: bench.timed_count,
            clock_overhead: 2,
        });
    }
    let curve = launch_overhead_curve(&ms).unwrap();
    let got: Vec<(u64, Cycles)> = curve.per_n_cpi.into_iter().collect();
    assert_eq!(
        got,
        vec![(1, int(5)), (2, int(3)), (3, int(2)), (4, int(2))]
    );
    assert_eq!(curve.steady_cpi, int(2));
    assert!(
        started.elapsed() < Duration::from_secs(1),
        "took {:?}",
        started.elapsed()
    );
}

fn dependent_independent_pairs() {
    let v = Virtual::new();
    let pairs = [
        ("add.f16", 3, 2),
        ("add.u32", 4, 2),
        ("add.f64", 5, 4),
        ("mul.lo.u32", 3, 2),
        ("mad.rn.f32", 4, 2),
    ];
    for (sig, dep, indep) in pairs {
        assert_eq!(
            v.analyzed(&alu(&format!("{sig}:dep"))),
            int(dep),
            "{sig} dependent"
        );
        assert_eq!(v.analyzed(&alu(sig)), int(indep), "{sig} independent");
        // Same numbers straight from the CPI formula on the raw clocks.
        let (bench, r) = v.run(&alu(sig));
        let cpi = compute_cpi(&LatencyMeasurement {
            start_clock: r.start_clock,
            end_clock: r.end_clock,
            instruction_count: bench.timed_count,
            clock_overhead: 2,
        })
        .unwrap();
        assert_eq!(cpi.value, int(indep), "{sig} formula");
    }
}

fn memory_levels() {
    let v = Virtual::new();
    let expect = [
        (MemoryLevel::Global, 290),
        (MemoryLevel::L2, 200),
        (MemoryLevel::L1, 33),
        (MemoryLevel::SharedLoad, 23),
        (MemoryLevel::SharedStore, 19),
    ];
    let reqs = inventory(&v.table, &v.limits, &[BenchKind::Memory, BenchKind::Shared]);
    let mut seen = Vec::new();
    for req in &reqs {
        let (bench, r) = v.run(req);
        let (level, got) = match req {
            BenchRequest::Memory { level, .. } => (
                *level,
                memory_latency(r.delta(), bench.timed_count, &v.cfg).unwrap(),
            ),
            BenchRequest::Shared { direction, .. } => (
                direction.level(),
                shared_latency(r.delta(), *direction, &v.cfg),
            ),
            _ => unreachable!(),
        };
        assert!(got.warning.is_none());
        let want = expect.iter().find(|(l, _)| *l == level).unwrap().1;
        assert_eq!(got.value, int(want), "{level:?}");
        assert_eq!(v.analyzed(req), int(want), "{level:?} via analyze_run");
        seen.push(level);
    }
    seen.sort();
    let mut all: Vec<_> = expect.iter().map(|(l, _)| *l).collect();
    all.sort();
    assert_eq!(seen, all);
}

fn tensor_ops() {
    let v = Virtual::new();
    // (A/B type, C/D type, cycles, sass count, cycles per sass)
    let rows = [
        ("f16", "f16", 16, 2, 8),
        ("f16", "f32", 16, 2, 8),
        ("bf16", "f32", 16, 2, 8),
        ("tf32", "f32", 16, 4, 4),
        ("f64", "f64", 16, 1, 16),
        ("u8", "u32", 8, 2, 4),
        ("u4", "u32", 4, 1, 4),
    ];
    let reqs = inventory(&v.table, &v.limits, &[BenchKind::Wmma]);
    assert_eq!(reqs.len(), rows.len());
    for (ab, cd, cycles, count, per) in rows {
        let req = reqs
            .iter()
            .find(|r| matches!(r, BenchRequest::Wmma { op, .. } if op.in_type.name() == ab && op.acc_type.name() == cd))
            .unwrap_or_else(|| panic!("no wmma benchmark for {ab}/{cd}"));
        let BenchRequest::Wmma { op, iters, .. } = req else {
            unreachable!()
        };
        let (_, r) = v.run(req);
        let got = tc_latency(r.delta(), *iters as u64, &v.cfg).unwrap();
        assert_eq!(got.value, int(cycles), "{ab}/{cd}");
        assert_eq!(
            (op.sass_count, op.per_sass_cycles),
            (count, per),
            "{ab}/{cd}"
        );
        assert_eq!(count * per, cycles as u32);
        // The trace shows `count` tensor instructions per mma.
        let t = r.parsed_trace(ParseMode::Strict).unwrap();
        let n = t
            .events
            .iter()
            .filter(|e| e.opcode == op.sass_opcode)
            .count() as u64;
        assert_eq!(n, count as u64 * 4 * *iters as u64, "{ab}/{cd} trace");
        assert_eq!(v.analyzed(req), int(cycles));
    }
}

fn cli_closure() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    ok(&ptxlat(&[
        "gen",
        "--all",
        "--out",
        &p("bench"),
        "--l1-bytes",
        "16384",
        "--l2-bytes",
        "65536",
    ]));
    ok(&ptxlat(&[
        "validate",
        "--manifest",
        &p("bench/manifest.json"),
    ]));
    ok(&ptxlat(&[
        "run",
        "--manifest",
        &p("bench/manifest.json"),
        "--backend",
        "virtual",
        "--out",
        &p("results.json"),
    ]));
    ok(&ptxlat(&[
        "analyze",
        "--results",
        &p("results.json"),
        "--out",
        &p("measured.json"),
    ]));
    ok(&ptxlat(&["seed", "--out", &p("seed.json")]));
    let text = ok(&ptxlat(&[
        "diff",
        "--a",
        &p("seed.json"),
        "--b",
        &p("measured.json"),
        "--shared-only",
    ]));
    assert_eq!(text.trim(), "no differences");

    let seed = report::load(Path::new(&p("seed.json"))).unwrap();
    let measured = report::load(Path::new(&p("measured.json"))).unwrap();
    let d = report::diff(&seed, &measured);
    assert!(d.changed.is_empty(), "{}", d.render());
    // Every instruction, memory level and tensor op was measured.
    assert_eq!(
        report::shared_record_keys(&seed, &measured).len(),
        seed.records.len()
    );
    assert_eq!(measured.memory.len(), seed.memory.len());
    assert_eq!(measured.tensor_ops.len(), seed.tensor_ops.len());
    assert!(
        started.elapsed() < Duration::from_secs(60),
        "took {:?}",
        started.elapsed()
    );
}

fn mapping_fixtures() {
    let table = seed_paper_table();
    let cases = [
        (
            "traces/clock32/add.u32-clk32.alu.trace",
            "add.u32-clk32.alu",
            false,
        ),
        ("traces/clock64/add.u32.alu.trace", "add.u32.alu", true),
    ];
    for (file, id, want) in cases {
        let path = fixtures().join(file);
        let req = BenchRequest::from_id(id, &table).unwrap();
        let bench = generate(&req, &DeviceLimits::default()).unwrap();
        let events = read_trace(&path, ParseMode::Strict).unwrap().events;
        let rep = verify_mapping(&bench, &events, &expected_mapping(&bench, &table).unwrap());
        assert_eq!(rep.matched, want, "{id}");
        let barriers = rep.extra_events.iter().filter(|e| e.is_barrier).count();
        if want {
            assert!(rep.extra_events.is_empty(), "{id}: {:?}", rep.extra_events);
        } else {
            assert_eq!(
                (rep.extra_events.len(), barriers),
                (1, 1),
                "{id}: {:?}",
                rep.extra_events
            );
        }

        let out = ptxlat(&[
            "verify-mapping",
            "--trace",
            path.to_str().unwrap(),
            "--bench",
            id,
        ]);
        assert_eq!(
            out.status.code(),
            Some(if want { 0 } else { 1 }),
            "{id} exit code"
        );
        let stdout = String::from_utf8_lossy(&out.stdout);
        let extras: Vec<_> = stdout.lines().filter(|l| l.starts_with("extra:")).collect();
        assert_eq!(extras.len(), if want { 0 } else { 1 }, "{id}: {stdout}");
        assert!(extras.iter().all(|l| l.contains("BAR")));
        assert!(stdout.contains(&format!("matched: {want}")));
    }
}

/// No source file to persist regressions next to in a harness-less target.
fn cases(n: u32) -> Config {
    Config {
        failure_persistence: None,
        ..Config::with_cases(n)
    }
}

fn walk(next: &[u64]) -> (usize, usize) {
    let mut seen = vec![false; next.len()];
    let (mut i, mut visited, mut closes) = (0usize, 0usize, 0usize);
    while !seen[i] {
        seen[i] = true;
        visited += 1;
        i = next[i] as usize;
        if i == 0 {
            closes += 1;
        }
    }
    (visited, closes)
}

fn chase_cycles() {
    let mut runner = TestRunner::new(cases(200));
    let strategy = (
        1u64..=1024,
        any::<u64>(),
        prop::sample::select(vec![CacheOp::Cv, CacheOp::Cg, CacheOp::Ca]),
    );
    runner
        .run(&strategy, |(k, seed, op)| {
            let n = 4 * k;
            let next = build_chase(
                &PointerChaseConfig::new(n, op).with_layout(ChaseLayout::Random { seed }),
            )
            .unwrap();
            prop_assert_eq!(next.len() as u64, n);
            prop_assert_eq!(walk(&next), (n as usize, 1));
            Ok(())
        })
        .unwrap();
}

fn random_table() -> impl Strategy<Value = LatencyTable> {
    let seed = seed_paper_table();
    let n = seed.records.len();
    let range = (0i64..2000, 0i64..300, 1i64..9).prop_map(|(lo, span, den)| {
        CycleRange::range(Cycles::new(lo, den), Cycles::new(lo + span, den))
    });
    (
        proptest::collection::vec((any::<bool>(), range.clone()), n),
        range,
        0i64..10,
    )
        .prop_map(move |(recs, global, overhead)| {
            let mut t = seed.clone();
            t.records = seed
                .records
                .iter()
                .zip(recs)
                .filter(|(_, (keep, _))| *keep)
                .map(|((k, r), (_, c))| {
                    let mut r = r.clone();
                    r.cycles = c;
                    (k.clone(), r)
                })
                .collect();
            t.memory.insert(MemoryLevel::Global, global);
            t.clock_overhead = int(overhead);
            t
        })
}

fn round_trips() {
    let seed = seed_paper_table();
    for (key, rec) in &seed.records {
        let parsed = parse_signature(key).unwrap();
        assert_eq!(parsed, rec.spec);
        assert_eq!(parsed.to_string(), *key);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.json");
    let mut runner = TestRunner::new(cases(100));
    runner
        .run(&random_table(), |t| {
            report::save(&t, &path).unwrap();
            prop_assert_eq!(&report::load(&path).unwrap(), &t);
            for f in [Format::Markdown, Format::Csv] {
                prop_assert_eq!(report::render(&t, f), report::render(&t, f));
            }
            Ok(())
        })
        .unwrap();
}

fn formula_properties() {
    let mut runner = TestRunner::new(cases(500));
    runner
        .run(
            &(
                0u64..1 << 40,
                0u64..100_000,
                1u64..10_000,
                0u64..8,
                0u64..500,
            ),
            |(start, extra, count, overhead, k)| {
                let m = |d: u64| LatencyMeasurement {
                    start_clock: start,
                    end_clock: start + d,
                    instruction_count: count,
                    clock_overhead: overhead,
                };
                let base = compute_cpi(&m(overhead + extra)).unwrap().value;
                let shifted = compute_cpi(&m(overhead + extra + k * count)).unwrap().value;
                prop_assert_eq!(shifted - base, int(k as i64));
                Ok(())
            },
        )
        .unwrap();

    let cfg = AnalysisConfig::default();
    runner
        .run(&(2u64..10_000_000, 1u64..4096), |(delta, iters)| {
            let got = tc_latency(delta, iters, &cfg).unwrap().value;
            let rebuilt = got * (4 * iters as i64) + int(cfg.clock_overhead as i64);
            prop_assert_eq!(rebuilt, int(delta as i64));
            Ok(())
        })
        .unwrap();
}

fn generated_ptx_is_valid() {
    let seed = seed_paper_table();
    for limits in [small(), DeviceLimits::default()] {
        let mut reqs = inventory(&seed, &limits, &BenchKind::ALL);
        // 32-bit clock variants of the ALU kernels as well.
        reqs.extend(seed.records.values().take(20).map(|r| BenchRequest::Alu {
            spec: r.spec.clone(),
            clock_width: ClockWidth::Bits32,
            variant: 0,
        }));
        for req in &reqs {
            let bench = generate(req, &limits).unwrap();
            let rep = validate_ptx(&bench.source_text);
            assert!(rep.is_valid(), "{}: {:?}", bench.id, rep.errors);
            assert_eq!(
                rep.declared_timed_count,
                Some(bench.timed_count),
                "{}",
                bench.id
            );
            assert_eq!(rep.timed_count(), bench.timed_count, "{}", bench.id);
        }
    }
    for (file, count) in [
        ("listings/alu_add_u32.ptx", 3),
        ("listings/memory_chase.ptx", 1024),
        ("listings/shared_ld_st.ptx", 4),
    ] {
        let text = std::fs::read_to_string(fixtures().join(file)).unwrap();
        let rep = validate_ptx(&text);
        assert!(rep.is_valid(), "{file}: {:?}", rep.errors);
        assert_eq!(rep.timed_count(), count, "{file}");
    }
}

fn main() {
    let criteria: [(&str, fn()); 10] = [
        ("add.u32 launch curve is 5/3/2/2, steady 2", launch_curve),
        (
            "dependent/independent CPI pairs",
            dependent_independent_pairs,
        ),
        ("memory latencies 290/200/33/23/19", memory_levels),
        ("tensor-core cycles and sass_count x per_sass", tensor_ops),
        (
            "gen/run/analyze closure against the seed table",
            cli_closure,
        ),
        (
            "mapping verification of the clock fixtures",
            mapping_fixtures,
        ),
        (
            "pointer chase is one full cycle (200 configs)",
            chase_cycles,
        ),
        ("signature, table and render round trips", round_trips),
        ("CPI linearity and tc_latency inverse", formula_properties),
        (
            "generated and hand-written PTX validate",
            generated_ptx_is_valid,
        ),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check));
        let status = if result.is_ok() { "PASS" } else { "FAIL" };
        failed += result.is_err() as usize;
        println!(
            "criterion {:>2}: {status} {name} ({:.2?})",
            i + 1,
            started.elapsed()
        );
    }
    println!("criterion 11: SKIP needs a physical A100 and an external toolchain");
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
