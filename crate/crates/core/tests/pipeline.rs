use ptxlat_core::analysis::{analyze_run, build_latency_table, AnalysisConfig};
use ptxlat_core::codegen::{generate, inventory, BenchKind, DeviceLimits};
use ptxlat_core::runner::{sweep, Backend, VirtualBackend};
use ptxlat_core::trace::ParseMode;
use ptxlat_core::{seed_paper_table, CycleRange};

fn small() -> DeviceLimits {
    DeviceLimits {
        l1_bytes: 16 * 1024,
        l2_bytes: 64 * 1024,
    }
}

#[test]
fn virtual_sweep_reproduces_seed() {
    let seed = seed_paper_table();
    let limits = small();
    let reqs = inventory(&seed, &limits, &BenchKind::ALL);
    let backend = Backend::Virtual(VirtualBackend::new(seed.clone(), &limits).unwrap());
    let entries = sweep(&reqs, &limits, &backend, None);
    let cfg = AnalysisConfig::from_table(&seed);
    let mut analyzed = Vec::new();
    for e in &entries {
        let r = e
            .result
            .as_ref()
            .unwrap_or_else(|| panic!("{}: {:?}", e.id, e.error));
        let bench = generate(&e.request, &limits).unwrap();
        let t = r.parsed_trace(ParseMode::Strict).unwrap();
        assert!(t.skipped.is_empty());
        let a = analyze_run(&bench, r.clocks(), &t.events, &seed, &cfg).unwrap();
        assert!(a.mapping.matched, "{}: {:?}", e.id, a.mapping);
        analyzed.push(a);
    }
    let built = build_latency_table(&analyzed, &seed.architecture, &cfg);
    for (k, rec) in &seed.records {
        let got = built.record(k).unwrap_or_else(|| panic!("missing {k}"));
        assert!(
            got.cycles.same_bounds(&rec.cycles),
            "{k}: {} vs {}",
            got.cycles,
            rec.cycles
        );
    }
    for (l, c) in &seed.memory {
        assert!(built.memory[l].same_bounds(c), "{l}");
    }
    for op in &seed.tensor_ops {
        let b = built.tensor_op(op.in_type, op.acc_type).unwrap();
        assert_eq!(
            (b.sass_count, b.per_sass_cycles),
            (op.sass_count, op.per_sass_cycles)
        );
        assert_eq!(b.throughput, op.throughput, "{}", op.key());
    }
    assert_eq!(built.clock_overhead, seed.clock_overhead);
    let _ = CycleRange::point(0);
}
