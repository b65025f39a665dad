use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::Config;

use ptxlat_core::analysis::{compute_cpi, tc_latency, AnalysisConfig};
use ptxlat_core::codegen::{
    build_chase, generate, inventory, BenchKind, ChaseLayout, DeviceLimits, PointerChaseConfig,
};
use ptxlat_core::isa::{
    parse_signature, CacheOp, Dependency, LatencyMeasurement, LatencyTable, MemoryLevel,
};
use ptxlat_core::report::{self, Format};
use ptxlat_core::virtual_device::{resolve_level, run_virtual, MemoryHierarchyModel};
use ptxlat_core::{seed_paper_table, CycleRange, Cycles};

fn small() -> DeviceLimits {
    DeviceLimits {
        l1_bytes: 16 * 1024,
        l2_bytes: 64 * 1024,
    }
}

/// Walks the next-index table from element 0 until it revisits something.
/// Returns (distinct elements visited, times the walk came back to 0).
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

fn range_strategy() -> impl Strategy<Value = CycleRange> {
    (0i64..2000, 0i64..300, 1i64..9, any::<bool>()).prop_map(|(lo, span, den, approx)| {
        if span == 0 && approx {
            CycleRange::approx(Cycles::new(lo, den))
        } else {
            CycleRange::range(Cycles::new(lo, den), Cycles::new(lo + span, den))
        }
    })
}

/// Random tables built by keeping a random subset of the seed records and
/// replacing every latency with a random (possibly fractional) range.
fn table_strategy() -> impl Strategy<Value = LatencyTable> {
    let seed = seed_paper_table();
    let n = seed.records.len();
    (
        proptest::collection::vec((any::<bool>(), range_strategy()), n),
        proptest::collection::vec(range_strategy(), MemoryLevel::ALL.len()),
        0i64..10,
        proptest::option::of(0i64..100),
        any::<bool>(),
    )
        .prop_map(move |(recs, mem, overhead, barrier, keep_tensor)| {
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
            t.memory = MemoryLevel::ALL.iter().copied().zip(mem).collect();
            t.clock_overhead = Cycles::from_int(overhead);
            t.barrier_penalty = barrier.map(Cycles::from_int);
            if !keep_tensor {
                t.tensor_ops.clear();
            }
            t
        })
}

proptest! {
    #![proptest_config(Config::with_cases(200))]

    #[test]
    fn chase_is_one_full_cycle(k in 1u64..=1024, seed in any::<u64>(), op in prop::sample::select(vec![CacheOp::Cv, CacheOp::Cg, CacheOp::Ca])) {
        let n = 4 * k;
        let cfg = PointerChaseConfig::new(n, op).with_layout(ChaseLayout::Random { seed });
        let next = build_chase(&cfg).unwrap();
        prop_assert_eq!(next.len() as u64, n);
        prop_assert_eq!(walk(&next), (n as usize, 1));
    }

    #[test]
    fn stride_chase_is_one_full_cycle(k in 1u64..=1024, stride in 1u64..10_000) {
        let n = 4 * k;
        let cfg = PointerChaseConfig::new(n, CacheOp::Cv).with_layout(ChaseLayout::Stride { stride });
        match build_chase(&cfg) {
            Ok(next) => prop_assert_eq!(walk(&next), (n as usize, 1)),
            // Non-coprime strides would split the chain and must be refused.
            Err(_) => prop_assert!(num_gcd(stride, n) != 1),
        }
    }
}

fn num_gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

proptest! {
    #![proptest_config(Config::with_cases(100))]

    #[test]
    fn table_save_load_identity(table in table_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        report::save(&table, &path).unwrap();
        let back = report::load(&path).unwrap();
        prop_assert_eq!(&back, &table);
        // Saving again is byte-identical.
        let again = dir.path().join("u.json");
        report::save(&back, &again).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn render_is_deterministic(table in table_strategy()) {
        for f in [Format::Markdown, Format::Csv] {
            prop_assert_eq!(report::render(&table, f), report::render(&table.clone(), f));
        }
    }

    #[test]
    fn diff_is_antisymmetric(a in table_strategy(), b in table_strategy()) {
        let ab = report::diff(&a, &b);
        let ba = report::diff(&b, &a);
        prop_assert_eq!(&ab.added, &ba.removed);
        prop_assert_eq!(&ab.removed, &ba.added);
        prop_assert_eq!(ab.changed.len(), ba.changed.len());
        for (x, y) in ab.changed.iter().zip(&ba.changed) {
            prop_assert_eq!((x.section, &x.key), (y.section, &y.key));
            prop_assert_eq!(x.delta + y.delta, Cycles::ZERO);
        }
        prop_assert!(report::diff(&a, &a).is_empty());
    }
}

proptest! {
    #![proptest_config(Config::with_cases(500))]

    #[test]
    fn cpi_shifts_linearly(start in 0u64..1u64 << 40, extra in 0u64..100_000, count in 1u64..10_000, overhead in 0u64..8, k in 0u64..500) {
        let delta = overhead + extra;
        let m = |d: u64| LatencyMeasurement {
            start_clock: start,
            end_clock: start + d,
            instruction_count: count,
            clock_overhead: overhead,
        };
        let base = compute_cpi(&m(delta)).unwrap().value;
        let shifted = compute_cpi(&m(delta + k * count)).unwrap().value;
        prop_assert_eq!(shifted - base, Cycles::from_int(k as i64));
    }

    #[test]
    fn tc_latency_inverts_exactly(per_mma in 0i64..64, iters in 1u64..4096, overhead in 0u64..8) {
        let cfg = AnalysisConfig { clock_overhead: overhead, ..AnalysisConfig::default() };
        let delta = 4 * iters * per_mma as u64 + overhead;
        let got = tc_latency(delta, iters, &cfg).unwrap();
        prop_assert!(got.warning.is_none());
        prop_assert_eq!(got.value, Cycles::from_int(per_mma));
        let rebuilt = got.value * (4 * iters as i64) + Cycles::from_int(overhead as i64);
        prop_assert_eq!(rebuilt, Cycles::from_int(delta as i64));
    }

    #[test]
    fn tc_latency_inverts_fractional_deltas(delta in 0u64..1_000_000, iters in 1u64..4096) {
        let cfg = AnalysisConfig::default();
        prop_assume!(delta >= cfg.clock_overhead);
        let got = tc_latency(delta, iters, &cfg).unwrap().value;
        let rebuilt = got * (4 * iters as i64) + Cycles::from_int(cfg.clock_overhead as i64);
        prop_assert_eq!(rebuilt, Cycles::from_int(delta as i64));
    }

    #[test]
    fn larger_footprints_are_never_faster(a in 1u64..1 << 20, b in 1u64..1 << 20, op in prop::sample::select(vec![CacheOp::Cv, CacheOp::Cg, CacheOp::Ca])) {
        let mem = MemoryHierarchyModel::from_table(&seed_paper_table(), &small()).unwrap();
        let (lo, hi) = (a.min(b), a.max(b));
        let fast = mem.latency(resolve_level(op, lo, &mem)).unwrap();
        let slow = mem.latency(resolve_level(op, hi, &mem)).unwrap();
        prop_assert!(fast <= slow);
    }
}

proptest! {
    #![proptest_config(Config::with_cases(64))]

    #[test]
    fn virtual_runs_are_deterministic(i in any::<prop::sample::Index>()) {
        let seed = seed_paper_table();
        let limits = small();
        let reqs = inventory(&seed, &limits, &BenchKind::ALL);
        let req = &reqs[i.index(reqs.len())];
        let bench = generate(req, &limits).unwrap();
        let mem = MemoryHierarchyModel::from_table(&seed, &limits).unwrap();
        let a = run_virtual(&bench, &seed, &mem).unwrap();
        let b = run_virtual(&bench, &seed, &mem).unwrap();
        prop_assert_eq!(a.delta(), b.delta());
        prop_assert_eq!(a.trace_text(), b.trace_text());
    }

    #[test]
    fn printed_signatures_parse_back(i in any::<prop::sample::Index>(), count in 1u32..64, dep in any::<bool>()) {
        let seed = seed_paper_table();
        let specs: Vec<_> = seed.records.values().map(|r| r.spec.clone()).collect();
        let mut spec = specs[i.index(specs.len())].clone().with_count(count);
        if dep {
            spec = spec.with_dependency(Dependency::Dependent);
        }
        let text = spec.to_string();
        let back = parse_signature(&text).unwrap();
        prop_assert_eq!(back.to_string(), text);
        prop_assert_eq!(back, spec);
    }
}

#[test]
fn every_inventory_signature_round_trips() {
    let seed = seed_paper_table();
    assert!(seed.records.len() > 100);
    for (key, rec) in &seed.records {
        let parsed = parse_signature(key).unwrap_or_else(|e| panic!("{key}: {e}"));
        assert_eq!(parsed, rec.spec, "{key}");
        assert_eq!(parsed.to_string(), *key);
    }
}

#[test]
fn dependent_chains_are_never_faster() {
    let seed = seed_paper_table();
    let mut pairs = BTreeMap::new();
    for (key, rec) in &seed.records {
        if let Some(base) = key.strip_suffix(":dep") {
            pairs.insert(base.to_string(), rec.cycles);
        }
    }
    assert!(pairs.len() >= 5);
    for (base, dep) in pairs {
        let indep = seed.record(&base).unwrap().cycles;
        assert!(dep.min >= indep.min, "{base}: {dep} < {indep}");
    }
}
