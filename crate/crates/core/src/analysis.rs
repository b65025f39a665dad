//! Clock deltas to cycles: CPI, memory and tensor-core latencies,
//! tensor-core throughput, and assembly of measured latency tables.

use std::collections::BTreeMap;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::codegen::{BenchRequest, BenchTarget, ClockWidth, Microbenchmark, SharedDirection};
use crate::cycles::{CycleRange, Cycles};
use crate::isa::{
    Extra, LatencyMeasurement, LatencyRecord, LatencyTable, LaunchPoint, MemoryLevel, RecordSource,
    SassMapping, SassTerm, TensorCoreOp, ThroughputFigures,
};
use crate::seed::CLOCK_READ_KEY;
use crate::trace::{expected_mapping, verify_mapping, MappingReport, TraceEvent};
use crate::virtual_device::{operand_bytes, ThroughputSample};

/// SM clock of the A100 (boost), used for throughput unless configured.
pub const DEFAULT_CLOCK_RATE_HZ: u64 = 1_410_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("end clock {end} precedes start clock {start}")]
    ClockOrder { start: u64, end: u64 },
    #[error("launch curve needs measurements for N = 1..3; missing N = {0}")]
    IncompleteCurve(u64),
    #[error("elapsed cycles must be positive")]
    ZeroElapsed,
    #[error("invalid analysis config: {0}")]
    Config(String),
}

/// How much work one tensor-core mma counts for in a throughput figure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum WorkMetric {
    /// Bytes of the A, B and C tiles read by one mma.
    #[default]
    OperandBytes,
    /// A fixed byte count per mma regardless of shape.
    FixedBytes { bytes: u64 },
}

impl WorkMetric {
    pub fn bytes_per_op(self, op: &TensorCoreOp) -> u64 {
        match self {
            WorkMetric::OperandBytes => operand_bytes(op),
            WorkMetric::FixedBytes { bytes } => bytes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub clock_overhead: u64,
    /// ALU runs timing fewer instructions than this are cold-start samples:
    /// they feed the launch curve and never a record's steady CPI.
    pub warmup_discard: u64,
    pub shared_followup_cycles: u64,
    pub clock_rate_hz: u64,
    /// Theoretical GB/s keyed by `<in>.<acc>`.
    pub theoretical_throughput: BTreeMap<String, f64>,
    pub work_metric: WorkMetric,
    /// Independent signature whose runs at several N make the launch curve.
    pub launch_probe: String,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            clock_overhead: crate::seed::CLOCK_OVERHEAD as u64,
            warmup_discard: 3,
            shared_followup_cycles: 2,
            clock_rate_hz: DEFAULT_CLOCK_RATE_HZ,
            theoretical_throughput: BTreeMap::new(),
            work_metric: WorkMetric::OperandBytes,
            launch_probe: "add.u32".into(),
        }
    }
}

impl AnalysisConfig {
    /// Defaults with theoretical throughput taken from `table`.
    pub fn from_table(table: &LatencyTable) -> Self {
        let mut cfg = AnalysisConfig::default();
        if let Some(o) = table.clock_overhead.to_integer().filter(|v| *v >= 0) {
            cfg.clock_overhead = o as u64;
        }
        cfg.theoretical_throughput = table
            .tensor_ops
            .iter()
            .filter_map(|op| op.throughput.map(|t| (op.key(), t.theoretical_gbps)))
            .collect();
        cfg
    }

    pub fn check(&self) -> Result<(), AnalysisError> {
        if self.clock_rate_hz == 0 {
            return Err(AnalysisError::Config(
                "clock_rate_hz must be positive".into(),
            ));
        }
        if let Some((k, v)) = self
            .theoretical_throughput
            .iter()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(AnalysisError::Config(format!(
                "theoretical throughput for {k} is {v}"
            )));
        }
        Ok(())
    }
}

/// A derived value, plus a warning when it had to be clamped.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measured {
    pub value: Cycles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn clamped(raw: Cycles, what: &str) -> Measured {
    if raw.is_negative() {
        Measured {
            value: Cycles::ZERO,
            warning: Some(format!("{what} was {raw}; clamped to 0")),
        }
    } else {
        Measured {
            value: raw,
            warning: None,
        }
    }
}

fn delta_of(start: u64, end: u64) -> Result<i64, AnalysisError> {
    if end < start {
        return Err(AnalysisError::ClockOrder { start, end });
    }
    Ok((end - start) as i64)
}

/// `(end - start - overhead) / count`.
pub fn compute_cpi(m: &LatencyMeasurement) -> Result<Measured, AnalysisError> {
    if m.instruction_count == 0 {
        return Err(AnalysisError::ZeroCount("instruction_count"));
    }
    let delta = delta_of(m.start_clock, m.end_clock)?;
    let raw = Cycles::new(delta - m.clock_overhead as i64, m.instruction_count as i64);
    Ok(clamped(raw, "CPI"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchCurve {
    pub per_n_cpi: BTreeMap<u64, Cycles>,
    pub steady_cpi: Cycles,
}

impl LaunchCurve {
    pub fn points(&self) -> Vec<LaunchPoint> {
        self.per_n_cpi
            .iter()
            .map(|(&n, &cpi)| LaunchPoint {
                count: n as u32,
                cpi,
            })
            .collect()
    }
}

/// Per-N CPI of a sweep over instruction counts. The steady CPI is the
/// value at the smallest N whose successor has the same CPI, falling back
/// to the largest N.
pub fn launch_overhead_curve(
    measurements: &[LatencyMeasurement],
) -> Result<LaunchCurve, AnalysisError> {
    let mut per_n = BTreeMap::new();
    for m in measurements {
        let cpi = compute_cpi(m)?.value;
        per_n.entry(m.instruction_count).or_insert(cpi);
    }
    if let Some(n) = (1..=3).find(|n| !per_n.contains_key(n)) {
        return Err(AnalysisError::IncompleteCurve(n));
    }
    let ordered: Vec<(u64, Cycles)> = per_n.iter().map(|(&n, &c)| (n, c)).collect();
    let steady = ordered
        .windows(2)
        .find(|w| w[1].0 == w[0].0 + 1 && w[0].1 == w[1].1)
        .map(|w| w[0].1)
        .unwrap_or(ordered[ordered.len() - 1].1);
    Ok(LaunchCurve {
        per_n_cpi: per_n,
        steady_cpi: steady,
    })
}

/// `(total_delta - overhead) / loads`.
pub fn memory_latency(
    total_delta: u64,
    loads: u64,
    cfg: &AnalysisConfig,
) -> Result<Measured, AnalysisError> {
    if loads == 0 {
        return Err(AnalysisError::ZeroCount("loads"));
    }
    let raw = Cycles::new(total_delta as i64 - cfg.clock_overhead as i64, loads as i64);
    Ok(clamped(raw, "memory latency"))
}

/// Single shared access: delta minus the clock overhead and the follow-up add.
pub fn shared_latency(
    total_delta: u64,
    direction: SharedDirection,
    cfg: &AnalysisConfig,
) -> Measured {
    let raw = Cycles::from_int(
        total_delta as i64 - cfg.clock_overhead as i64 - cfg.shared_followup_cycles as i64,
    );
    clamped(raw, &format!("shared {} latency", direction.name()))
}

/// `(total_delta - overhead) / (4 * iters)`.
pub fn tc_latency(
    total_delta: u64,
    iters: u64,
    cfg: &AnalysisConfig,
) -> Result<Measured, AnalysisError> {
    if iters == 0 {
        return Err(AnalysisError::ZeroCount("iters"));
    }
    let per_iter = crate::codegen::MMA_PER_ITER as i64;
    let raw = Cycles::new(
        total_delta as i64 - cfg.clock_overhead as i64,
        per_iter * iters as i64,
    );
    Ok(clamped(raw, "tensor-core latency"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub measured_gbps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theoretical_gbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

/// GB/s moved by `op_count` mma operations over `elapsed_cycles`.
/// Computed exactly and rounded once at the end.
pub fn tc_throughput(
    op: &TensorCoreOp,
    op_count: u64,
    elapsed_cycles: u64,
    cfg: &AnalysisConfig,
) -> Result<Throughput, AnalysisError> {
    if elapsed_cycles == 0 {
        return Err(AnalysisError::ZeroElapsed);
    }
    cfg.check()?;
    let work = cfg.work_metric.bytes_per_op(op) as i128;
    let exact = Ratio::new(
        op_count as i128 * work * cfg.clock_rate_hz as i128,
        elapsed_cycles as i128 * 1_000_000_000,
    );
    let measured = *exact.numer() as f64 / *exact.denom() as f64;
    let theoretical = cfg.theoretical_throughput.get(&op.key()).copied();
    Ok(Throughput {
        measured_gbps: measured,
        theoretical_gbps: theoretical,
        ratio: theoretical.map(|t| measured / t),
    })
}

/// Everything the table builder needs from one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzedBenchmark {
    pub bench_id: String,
    pub request: BenchRequest,
    pub timed_count: u64,
    pub value: Cycles,
    pub expected_mapping: Option<SassMapping>,
    pub mapping: MappingReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<Throughput>,
}

/// Clocks from one execution, as delivered by a runner backend.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawClocks {
    pub start_clock: u64,
    pub end_clock: u64,
    pub throughput: Option<ThroughputSample>,
}

/// Verifies the trace against the reference table's mapping and derives
/// the benchmark's per-instruction value.
pub fn analyze_run(
    bench: &Microbenchmark,
    clocks: RawClocks,
    events: &[TraceEvent],
    reference: &LatencyTable,
    cfg: &AnalysisConfig,
) -> Result<AnalyzedBenchmark, AnalysisError> {
    let delta = delta_of(clocks.start_clock, clocks.end_clock)? as u64;
    let mut warnings = Vec::new();
    let (expected, mapping) = match expected_mapping(bench, reference) {
        Ok(m) => {
            let report = verify_mapping(bench, events, &m);
            (Some(m), report)
        }
        Err(e) => {
            let empty = SassMapping::opaque(&bench.id, None);
            let mut report = verify_mapping(bench, events, &empty);
            report.matched = false;
            report.notes.push(e.to_string());
            (None, report)
        }
    };
    if !mapping.matched {
        warnings.push(format!("{}: SASS mapping not verified", bench.id));
    }
    if bench.clock_width == ClockWidth::Bits32 {
        warnings.push("32-bit clock reads: delta includes a barrier".into());
    }
    let mut throughput = None;
    let measured = match &bench.target {
        BenchTarget::ClockOverhead => Measured {
            value: Cycles::from_int(delta as i64),
            warning: None,
        },
        BenchTarget::Alu(_) => compute_cpi(&LatencyMeasurement {
            start_clock: clocks.start_clock,
            end_clock: clocks.end_clock,
            instruction_count: bench.timed_count,
            clock_overhead: cfg.clock_overhead,
        })?,
        BenchTarget::Memory(_) => memory_latency(delta, bench.divisor, cfg)?,
        BenchTarget::Shared(dir) => shared_latency(delta, *dir, cfg),
        BenchTarget::Wmma(op) => {
            if let Some(s) = clocks.throughput {
                throughput = Some(tc_throughput(op, s.op_count, s.elapsed_cycles, cfg)?);
            }
            tc_latency(delta, op.iters as u64, cfg)?
        }
    };
    warnings.extend(measured.warning);
    Ok(AnalyzedBenchmark {
        bench_id: bench.id.clone(),
        request: bench.request(),
        timed_count: bench.timed_count,
        value: measured.value,
        expected_mapping: expected,
        mapping,
        warnings,
        throughput,
    })
}

/// Mapping reconstructed from observed opcode totals, when they divide evenly.
fn observed_mapping(ptx: &str, r: &AnalyzedBenchmark) -> SassMapping {
    let n = r.timed_count.max(1);
    let terms: Option<Vec<SassTerm>> = r
        .mapping
        .observed
        .iter()
        .map(|t| (t.count % n == 0).then(|| SassTerm::new(&t.opcode, (t.count / n) as u32)))
        .collect();
    match terms {
        Some(expansion) if !expansion.is_empty() => SassMapping {
            ptx_signature: ptx.to_string(),
            expansion,
            alternatives: Vec::new(),
            multi_instruction: false,
            hint: None,
        },
        _ => SassMapping::opaque(ptx, None),
    }
}

fn merge_range(slot: &mut CycleRange, value: Cycles, notes: &mut Vec<String>, what: &str) {
    if value < slot.min || value > slot.max {
        *slot = slot.widen(&CycleRange::point(value));
        notes.push(format!(
            "{what}: repeat measurements disagree; kept as {slot}"
        ));
    }
}

/// Builds a measured table. Repeat measurements of one key that disagree
/// widen to a range; unverified mappings are kept with a note.
pub fn build_latency_table(
    results: &[AnalyzedBenchmark],
    architecture: &str,
    cfg: &AnalysisConfig,
) -> LatencyTable {
    let mut table = LatencyTable::empty(architecture);
    let mut table_notes: Vec<String> = Vec::new();
    let mut curve: Vec<LatencyMeasurement> = Vec::new();
    let mut overhead: Option<Cycles> = None;
    let mut clk32: Option<Cycles> = None;

    for r in results {
        match &r.request {
            BenchRequest::ClockOverhead { clock_width } => match clock_width {
                ClockWidth::Bits64 => {
                    overhead = Some(r.value);
                    upsert_record(&mut table, clock_record(r), r.value);
                }
                ClockWidth::Bits32 => clk32 = Some(r.value),
            },
            BenchRequest::Alu { spec, .. } => {
                if spec.key() == cfg.launch_probe {
                    curve.push(LatencyMeasurement {
                        start_clock: 0,
                        end_clock: (r.value * r.timed_count as i64).to_integer().unwrap_or(0)
                            as u64
                            + cfg.clock_overhead,
                        instruction_count: r.timed_count,
                        clock_overhead: cfg.clock_overhead,
                    });
                }
                if r.timed_count < cfg.warmup_discard {
                    continue;
                }
                let mapping = match (&r.expected_mapping, r.mapping.matched) {
                    (Some(m), true) => m.clone(),
                    _ => observed_mapping(&spec.signature(), r),
                };
                let mut notes = Vec::new();
                if !r.mapping.matched {
                    notes.push(format!(
                        "unverified mapping: {}",
                        r.mapping.notes.join("; ")
                    ));
                }
                let rec = LatencyRecord {
                    spec: spec.clone().with_count(crate::isa::DEFAULT_COUNT),
                    mapping,
                    cycles: CycleRange::point(r.value),
                    source: RecordSource::Measured,
                    notes,
                    extra: Extra::new(),
                };
                upsert_record(&mut table, rec, r.value);
            }
            BenchRequest::Memory { level, .. } => {
                merge_memory(&mut table, *level, r.value, &mut table_notes)
            }
            BenchRequest::Shared { direction, .. } => {
                merge_memory(&mut table, direction.level(), r.value, &mut table_notes)
            }
            BenchRequest::Wmma { op, iters, .. } => {
                let mut tc = op.to_op(*iters);
                if r.mapping.matched {
                    let observed = r.mapping.observed_count(&tc.sass_opcode);
                    if r.timed_count > 0 && observed % r.timed_count == 0 && observed > 0 {
                        tc.sass_count = (observed / r.timed_count) as u32;
                    }
                }
                let per = r.value / tc.sass_count.max(1) as i64;
                match per.to_integer() {
                    Some(v) if v >= 0 => tc.per_sass_cycles = v as u32,
                    _ => table_notes.push(format!(
                        "{}: {} cycles do not split evenly over {} SASS",
                        tc.key(),
                        r.value,
                        tc.sass_count
                    )),
                }
                tc.throughput = r.throughput.and_then(|t| {
                    t.theoretical_gbps.map(|th| ThroughputFigures {
                        measured_gbps: t.measured_gbps,
                        theoretical_gbps: th,
                    })
                });
                match table.tensor_ops.iter_mut().find(|o| o.key() == tc.key()) {
                    Some(existing) if existing.total_cycles() != tc.total_cycles() => table_notes
                        .push(format!(
                            "{}: repeat measurements disagree ({} vs {} cycles); first kept",
                            tc.key(),
                            existing.total_cycles(),
                            tc.total_cycles()
                        )),
                    Some(_) => {}
                    None => table.tensor_ops.push(tc),
                }
            }
        }
    }

    if let Some(o) = overhead {
        table.clock_overhead = o;
    } else {
        table.clock_overhead = Cycles::from_int(cfg.clock_overhead as i64);
    }
    if let Some(c) = clk32 {
        table.barrier_penalty = Some((c - table.clock_overhead).max(Cycles::ZERO));
    }
    if let Ok(c) = launch_overhead_curve(&curve) {
        table.launch_curve = c.points();
    }
    if !table_notes.is_empty() {
        table
            .extra
            .insert("notes".into(), serde_json::json!(table_notes));
    }
    table
}

fn clock_record(r: &AnalyzedBenchmark) -> LatencyRecord {
    let spec = crate::isa::parse_signature(CLOCK_READ_KEY).expect("clock signature");
    LatencyRecord {
        spec,
        mapping: SassMapping::parse(CLOCK_READ_KEY, "CS2R.32").expect("clock mapping"),
        cycles: CycleRange::point(r.value),
        source: RecordSource::Measured,
        notes: Vec::new(),
        extra: Extra::new(),
    }
}

fn upsert_record(table: &mut LatencyTable, rec: LatencyRecord, value: Cycles) {
    let key = rec.key();
    match table.records.get_mut(&key) {
        Some(existing) => {
            let mut notes = std::mem::take(&mut existing.notes);
            merge_range(&mut existing.cycles, value, &mut notes, &key);
            existing.notes = notes;
            existing.notes.extend(rec.notes);
        }
        None => {
            table.records.insert(key, rec);
        }
    }
}

fn merge_memory(
    table: &mut LatencyTable,
    level: MemoryLevel,
    value: Cycles,
    notes: &mut Vec<String>,
) {
    match table.memory.get_mut(&level) {
        Some(slot) => merge_range(slot, value, notes, level.name()),
        None => {
            table.memory.insert(level, CycleRange::point(value));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(delta: u64, n: u64) -> LatencyMeasurement {
        LatencyMeasurement {
            start_clock: 100,
            end_clock: 100 + delta,
            instruction_count: n,
            clock_overhead: 2,
        }
    }

    #[test]
    fn cpi_examples() {
        assert_eq!(compute_cpi(&m(8, 3)).unwrap().value, Cycles::from_int(2));
        assert_eq!(compute_cpi(&m(2, 1)).unwrap().value, Cycles::ZERO);
        assert_eq!(compute_cpi(&m(7, 1)).unwrap().value, Cycles::from_int(5));
        let c = compute_cpi(&m(1, 1)).unwrap();
        assert_eq!(c.value, Cycles::ZERO);
        assert!(c.warning.is_some());
        assert_eq!(
            compute_cpi(&m(8, 0)),
            Err(AnalysisError::ZeroCount("instruction_count"))
        );
    }

    #[test]
    fn table_one_curve() {
        let ms: Vec<_> = [(1, 7), (2, 8), (3, 8), (4, 10)]
            .iter()
            .map(|&(n, d)| m(d, n))
            .collect();
        let c = launch_overhead_curve(&ms).unwrap();
        let want: BTreeMap<u64, Cycles> = [(1, 5), (2, 3), (3, 2), (4, 2)]
            .iter()
            .map(|&(n, v)| (n, Cycles::from_int(v)))
            .collect();
        assert_eq!(c.per_n_cpi, want);
        assert_eq!(c.steady_cpi, Cycles::from_int(2));
        let flat: Vec<_> = (1..=4).map(|n| m(3 * n + 2, n)).collect();
        assert_eq!(
            launch_overhead_curve(&flat).unwrap().steady_cpi,
            Cycles::from_int(3)
        );
        assert_eq!(
            launch_overhead_curve(&ms[1..]),
            Err(AnalysisError::IncompleteCurve(1))
        );
    }

    #[test]
    fn memory_shared_tc() {
        let cfg = AnalysisConfig::default();
        assert_eq!(
            memory_latency(1024 * 290 + 2, 1024, &cfg).unwrap().value,
            Cycles::from_int(290)
        );
        let zero = AnalysisConfig {
            clock_overhead: 0,
            ..AnalysisConfig::default()
        };
        assert_eq!(memory_latency(0, 1, &zero).unwrap().value, Cycles::ZERO);
        assert!(memory_latency(5, 0, &cfg).is_err());
        assert_eq!(
            shared_latency(27, SharedDirection::Load, &cfg).value,
            Cycles::from_int(23)
        );
        assert_eq!(
            shared_latency(4, SharedDirection::Store, &cfg).value,
            Cycles::ZERO
        );
        assert_eq!(
            tc_latency(16 * 512 + 2, 128, &cfg).unwrap().value,
            Cycles::from_int(16)
        );
        assert!(tc_latency(10, 0, &cfg).is_err());
    }

    #[test]
    fn throughput_zero_ops() {
        let t = crate::seed::seed_paper_table();
        let cfg = AnalysisConfig::from_table(&t);
        let op = &t.tensor_ops[0];
        let r = tc_throughput(op, 0, 100, &cfg).unwrap();
        assert_eq!(r.measured_gbps, 0.0);
        assert_eq!(r.theoretical_gbps, Some(312.0));
        assert!(tc_throughput(op, 1, 0, &cfg).is_err());
    }
}
