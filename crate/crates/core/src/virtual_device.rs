//! Deterministic replay device.
//!
//! Synthesizes the two clock readings and the SASS trace a benchmark would
//! produce on hardware whose latencies are exactly those of a
//! [`LatencyTable`]. Analysis of the synthetic output therefore reproduces
//! the table, which is what makes the pipeline testable without a GPU.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::codegen::{BenchTarget, ClockWidth, DeviceLimits, Microbenchmark, SharedDirection};
use crate::cycles::Cycles;
use crate::isa::{CacheOp, LatencyTable, MemoryLevel, SassTerm, TensorCoreOp};
use crate::trace::{global_load_sass, SHARED_FOLLOWUP_SASS};

/// Clock value at the first read of every synthetic run.
pub const START_CLOCK: u64 = 1_000_000;

/// Cost of the dependent add that follows a shared-memory access.
pub const SHARED_FOLLOWUP_CYCLES: i64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VirtualError {
    #[error("latency table has no record for '{0}'")]
    MissingRecord(String),
    #[error("latency table has no {0} latency")]
    MissingMemory(String),
    #[error("latency table has no tensor op {0}")]
    MissingTensorOp(String),
    #[error("invalid memory model: {0}")]
    Model(String),
    #[error("{0}: synthetic delta is not a whole number of cycles")]
    NonIntegral(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryHierarchyModel {
    pub l1_bytes: u64,
    pub l2_bytes: u64,
    pub latencies: BTreeMap<MemoryLevel, Cycles>,
}

impl MemoryHierarchyModel {
    /// Capacities from `limits`, latencies from the table (lower bound of
    /// any range).
    pub fn from_table(table: &LatencyTable, limits: &DeviceLimits) -> Result<Self, VirtualError> {
        let model = MemoryHierarchyModel {
            l1_bytes: limits.l1_bytes,
            l2_bytes: limits.l2_bytes,
            latencies: table.memory.iter().map(|(l, c)| (*l, c.min)).collect(),
        };
        model.check()?;
        Ok(model)
    }

    pub fn check(&self) -> Result<(), VirtualError> {
        if self.l1_bytes >= self.l2_bytes {
            return Err(VirtualError::Model(format!(
                "l1_bytes {} must be below l2_bytes {}",
                self.l1_bytes, self.l2_bytes
            )));
        }
        let lat = |l| self.latencies.get(&l);
        if let (Some(g), Some(l2), Some(l1)) = (
            lat(MemoryLevel::Global),
            lat(MemoryLevel::L2),
            lat(MemoryLevel::L1),
        ) {
            if !(g > l2 && l2 > l1) {
                return Err(VirtualError::Model(
                    "latencies must satisfy global > l2 > l1".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn latency(&self, level: MemoryLevel) -> Result<Cycles, VirtualError> {
        self.latencies
            .get(&level)
            .copied()
            .ok_or_else(|| VirtualError::MissingMemory(level.name().to_string()))
    }
}

/// Level that serves a load with operator `op` over a `footprint_bytes` array.
pub fn resolve_level(op: CacheOp, footprint_bytes: u64, mem: &MemoryHierarchyModel) -> MemoryLevel {
    match op {
        CacheOp::Cv => MemoryLevel::Global,
        CacheOp::Cg if footprint_bytes < mem.l2_bytes => MemoryLevel::L2,
        CacheOp::Cg => MemoryLevel::Global,
        CacheOp::Ca if footprint_bytes < mem.l1_bytes => MemoryLevel::L1,
        CacheOp::Ca if footprint_bytes < mem.l2_bytes => MemoryLevel::L2,
        CacheOp::Ca => MemoryLevel::Global,
    }
}

/// Operation count and elapsed cycles of a throughput phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThroughputSample {
    pub op_count: u64,
    pub elapsed_cycles: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticResult {
    pub bench_id: String,
    pub start_clock: u64,
    pub end_clock: u64,
    pub trace_lines: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<ThroughputSample>,
}

impl SyntheticResult {
    pub fn delta(&self) -> u64 {
        self.end_clock - self.start_clock
    }

    pub fn trace_text(&self) -> String {
        let mut s = self.trace_lines.join("\n");
        s.push('\n');
        s
    }

    pub fn trace_path(dir: &Path, bench_id: &str) -> PathBuf {
        dir.join(format!("{bench_id}.trace"))
    }

    pub fn clocks_path(dir: &Path, bench_id: &str) -> PathBuf {
        dir.join(format!("{bench_id}.clocks"))
    }

    /// Writes `<id>.trace` and `<id>.clocks` for the replay backend.
    pub fn save(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(Self::trace_path(dir, &self.bench_id), self.trace_text())?;
        fs::write(
            Self::clocks_path(dir, &self.bench_id),
            format_clocks(self.start_clock, self.end_clock, self.throughput),
        )
    }
}

/// Text of a clocks file: a `CLOCKS <start> <end>` line and, for WMMA runs,
/// a `THROUGHPUT <ops> <cycles>` line.
pub fn format_clocks(start: u64, end: u64, throughput: Option<ThroughputSample>) -> String {
    let mut s = format!("CLOCKS {start} {end}\n");
    if let Some(t) = throughput {
        s.push_str(&format!("THROUGHPUT {} {}\n", t.op_count, t.elapsed_cycles));
    }
    s
}

/// Parsed clocks text; the first `CLOCKS` line wins, other lines are ignored.
pub fn parse_clocks(text: &str) -> Option<(u64, u64, Option<ThroughputSample>)> {
    let mut clocks = None;
    let mut throughput = None;
    for line in text.lines() {
        let mut w = line.split_whitespace();
        match w.next() {
            Some("CLOCKS") if clocks.is_none() => {
                let a = w.next()?.parse().ok()?;
                let b = w.next()?.parse().ok()?;
                clocks = Some((a, b));
            }
            Some("THROUGHPUT") if throughput.is_none() => {
                let op_count = w.next()?.parse().ok()?;
                let elapsed_cycles = w.next()?.parse().ok()?;
                throughput = Some(ThroughputSample {
                    op_count,
                    elapsed_cycles,
                });
            }
            _ => {}
        }
    }
    clocks.map(|(a, b)| (a, b, throughput))
}

/// Extra cycles the first instructions of a cold timed region cost, read
/// off the table's launch curve: `n * cpi(n) - n * steady`.
pub fn cold_start_surcharge(table: &LatencyTable, n: u64) -> Cycles {
    let curve = &table.launch_curve;
    let Some(steady) = curve
        .windows(2)
        .find(|w| w[0].cpi == w[1].cpi)
        .map(|w| w[0].cpi)
        .or_else(|| curve.last().map(|p| p.cpi))
    else {
        return Cycles::ZERO;
    };
    match curve.iter().find(|p| p.count as u64 == n) {
        Some(p) => ((p.cpi - steady) * n as i64).max(Cycles::ZERO),
        None => Cycles::ZERO,
    }
}

/// Operation count and elapsed cycles whose throughput under the operand
/// byte metric equals the table's measured figure at `clock_rate_hz`.
pub fn throughput_replay(op: &TensorCoreOp, clock_rate_hz: u64) -> Option<ThroughputSample> {
    let measured = op.throughput?.measured_gbps;
    if !(measured.is_finite() && measured > 0.0) {
        return None;
    }
    let work = operand_bytes(op);
    // GB/s = ops * work * rate / (elapsed * 1e9); measured is kept to 1e-6.
    let micro = (measured * 1e6).round() as u64;
    let mut op_count = micro * 1_000;
    let mut elapsed_cycles = work * clock_rate_hz;
    let g = op_count.gcd(&elapsed_cycles);
    op_count /= g;
    elapsed_cycles /= g;
    Some(ThroughputSample {
        op_count,
        elapsed_cycles,
    })
}

/// Bytes of A, B and C consumed by one mma operation.
pub fn operand_bytes(op: &TensorCoreOp) -> u64 {
    let (m, n, k) = (op.shape.m as u64, op.shape.n as u64, op.shape.k as u64);
    let inb = op.in_type.bits() as u64;
    let accb = op.acc_type.bits() as u64;
    (m * k * inb + k * n * inb + m * n * accb) / 8
}

fn integral(id: &str, c: Cycles) -> Result<u64, VirtualError> {
    match c.to_integer() {
        Some(v) if v >= 0 => Ok(v as u64),
        _ => Err(VirtualError::NonIntegral(id.to_string())),
    }
}

struct TraceWriter {
    lines: Vec<String>,
    reg: u32,
}

impl TraceWriter {
    fn push(&mut self, opcode: &str, operands: &str) {
        let pc = (self.lines.len() - 1) * 16;
        if operands.is_empty() {
            self.lines.push(format!("/*{pc:04x}*/ {opcode} ;"));
        } else {
            self.lines
                .push(format!("/*{pc:04x}*/ {opcode} {operands} ;"));
        }
    }

    fn fresh(&mut self) -> String {
        self.reg += 2;
        format!("R{}", self.reg)
    }

    fn terms(&mut self, terms: &[SassTerm]) {
        for t in terms {
            for _ in 0..t.count {
                let d = self.fresh();
                self.push(&t.opcode, &format!("{d}, R4, R5"));
            }
        }
    }
}

/// Runs `bench` on the virtual device.
pub fn run_virtual(
    bench: &Microbenchmark,
    table: &LatencyTable,
    mem: &MemoryHierarchyModel,
) -> Result<SyntheticResult, VirtualError> {
    run_virtual_at(bench, table, mem, crate::analysis::DEFAULT_CLOCK_RATE_HZ)
}

/// As [`run_virtual`], with the clock rate used for the WMMA throughput phase.
pub fn run_virtual_at(
    bench: &Microbenchmark,
    table: &LatencyTable,
    mem: &MemoryHierarchyModel,
    clock_rate_hz: u64,
) -> Result<SyntheticResult, VirtualError> {
    let mut w = TraceWriter {
        lines: vec![format!("# virtual device trace: {}", bench.id)],
        reg: 8,
    };
    let mut notes = Vec::new();
    let mut throughput = None;
    w.push("MOV", "R1, c[0x0][0x28]");
    w.push("ULDC.64", "UR4, c[0x0][0x118]");
    let clock_op = match bench.clock_width {
        ClockWidth::Bits64 => "CS2R",
        ClockWidth::Bits32 => "CS2R.32",
    };
    w.push(clock_op, "R2, SR_CLOCKLO");
    let mut delta = table.clock_overhead;
    if bench.clock_width == ClockWidth::Bits32 {
        w.push("BAR.SYNC.DEFER_BLOCKING", "0x0");
        let penalty = table.barrier_penalty.unwrap_or(Cycles::ZERO);
        delta = delta + penalty;
        notes.push(format!(
            "32-bit clock registers: barrier adds {penalty} cycles"
        ));
    }
    let n = bench.timed_count;

    match &bench.target {
        BenchTarget::ClockOverhead => {}
        BenchTarget::Alu(spec) => {
            let key = spec.key();
            let rec = table
                .record(&key)
                .ok_or_else(|| VirtualError::MissingRecord(key.clone()))?;
            let per = if bench.variant == 0 {
                rec.cycles.min
            } else {
                rec.cycles.max
            };
            let surcharge = cold_start_surcharge(table, n);
            if !surcharge.is_zero() {
                notes.push(format!(
                    "cold-start surcharge {surcharge} cycles for {n} instruction(s)"
                ));
            }
            delta = delta + per * n as i64 + surcharge;
            let m = &rec.mapping;
            for _ in 0..n {
                if m.multi_instruction {
                    if let Some(h) = &m.hint {
                        let d = w.fresh();
                        w.push(h, &format!("{d}, R4"));
                    }
                } else {
                    let cands: Vec<&Vec<SassTerm>> = m.candidates().collect();
                    let pick = (bench.variant as usize).min(cands.len() - 1);
                    w.terms(cands[pick]);
                }
            }
        }
        BenchTarget::Memory(_) => {
            let chase = bench.chase.as_ref().ok_or_else(|| {
                VirtualError::Model(format!("{}: missing chase config", bench.id))
            })?;
            let level = resolve_level(chase.cache_op, chase.footprint_bytes(), mem);
            notes.push(format!("loads served by {}", level.name()));
            delta = delta + mem.latency(level)? * n as i64;
            let sass = global_load_sass(chase.cache_op);
            for _ in 0..n {
                w.push(sass, "R10, [R10.64]");
            }
        }
        BenchTarget::Shared(dir) => {
            let level = dir.level();
            delta =
                delta + mem.latency(level)? * n as i64 + Cycles::from_int(SHARED_FOLLOWUP_CYCLES);
            match dir {
                SharedDirection::Load => w.push("LDS.64", "R10, [UR4]"),
                SharedDirection::Store => w.push("STS.64", "[UR4], R10"),
            }
            w.push(SHARED_FOLLOWUP_SASS, "R12, P0, R10, 0x1, RZ");
        }
        BenchTarget::Wmma(op) => {
            let seeded = table
                .tensor_op(op.in_type, op.acc_type)
                .ok_or_else(|| VirtualError::MissingTensorOp(op.key()))?;
            delta = delta + Cycles::from_int(seeded.total_cycles() as i64) * n as i64;
            for _ in 0..op.iters {
                for _ in 0..crate::codegen::MMA_PER_ITER {
                    for _ in 0..seeded.sass_count {
                        w.push(&seeded.sass_opcode, "R16, R24, R28, R16");
                    }
                }
                w.push("NOP", "");
            }
            throughput = throughput_replay(seeded, clock_rate_hz);
        }
    }

    w.push(clock_op, "R4, SR_CLOCKLO");
    w.push("IADD3", "R6, P0, -R2, R4, RZ");
    w.push("STG.E.64", "[R8.64], R6");
    w.push("EXIT", "");
    let delta = integral(&bench.id, delta)?;
    Ok(SyntheticResult {
        bench_id: bench.id.clone(),
        start_clock: START_CLOCK,
        end_clock: START_CLOCK + delta,
        trace_lines: w.lines,
        notes,
        throughput,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{gen_alu, gen_clock_overhead, gen_memory, PointerChaseConfig};
    use crate::isa::parse_signature;
    use crate::seed::seed_paper_table;
    use crate::trace::{parse_trace, timed_region, ParseMode};

    fn model() -> MemoryHierarchyModel {
        MemoryHierarchyModel::from_table(&seed_paper_table(), &DeviceLimits::default()).unwrap()
    }

    #[test]
    fn add_u32_delta_is_eight() {
        let b = gen_alu(&parse_signature("add.u32").unwrap(), ClockWidth::Bits64).unwrap();
        let r = run_virtual(&b, &seed_paper_table(), &model()).unwrap();
        assert_eq!(r.delta(), 8);
        let t = parse_trace(&r.trace_text(), ParseMode::Strict).unwrap();
        let (a, z) = timed_region(&t.events).unwrap();
        let inside: Vec<&str> = t.events[a + 1..z]
            .iter()
            .map(|e| e.opcode.as_str())
            .collect();
        assert_eq!(inside, ["IADD"; 3]);
    }

    #[test]
    fn clock_pair_costs_two() {
        let r = run_virtual(
            &gen_clock_overhead(ClockWidth::Bits64),
            &seed_paper_table(),
            &model(),
        )
        .unwrap();
        assert_eq!(r.delta(), 2);
    }

    #[test]
    fn barrier_with_32_bit_clocks() {
        let b = gen_alu(&parse_signature("add.u32").unwrap(), ClockWidth::Bits32).unwrap();
        let r = run_virtual(&b, &seed_paper_table(), &model()).unwrap();
        assert_eq!(r.delta(), 3 * 2 + 33 + 2);
        assert!(r.trace_lines.iter().any(|l| l.contains("BAR")));
    }

    #[test]
    fn global_chase_delta() {
        let limits = DeviceLimits {
            l1_bytes: 1024,
            l2_bytes: 4096,
        };
        let mem = MemoryHierarchyModel::from_table(&seed_paper_table(), &limits).unwrap();
        let b = gen_memory(
            MemoryLevel::Global,
            &PointerChaseConfig::new(1024, CacheOp::Cv),
            &limits,
        )
        .unwrap();
        let r = run_virtual(&b, &seed_paper_table(), &mem).unwrap();
        assert_eq!(r.delta(), 1024 * 290 + 2);
    }

    #[test]
    fn resolve_level_rules() {
        let m = model();
        assert_eq!(resolve_level(CacheOp::Cv, 8, &m), MemoryLevel::Global);
        assert_eq!(resolve_level(CacheOp::Cg, 8, &m), MemoryLevel::L2);
        assert_eq!(
            resolve_level(CacheOp::Cg, m.l2_bytes, &m),
            MemoryLevel::Global
        );
        assert_eq!(resolve_level(CacheOp::Ca, 8, &m), MemoryLevel::L1);
        assert_eq!(resolve_level(CacheOp::Ca, m.l1_bytes, &m), MemoryLevel::L2);
    }

    #[test]
    fn surcharge_schedule_from_launch_curve() {
        let t = seed_paper_table();
        let s: Vec<Cycles> = (1..=5).map(|n| cold_start_surcharge(&t, n)).collect();
        assert_eq!(s, [3, 2, 0, 0, 0].map(Cycles::from_int));
    }

    #[test]
    fn clocks_file_round_trip() {
        let s = ThroughputSample {
            op_count: 7,
            elapsed_cycles: 9,
        };
        assert_eq!(
            parse_clocks(&format_clocks(1, 5, Some(s))),
            Some((1, 5, Some(s)))
        );
        assert_eq!(parse_clocks("noise\nCLOCKS 3 4\n"), Some((3, 4, None)));
        assert_eq!(parse_clocks("nothing"), None);
    }
}
