//! Microbenchmark kernel generation.
//!
//! ALU, memory, shared-memory and clock-overhead kernels are emitted as PTX
//! text. WMMA kernels are emitted as annotated CUDA source, since the
//! fragment API has no stable hand-written PTX form. Every kernel brackets
//! its timed region with exactly two clock reads and stores both the clock
//! delta and the timed results so nothing in the region is dead code.

mod alu;
mod chase;
pub mod manifest;
mod memory;
mod ptx;
mod shared;
pub mod validate;
mod wmma;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::isa::{
    parse_signature, CacheOp, DataType, InstructionSpec, IsaError, LatencyTable, Layout,
    MemoryLevel, Shape, TensorCoreOp,
};
use crate::seed;

pub use alu::{gen_alu, gen_clock_overhead, supported_alu_opcodes};
pub use chase::{build_chase, ChaseLayout, PointerChaseConfig, CHASE_UNROLL};
pub use manifest::{Manifest, ManifestEntry};
pub use memory::gen_memory;
pub use shared::gen_shared;
pub use validate::{validate_ptx, ValidationReport};
pub use wmma::{gen_wmma, MMA_PER_ITER, WMMA_PROBE};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GenError {
    #[error("unsupported opcode '{opcode}'; supported: {supported}")]
    UnsupportedOpcode { opcode: String, supported: String },
    #[error("instruction count must be at least 1")]
    ZeroCount,
    #[error("dependent chain not possible for '{0}': result type differs from the first operand")]
    DependentUnsupported(String),
    #[error("unsupported data type {dtype} for '{opcode}'")]
    UnsupportedType { opcode: String, dtype: DataType },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error("bad benchmark id '{id}': {reason}")]
    BadId { id: String, reason: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockWidth {
    Bits32,
    #[default]
    Bits64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    ClockOverhead,
    Alu,
    Memory,
    Shared,
    Wmma,
}

impl BenchKind {
    pub const ALL: [BenchKind; 5] = [
        BenchKind::ClockOverhead,
        BenchKind::Alu,
        BenchKind::Memory,
        BenchKind::Shared,
        BenchKind::Wmma,
    ];

    /// Suffix used in benchmark ids and file names.
    pub fn suffix(self) -> &'static str {
        match self {
            BenchKind::ClockOverhead => "clock",
            BenchKind::Alu => "alu",
            BenchKind::Memory => "memory",
            BenchKind::Shared => "shared",
            BenchKind::Wmma => "wmma",
        }
    }

    pub fn file_extension(self) -> &'static str {
        match self {
            BenchKind::Wmma => "cu",
            _ => "ptx",
        }
    }
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

impl FromStr for BenchKind {
    type Err = GenError;
    fn from_str(s: &str) -> Result<Self, GenError> {
        BenchKind::ALL
            .into_iter()
            .find(|k| k.suffix() == s || (s == "clock_overhead" && *k == BenchKind::ClockOverhead))
            .ok_or_else(|| GenError::Config(format!("unknown benchmark kind '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SharedDirection {
    Load,
    Store,
}

impl SharedDirection {
    pub fn level(self) -> MemoryLevel {
        match self {
            SharedDirection::Load => MemoryLevel::SharedLoad,
            SharedDirection::Store => MemoryLevel::SharedStore,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SharedDirection::Load => "load",
            SharedDirection::Store => "store",
        }
    }
}

impl FromStr for SharedDirection {
    type Err = GenError;
    fn from_str(s: &str) -> Result<Self, GenError> {
        match s {
            "load" | "ld" => Ok(SharedDirection::Load),
            "store" | "st" => Ok(SharedDirection::Store),
            other => Err(GenError::Config(format!(
                "unknown shared direction '{other}'"
            ))),
        }
    }
}

/// Cache capacities used for pointer-chase sizing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceLimits {
    pub l1_bytes: u64,
    pub l2_bytes: u64,
}

impl Default for DeviceLimits {
    /// A100: 192 KiB L1 per SM, 40 MiB L2.
    fn default() -> Self {
        DeviceLimits {
            l1_bytes: 192 * 1024,
            l2_bytes: 40 * 1024 * 1024,
        }
    }
}

/// What a benchmark measures.
#[derive(Clone, Debug, PartialEq)]
pub enum BenchTarget {
    ClockOverhead,
    Alu(InstructionSpec),
    Memory(MemoryLevel),
    Shared(SharedDirection),
    Wmma(TensorCoreOp),
}

/// A generated kernel and the metadata its analysis needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Microbenchmark {
    pub id: String,
    pub target: BenchTarget,
    pub source_text: String,
    /// Dynamic count of measured instructions inside the clock window.
    pub timed_count: u64,
    /// Denominator used to turn the corrected delta into a per-instruction value.
    pub divisor: u64,
    pub clock_width: ClockWidth,
    pub chase: Option<PointerChaseConfig>,
    /// Operand-initialisation variant; ranged latencies are probed with two.
    pub variant: u32,
    /// PTX instruction (or source call) counted as the timed instruction.
    pub probe: Option<String>,
    /// Whether analysis subtracts a dependent follow-up instruction.
    pub subtract_followup: bool,
}

impl Microbenchmark {
    pub fn kind(&self) -> BenchKind {
        match self.target {
            BenchTarget::ClockOverhead => BenchKind::ClockOverhead,
            BenchTarget::Alu(_) => BenchKind::Alu,
            BenchTarget::Memory(_) => BenchKind::Memory,
            BenchTarget::Shared(_) => BenchKind::Shared,
            BenchTarget::Wmma(_) => BenchKind::Wmma,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.{}", self.id, self.kind().file_extension())
    }

    /// Parameters that regenerate this benchmark.
    pub fn request(&self) -> BenchRequest {
        let clock_width = self.clock_width;
        match &self.target {
            BenchTarget::ClockOverhead => BenchRequest::ClockOverhead { clock_width },
            BenchTarget::Alu(spec) => BenchRequest::Alu {
                spec: spec.clone(),
                clock_width,
                variant: self.variant,
            },
            BenchTarget::Memory(level) => BenchRequest::Memory {
                level: *level,
                chase: self
                    .chase
                    .clone()
                    .expect("memory benchmark carries a chase config"),
                clock_width,
            },
            BenchTarget::Shared(direction) => BenchRequest::Shared {
                direction: *direction,
                clock_width,
            },
            BenchTarget::Wmma(op) => BenchRequest::Wmma {
                op: WmmaRequest::from_op(op),
                iters: op.iters,
                clock_width,
            },
        }
    }
}

/// Tensor-core operation as written in a benchmark request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WmmaRequest {
    pub in_type: DataType,
    pub acc_type: DataType,
    pub shape: Shape,
    pub layout_a: Layout,
    pub layout_b: Layout,
    pub layout_c: Layout,
    pub sass_opcode: String,
    pub sass_count: u32,
    pub per_sass_cycles: u32,
}

impl WmmaRequest {
    pub fn from_op(op: &TensorCoreOp) -> Self {
        WmmaRequest {
            in_type: op.in_type,
            acc_type: op.acc_type,
            shape: op.shape,
            layout_a: op.layout_a,
            layout_b: op.layout_b,
            layout_c: op.layout_c,
            sass_opcode: op.sass_opcode.clone(),
            sass_count: op.sass_count,
            per_sass_cycles: op.per_sass_cycles,
        }
    }

    pub fn to_op(&self, iters: u32) -> TensorCoreOp {
        TensorCoreOp {
            shape: self.shape,
            in_type: self.in_type,
            acc_type: self.acc_type,
            layout_a: self.layout_a,
            layout_b: self.layout_b,
            layout_c: self.layout_c,
            sass_opcode: self.sass_opcode.clone(),
            sass_count: self.sass_count,
            per_sass_cycles: self.per_sass_cycles,
            iters,
            throughput: None,
        }
    }
}

/// Serializable description of a benchmark; the manifest stores these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchRequest {
    ClockOverhead {
        clock_width: ClockWidth,
    },
    Alu {
        spec: InstructionSpec,
        clock_width: ClockWidth,
        #[serde(default)]
        variant: u32,
    },
    Memory {
        level: MemoryLevel,
        chase: PointerChaseConfig,
        clock_width: ClockWidth,
    },
    Shared {
        direction: SharedDirection,
        clock_width: ClockWidth,
    },
    Wmma {
        op: WmmaRequest,
        iters: u32,
        clock_width: ClockWidth,
    },
}

impl BenchRequest {
    pub fn kind(&self) -> BenchKind {
        match self {
            BenchRequest::ClockOverhead { .. } => BenchKind::ClockOverhead,
            BenchRequest::Alu { .. } => BenchKind::Alu,
            BenchRequest::Memory { .. } => BenchKind::Memory,
            BenchRequest::Shared { .. } => BenchKind::Shared,
            BenchRequest::Wmma { .. } => BenchKind::Wmma,
        }
    }

    fn clock_width(&self) -> ClockWidth {
        match self {
            BenchRequest::ClockOverhead { clock_width }
            | BenchRequest::Alu { clock_width, .. }
            | BenchRequest::Memory { clock_width, .. }
            | BenchRequest::Shared { clock_width, .. }
            | BenchRequest::Wmma { clock_width, .. } => *clock_width,
        }
    }

    /// Benchmark id: `<target>[-flags].<kind>`.
    pub fn id(&self) -> String {
        let mut s = match self {
            BenchRequest::ClockOverhead { .. } => "clock".to_string(),
            BenchRequest::Alu { spec, variant, .. } => {
                let mut s = spec.signature();
                if spec.dependency == crate::isa::Dependency::Dependent {
                    s.push_str("-dep");
                }
                if spec.count != crate::isa::DEFAULT_COUNT {
                    s.push_str(&format!("-x{}", spec.count));
                }
                if *variant != 0 {
                    s.push_str(&format!("-v{variant}"));
                }
                s
            }
            BenchRequest::Memory { level, chase, .. } => {
                format!("{}-n{}", level.name(), chase.element_count)
            }
            BenchRequest::Shared { direction, .. } => direction.name().to_string(),
            BenchRequest::Wmma { op, iters, .. } => format!(
                "{}.{}.{}.{}.{}-i{}",
                op.in_type,
                op.acc_type,
                op.shape,
                op.layout_a.name(),
                op.layout_b.name(),
                iters
            ),
        };
        if self.clock_width() == ClockWidth::Bits32 {
            s.push_str("-clk32");
        }
        s.push('.');
        s.push_str(self.kind().suffix());
        s
    }

    /// Rebuilds a request from an id. Memory ids get the default random
    /// chase layout; WMMA ids take their SASS expectation from `table`.
    pub fn from_id(id: &str, table: &LatencyTable) -> Result<BenchRequest, GenError> {
        let bad = |reason: &str| GenError::BadId {
            id: id.to_string(),
            reason: reason.to_string(),
        };
        let (body, kind) = id
            .rsplit_once('.')
            .ok_or_else(|| bad("missing kind suffix"))?;
        let kind: BenchKind = kind.parse().map_err(|_| bad("unknown kind suffix"))?;
        let mut parts = body.split('-');
        let head = parts.next().unwrap_or_default();
        let mut clock_width = ClockWidth::Bits64;
        let mut dependent = false;
        let mut count = None;
        let mut variant = 0;
        let mut elements = None;
        let mut iters = None;
        for flag in parts {
            match flag {
                "clk32" => clock_width = ClockWidth::Bits32,
                "dep" => dependent = true,
                f if f.starts_with('x') => {
                    count = Some(f[1..].parse().map_err(|_| bad("bad count"))?)
                }
                f if f.starts_with('v') => {
                    variant = f[1..].parse().map_err(|_| bad("bad variant"))?
                }
                f if f.starts_with('n') => {
                    elements = Some(f[1..].parse().map_err(|_| bad("bad element count"))?)
                }
                f if f.starts_with('i') => {
                    iters = Some(f[1..].parse().map_err(|_| bad("bad iters"))?)
                }
                _ => return Err(bad(&format!("unknown flag '{flag}'"))),
            }
        }
        Ok(match kind {
            BenchKind::ClockOverhead => BenchRequest::ClockOverhead { clock_width },
            BenchKind::Alu => {
                let mut spec = parse_signature(head)?;
                if dependent {
                    spec.dependency = crate::isa::Dependency::Dependent;
                }
                if let Some(c) = count {
                    spec.count = c;
                }
                BenchRequest::Alu {
                    spec,
                    clock_width,
                    variant,
                }
            }
            BenchKind::Memory => {
                let level: MemoryLevel = head.parse().map_err(|_| bad("unknown memory level"))?;
                let cache_op = level
                    .cache_op()
                    .ok_or_else(|| bad("shared levels use the shared kind"))?;
                let element_count = elements.ok_or_else(|| bad("missing -n<elements>"))?;
                BenchRequest::Memory {
                    level,
                    chase: PointerChaseConfig::new(element_count, cache_op),
                    clock_width,
                }
            }
            BenchKind::Shared => BenchRequest::Shared {
                direction: head.parse()?,
                clock_width,
            },
            BenchKind::Wmma => {
                let fields: Vec<&str> = head.split('.').collect();
                if fields.len() != 5 {
                    return Err(bad("expected <in>.<acc>.<shape>.<layout_a>.<layout_b>"));
                }
                let in_type: DataType = fields[0].parse()?;
                let acc_type: DataType = fields[1].parse()?;
                let base = table
                    .tensor_op(in_type, acc_type)
                    .ok_or_else(|| bad("no tensor op for this type pair in the table"))?;
                let mut op = base.clone();
                op.shape = fields[2].parse()?;
                op.layout_a = fields[3].parse()?;
                op.layout_b = fields[4].parse()?;
                BenchRequest::Wmma {
                    op: WmmaRequest::from_op(&op),
                    iters: iters.unwrap_or(seed::DEFAULT_WMMA_ITERS),
                    clock_width,
                }
            }
        })
    }
}

/// Generates the kernel described by `request`.
pub fn generate(request: &BenchRequest, limits: &DeviceLimits) -> Result<Microbenchmark, GenError> {
    let mut bench = match request {
        BenchRequest::ClockOverhead { clock_width } => gen_clock_overhead(*clock_width),
        BenchRequest::Alu {
            spec,
            clock_width,
            variant,
        } => alu::gen_alu_variant(spec, *clock_width, *variant)?,
        BenchRequest::Memory {
            level,
            chase,
            clock_width,
        } => memory::gen_memory_with(*level, chase, limits, *clock_width)?,
        BenchRequest::Shared {
            direction,
            clock_width,
        } => shared::gen_shared_with(*direction, *clock_width),
        BenchRequest::Wmma {
            op,
            iters,
            clock_width,
        } => wmma::gen_wmma_with(&op.to_op(*iters), *iters, *clock_width)?,
    };
    bench.id = request.id();
    Ok(bench)
}

/// Element count for the default chase of `level` under `limits`.
pub fn default_chase_elements(level: MemoryLevel, limits: &DeviceLimits) -> u64 {
    let bytes = chase::ELEMENT_BYTES as u64;
    let unroll = CHASE_UNROLL as u64;
    match level {
        MemoryLevel::Global => (limits.l2_bytes / bytes / unroll + 1) * unroll,
        MemoryLevel::L2 => {
            let cap = (limits.l2_bytes.saturating_sub(1)) / bytes / unroll * unroll;
            cap.clamp(unroll, 1024)
        }
        MemoryLevel::L1 | MemoryLevel::SharedLoad | MemoryLevel::SharedStore => {
            let cap = (limits.l1_bytes.saturating_sub(1)) / bytes / unroll * unroll;
            cap.clamp(unroll, 1024)
        }
    }
}

/// Benchmark requests covering a whole latency table: the clock-overhead
/// kernel, one ALU kernel per instruction record (two operand variants for
/// ranged records), the three pointer chases, both shared-memory directions
/// and one WMMA kernel per tensor-core row.
pub fn inventory(
    table: &LatencyTable,
    limits: &DeviceLimits,
    kinds: &[BenchKind],
) -> Vec<BenchRequest> {
    let clock_width = ClockWidth::Bits64;
    let mut out = Vec::new();
    if kinds.contains(&BenchKind::ClockOverhead) {
        out.push(BenchRequest::ClockOverhead { clock_width });
    }
    if kinds.contains(&BenchKind::Alu) {
        for key in seed::alu_keys(table) {
            let rec = &table.records[&key];
            let spec = rec.spec.clone().with_count(crate::isa::DEFAULT_COUNT);
            let variants = if rec.cycles.is_point() { 1 } else { 2 };
            for variant in 0..variants {
                out.push(BenchRequest::Alu {
                    spec: spec.clone(),
                    clock_width,
                    variant,
                });
            }
        }
    }
    if kinds.contains(&BenchKind::Memory) {
        for level in [MemoryLevel::Global, MemoryLevel::L2, MemoryLevel::L1] {
            let cache_op: CacheOp = level.cache_op().expect("cached level");
            out.push(BenchRequest::Memory {
                level,
                chase: PointerChaseConfig::new(default_chase_elements(level, limits), cache_op),
                clock_width,
            });
        }
    }
    if kinds.contains(&BenchKind::Shared) {
        for direction in [SharedDirection::Load, SharedDirection::Store] {
            out.push(BenchRequest::Shared {
                direction,
                clock_width,
            });
        }
    }
    if kinds.contains(&BenchKind::Wmma) {
        for op in &table.tensor_ops {
            out.push(BenchRequest::Wmma {
                op: WmmaRequest::from_op(op),
                iters: op.iters,
                clock_width,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::seed_paper_table;

    #[test]
    fn ids_round_trip() {
        let table = seed_paper_table();
        let limits = DeviceLimits::default();
        for req in inventory(&table, &limits, &BenchKind::ALL) {
            let id = req.id();
            let back = BenchRequest::from_id(&id, &table).unwrap();
            assert_eq!(back.id(), id);
            if !matches!(req, BenchRequest::Memory { .. }) {
                assert_eq!(back, req, "{id}");
            }
        }
    }

    #[test]
    fn id_format() {
        let spec = parse_signature("add.u32:dep:x4").unwrap();
        let req = BenchRequest::Alu {
            spec,
            clock_width: ClockWidth::Bits32,
            variant: 1,
        };
        assert_eq!(req.id(), "add.u32-dep-x4-v1-clk32.alu");
    }

    #[test]
    fn every_inventory_kernel_validates() {
        let table = seed_paper_table();
        let limits = DeviceLimits {
            l1_bytes: 16 * 1024,
            l2_bytes: 64 * 1024,
        };
        for req in inventory(&table, &limits, &BenchKind::ALL) {
            let b = generate(&req, &limits).unwrap();
            let report = validate_ptx(&b.source_text);
            assert!(report.is_valid(), "{}: {:?}", b.id, report.errors);
            assert_eq!(report.timed_count(), b.timed_count, "{}", b.id);
            assert_eq!(report.clock_reads, 2, "{}", b.id);
        }
    }

    #[test]
    fn default_chase_sizes_respect_limits() {
        let limits = DeviceLimits::default();
        let g = default_chase_elements(MemoryLevel::Global, &limits);
        assert!(g * 8 > limits.l2_bytes && g.is_multiple_of(4));
        let l2 = default_chase_elements(MemoryLevel::L2, &limits);
        assert!(l2 * 8 < limits.l2_bytes);
        let l1 = default_chase_elements(MemoryLevel::L1, &limits);
        assert!(l1 * 8 < limits.l1_bytes);
    }
}
