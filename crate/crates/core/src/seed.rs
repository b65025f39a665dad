//! Built-in A100 latency table.
//!
//! Reference Ampere A100 microbenchmark results: the
//! instruction inventory with its SASS expansions, dependent/independent
//! CPI pairs, memory access latencies, WMMA latencies and throughput, the
//! cold-start curve for `add.u32`, and the 32-bit clock barrier penalty.

use std::collections::BTreeMap;

use crate::cycles::{CycleRange, Cycles};
use crate::isa::{
    parse_signature, DataType, Dependency, Extra, LatencyRecord, LatencyTable, LaunchPoint, Layout,
    MemoryLevel, RecordSource, SassMapping, Shape, TensorCoreOp, ThroughputFigures,
};

pub const ARCHITECTURE: &str = "ampere-a100";

/// Signature of the clock-read row; measured by the clock-overhead kernel.
pub const CLOCK_READ_KEY: &str = "mov.clock.u32";

/// Default outer repetitions for WMMA kernels.
pub const DEFAULT_WMMA_ITERS: u32 = 128;

/// `(ptx, sass, cycles, note)`; rows sharing a PTX name merge into a range.
const INSTRUCTIONS: &[(&str, &str, &str, &str)] = &[
    // add / sub
    ("add.u16", "UIADD3", "2", ""),
    ("addc.u32", "IADD3.X", "2", ""),
    ("add.u32", "IADD", "2", ""),
    ("add.u64", "UIADD3.X+UIADD3", "4", ""),
    ("add.s64", "UIADD3.X+UIADD3", "4", ""),
    ("add.f16", "HADD", "2", ""),
    ("add.f32", "FADD", "2", ""),
    ("add.f64", "DADD", "4", ""),
    // mul
    ("mul.wide.u16", "LOP3.LUT+IMAD", "4", ""),
    ("mul.wide.u32", "IMAD", "4", ""),
    ("mul.lo.u16", "LOP3.LUT+IMAD", "4", ""),
    ("mul.lo.u32", "IMAD", "2", ""),
    ("mul.lo.u64", "IMAD", "2", ""),
    ("mul24.lo.u32", "PRMT+IMAD", "3", ""),
    ("mul24.hi.u32", "UPRMT+USHF.R.U32.HI+IMAD.U32+PRMT", "9", ""),
    ("mul.rn.f16", "HMUL2", "2", ""),
    ("mul.rn.f32", "FMUL", "2", ""),
    ("mul.rn.f64", "DMUL", "4", ""),
    // mad
    ("mad.lo.u16", "LOP3.LUT+IMAD", "4", ""),
    (
        "mad.lo.u32",
        "FFMA",
        "2",
        "integer mad reported on the floating-point pipeline (FFMA); may depend on compiler version",
    ),
    ("mad.lo.u64", "IMAD", "2", ""),
    ("mad24.lo.u32", "SGXT.U32+IMAD", "4", ""),
    ("mad24.hi.u32", "USHF.R.U32.HI+UIMAD.WIDE.U32+2*UPRMT+IADD3", "11", ""),
    ("mad.rn.f32", "FFMA", "2", ""),
    ("mad.rn.f64", "DFMA", "4", ""),
    // sad
    ("sad.u16", "2*LOP3+ULOP3+VABSDIFF", "6", ""),
    ("sad.s16", "2*LOP3+ULOP3+VABSDIFF", "6", ""),
    ("sad.u32", "VABSDIFF+IMAD", "3", "one IMAD and one UMOV per three instructions"),
    ("sad.s32", "VABSDIFF+IMAD", "3", "one IMAD and one UMOV per three instructions"),
    ("sad.u64", "UISETP.GE.U32.AND+UIADD+IADD", "10", ""),
    ("sad.s64", "UISETP.GE.U32.AND+UIADD+IADD", "10", ""),
    // div / rem
    ("rem.u16", "[multi]", "~290", ""),
    ("rem.s16", "[multi]", "~290", ""),
    ("div.u16", "[multi]", "~290", ""),
    ("div.s16", "[multi]", "~290", ""),
    ("rem.u32", "[multi]", "66", ""),
    ("rem.s32", "[multi]", "66", ""),
    ("div.u32", "[multi]", "66", ""),
    ("div.s32", "[multi]", "66", ""),
    ("rem.u64", "[multi]", "~420", ""),
    ("rem.s64", "[multi]", "~420", ""),
    ("div.u64", "[multi]", "~420", ""),
    ("div.s64", "[multi]", "~420", ""),
    ("div.rn.f32", "[multi]", "~525", ""),
    ("div.rn.f64", "[multi]", "~426", ""),
    // abs
    ("abs.s16", "PRMT+IABS+PRMT", "4", ""),
    ("abs.s32", "IABS", "2", ""),
    ("abs.s64", "UISETP.LT.AND+UIADD3.X+UIADD3+2*USEL", "~11", ""),
    ("abs.f16", "PRMT", "1", ""),
    ("abs.ftz.f32", "FADD.FTZ", "2", ""),
    ("abs.f64", "DADD | DADD+UMOV", "4", ""),
    // brev
    ("brev.b32", "BREV+SGXT.U32", "2", ""),
    ("brev.b64", "2*UBREV+MOV", "6", ""),
    // copysign
    (
        "copysign.f32",
        "2*LOP3.LUT",
        "4",
        "also observed as 1.5 LOP3.LUT per instruction",
    ),
    (
        "copysign.f64",
        "2*ULOP3.LUT+IMAD.U32+MOV",
        "6",
        "MOV count not fixed in the source listing",
    ),
    // and
    ("and.b16", "LOP3.LUT", "2", "also observed as 1.5 LOP3.LUT per instruction"),
    ("and.b32", "LOP3.LUT", "2", ""),
    ("and.b64", "ULOP3.LUT", "2-3", ""),
    // not
    ("not.b16", "LOP3.LUT", "2", ""),
    ("not.b32", "LOP3.LUT", "2", ""),
    ("not.b64", "2*ULOP3.LUT", "4", ""),
    // lop3
    ("lop3.b32", "IMAD.MOV.U32+LOP3.LUT", "4", ""),
    // cnot
    ("cnot.b16", "ULOP3.LUT+ISETP.EQ.U32.AND+SEL", "5", ""),
    ("cnot.b32", "UISETP.EQ.U32.AND+USEL", "4", ""),
    ("cnot.b64", "[multi]", "11", ""),
    // bfe
    ("bfe.s32", "3*PRMT+2*IMAD.MOV+SHF.R.U32.HI+SGXT", "11", ""),
    ("bfe.u32", "3*PRMT+2*IMAD.MOV+SHF.R.U32.HI+SGXT.U32", "11", ""),
    (
        "bfe.u64",
        "UMOV+USHF.L.U32+UIADD3+ULOP3.LUT",
        "5",
        "UIADD3+ULOP3.LUT group may repeat",
    ),
    ("bfe.s64", "[multi]", "14", ""),
    // min
    ("min.u16", "ULOP3.LUT+UISETP.LT.U32.AND+USEL", "8", ""),
    ("min.u32", "IMNMX.U32", "2", ""),
    ("min.u64", "UISETP.LT.U32.AND+2*USEL", "8", ""),
    ("min.s16", "PRMT+IMNMX", "4", ""),
    ("min.s32", "IMNMX", "2", ""),
    ("min.s64", "UISETP.LT.U32.AND+UISETP.LT.AND.EX+2*USEL", "8", ""),
    ("min.f16", "HMNMX2+PRMT", "4", ""),
    ("min.f32", "FMNMX", "2", ""),
    (
        "min.f64",
        "DSETP.MIN.AND+IMAD.MOV.U32+UMOV+FSEL",
        "10",
        "originally listed as 'min.f364'; read as min.f64",
    ),
    // neg
    ("neg.s16", "UIADD3+UPRMT", "5", ""),
    ("neg.s32", "IADD3", "2", ""),
    ("neg.s64", "IMAD.MOV.U32+HFMA2.MMA+MOV+UIADD3", "~10", ""),
    (
        "neg.f32",
        "FADD | IMAD.MOV.U32",
        "2",
        "IMAD.MOV.U32 when operands are initialised with mov",
    ),
    ("neg.f64", "DADD | DADD+UMOV", "4", ""),
    // fma
    ("fma.rn.f16", "HFMA2", "2", ""),
    ("fma.rn.f32", "FFMA", "2", ""),
    ("fma.rn.f64", "DFMA", "4", ""),
    // sqrt / rsqrt / rcp
    ("sqrt.rn.f32", "[multi MUFU.RSQ]", "190-235", ""),
    ("sqrt.approx.f32", "[multi MUFU.SQRT]", "2-18", ""),
    ("sqrt.rn.f64", "[multi MUFU.RSQ64]", "260-340", ""),
    ("rsqrt.approx.f32", "[multi MUFU.RSQ]", "2-18", ""),
    ("rsqrt.approx.f64", "MUFU.RSQ64H", "8-11", ""),
    ("rcp.rn.f32", "[multi MUFU.RCP]", "198", ""),
    ("rcp.approx.f32", "[multi MUFU.RCP]", "23", ""),
    ("rcp.rn.f64", "[multi MUFU.RCP64H]", "244", ""),
    // ex2 appears twice with different expansions and latencies.
    ("ex2.approx.f32", "FSTEP+FMUL+MUFU.EX2+FMUL", "14", ""),
    ("ex2.approx.f32", "FSETP.GEU.AND+2*FMUL+MUFU.EX2", "18", ""),
    // popc / clz / bfind
    ("popc.b32", "POPC", "6", "originally listed as 'popc.b32S'"),
    ("popc.b64", "2*UPOPC+UIADD3", "7", ""),
    ("clz.b32", "FLO.U32+IADD", "7", ""),
    ("clz.b64", "UISETP.NE.U32.AND+USEL+UFLO.U32+2*UIADD3", "13", ""),
    ("bfind.u32", "FLO.U32", "6", ""),
    ("bfind.u64", "FLO.U32+ISETP.NE.U32.AND+IADD3+BRA", "164", ""),
    ("bfind.s32", "FLO", "6", ""),
    ("bfind.s64", "[multi]", "195", ""),
    // testp
    (
        "testp.normal.f32",
        "IMAD.MOV.U32+2*ISETP.GE.U32.AND",
        "0 or 6",
        "reported as '0 or 6'; latency depends on operand state",
    ),
    (
        "testp.subnor.f32",
        "ISETP.LT.U32.AND",
        "0 or 6",
        "reported as '0 or 6'; latency depends on operand state",
    ),
    ("testp.normal.f64", "2*UISETP.LE.U32.AND+2*UISETP.GE.U32.AND", "13", ""),
    ("testp.subnor.f64", "UISETP.LT.U32.AND+2*UISETP.GE.U32.AND.EX", "8", ""),
    // transcendental and misc
    ("sin.approx.f32", "FMUL+MUFU.SIN", "8", ""),
    ("cos.approx.f32", "FMUL.RZ+MUFU.COS", "8", ""),
    ("lg2.approx.f32", "FSETP.GEU.AND+FMUL+MUFU.LG2+FADD", "18", ""),
    ("ex2.approx.f16", "MUFU.EX2.F16", "6", ""),
    ("tanh.approx.f32", "MUFU.TANH", "6", ""),
    ("tanh.approx.f16", "MUFU.TANH.F16", "6", ""),
    ("fns.b32", "[multi]", "79", ""),
    ("cvt.rzi.s32.f32", "F2I.TRUNC.NTZ", "6", ""),
    ("setp.ne.s32", "ISETP.NE.AND", "10", ""),
    (CLOCK_READ_KEY, "CS2R.32", "2", "mov.u32 from %clock"),
    // bfi
    ("bfi.b32", "3*PRMT+2*IMAD.MOV+SHF.L.U32+BMSK+LOP3.LUT", "~11", ""),
    (
        "bfi.b64",
        "UMOV+USHF.L.U32+UIADD3+ULOP3.LUT",
        "5",
        "UIADD3+ULOP3.LUT group may repeat",
    ),
    // dp4a / dp2a
    ("dp4a.u32.u32", "IMAD.MOV.U32+IDP.4A.U8.U8", "135-170", ""),
    ("dp2a.lo.u32.u32", "IMAD.MOV.U32+IDP.2A.LO.U16.U8", "135-170", ""),
];

/// Dependent-chain CPI with the expansion seen for the dependent form.
const DEPENDENT: &[(&str, &str, i64, &str)] = &[
    ("add.f16", "HADD", 3, ""),
    (
        "add.u32",
        "IADD3 | IMAD.IADD",
        4,
        "dependent chains map to IADD3 or IMAD.IADD",
    ),
    ("add.f64", "DADD", 5, ""),
    ("mul.lo.u32", "IMAD", 3, ""),
    ("mad.rn.f32", "FFMA", 4, ""),
];

/// Independent CPI for the same five instructions.
pub const INDEPENDENT_PAIRS: &[(&str, i64, i64)] = &[
    ("add.f16", 3, 2),
    ("add.u32", 4, 2),
    ("add.f64", 5, 4),
    ("mul.lo.u32", 3, 2),
    ("mad.rn.f32", 4, 2),
];

/// Average CPI of `add.u32` against the number of instructions timed.
pub const LAUNCH_CURVE: &[(u32, i64)] = &[(1, 5), (2, 3), (3, 2), (4, 2)];

/// Extra cycles a barrier adds between two 32-bit clock reads.
pub const BARRIER_PENALTY: i64 = 33;

pub const CLOCK_OVERHEAD: i64 = 2;

/// `(in, acc, shape, sass opcode, sass count, cycles per sass, layouts, measured, theoretical)`
type TensorRow = (
    DataType,
    DataType,
    Shape,
    &'static str,
    u32,
    u32,
    (Layout, Layout),
    f64,
    f64,
);

const TENSOR_OPS: &[TensorRow] = &[
    (
        DataType::F16,
        DataType::F16,
        Shape::new(16, 16, 16),
        "HMMA.16816.F16",
        2,
        8,
        (Layout::Row, Layout::Row),
        311.0,
        312.0,
    ),
    (
        DataType::F16,
        DataType::F32,
        Shape::new(16, 16, 16),
        "HMMA.16816.F32",
        2,
        8,
        (Layout::Row, Layout::Row),
        310.0,
        312.0,
    ),
    (
        DataType::Bf16,
        DataType::F32,
        Shape::new(16, 16, 16),
        "HMMA.16816.F32.BF16",
        2,
        8,
        (Layout::Row, Layout::Row),
        310.0,
        312.0,
    ),
    (
        DataType::Tf32,
        DataType::F32,
        Shape::new(16, 16, 8),
        "HMMA.1684.F32.TF32",
        4,
        4,
        (Layout::Row, Layout::Row),
        132.0,
        156.0,
    ),
    (
        DataType::F64,
        DataType::F64,
        Shape::new(8, 8, 4),
        "DMMA.884",
        1,
        16,
        (Layout::Row, Layout::Row),
        19.0,
        19.5,
    ),
    (
        DataType::U8,
        DataType::U32,
        Shape::new(16, 16, 16),
        "IMMA.16816.U8.U8",
        2,
        4,
        (Layout::Row, Layout::Row),
        594.0,
        624.0,
    ),
    (
        DataType::U4,
        DataType::U32,
        Shape::new(8, 8, 32),
        "IMMA.8832.U4.U4",
        1,
        4,
        (Layout::Row, Layout::Col),
        1229.0,
        1248.0,
    ),
];

/// Reference cycles per PTX mma instruction, in table order.
pub const TENSOR_CYCLES: &[u32] = &[16, 16, 16, 16, 16, 8, 4];

fn seed_record(
    ptx: &str,
    sass: &str,
    cycles: CycleRange,
    note: &str,
    dep: Dependency,
) -> LatencyRecord {
    let spec = parse_signature(ptx)
        .expect("seed signature")
        .with_dependency(dep);
    let mapping = SassMapping::parse(ptx, sass).expect("seed expansion");
    LatencyRecord {
        spec,
        mapping,
        cycles,
        source: RecordSource::PaperSeed,
        notes: if note.is_empty() {
            Vec::new()
        } else {
            vec![note.to_string()]
        },
        extra: Extra::new(),
    }
}

/// Instruction records in table order, duplicates merged.
fn instruction_records() -> Vec<LatencyRecord> {
    let mut out: Vec<LatencyRecord> = Vec::new();
    for &(ptx, sass, cycles, note) in INSTRUCTIONS {
        let range: CycleRange = cycles.parse().expect("seed cycles");
        let rec = seed_record(ptx, sass, range, note, Dependency::Independent);
        match out.iter_mut().find(|r| r.key() == rec.key()) {
            Some(existing) => {
                existing.cycles = existing.cycles.widen(&rec.cycles);
                existing.mapping.alternatives.push(rec.mapping.expansion);
                existing.notes.push(format!(
                    "listed twice ({} and {} cycles with different expansions)",
                    existing.cycles.min, existing.cycles.max
                ));
            }
            None => out.push(rec),
        }
    }
    out
}

/// The built-in A100 table.
pub fn seed_paper_table() -> LatencyTable {
    let mut table = LatencyTable::empty(ARCHITECTURE);
    for rec in instruction_records() {
        table.insert(rec).expect("unique seed signatures");
    }
    for &(ptx, sass, cpi, note) in DEPENDENT {
        table
            .insert(seed_record(
                ptx,
                sass,
                CycleRange::point(cpi),
                note,
                Dependency::Dependent,
            ))
            .expect("unique dependent signatures");
    }

    table.memory = BTreeMap::from([
        (MemoryLevel::Global, CycleRange::point(290)),
        (MemoryLevel::L2, CycleRange::approx(200)),
        (MemoryLevel::L1, CycleRange::point(33)),
        (MemoryLevel::SharedLoad, CycleRange::point(23)),
        (MemoryLevel::SharedStore, CycleRange::point(19)),
    ]);

    table.tensor_ops = TENSOR_OPS
        .iter()
        .map(
            |&(in_type, acc_type, shape, sass, count, per, (la, lb), measured, theoretical)| {
                TensorCoreOp {
                    shape,
                    in_type,
                    acc_type,
                    layout_a: la,
                    layout_b: lb,
                    layout_c: Layout::Row,
                    sass_opcode: sass.to_string(),
                    sass_count: count,
                    per_sass_cycles: per,
                    iters: DEFAULT_WMMA_ITERS,
                    throughput: Some(ThroughputFigures {
                        measured_gbps: measured,
                        theoretical_gbps: theoretical,
                    }),
                }
            },
        )
        .collect();

    table.clock_overhead = Cycles::from_int(CLOCK_OVERHEAD);
    table.barrier_penalty = Some(Cycles::from_int(BARRIER_PENALTY));
    table.launch_curve = LAUNCH_CURVE
        .iter()
        .map(|&(count, cpi)| LaunchPoint {
            count,
            cpi: Cycles::from_int(cpi),
        })
        .collect();
    table
}

/// Keys of every instruction record measured with an ALU kernel.
pub fn alu_keys(table: &LatencyTable) -> Vec<String> {
    table
        .records
        .keys()
        .filter(|k| k.as_str() != CLOCK_READ_KEY)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::SassTerm;

    #[test]
    fn memory_values() {
        let t = seed_paper_table();
        assert_eq!(t.memory[&MemoryLevel::Global], CycleRange::point(290));
        assert_eq!(t.memory[&MemoryLevel::L2], CycleRange::approx(200));
        assert_eq!(t.memory[&MemoryLevel::L1], CycleRange::point(33));
        assert_eq!(t.memory[&MemoryLevel::SharedLoad], CycleRange::point(23));
        assert_eq!(t.memory[&MemoryLevel::SharedStore], CycleRange::point(19));
        assert_eq!(t.clock_overhead, Cycles::from_int(2));
    }

    #[test]
    fn add_u32_record() {
        let t = seed_paper_table();
        let r = t.record("add.u32").unwrap();
        assert_eq!(r.cycles, CycleRange::point(2));
        assert_eq!(r.mapping.expansion, vec![SassTerm::new("IADD", 1)]);
        let d = t.record("add.u32:dep").unwrap();
        assert_eq!(d.cycles, CycleRange::point(4));
    }

    #[test]
    fn tensor_rows() {
        let t = seed_paper_table();
        let op = t.tensor_op(DataType::F16, DataType::F16).unwrap();
        assert_eq!(
            (op.sass_count, op.per_sass_cycles, op.total_cycles()),
            (2, 8, 16)
        );
        let totals: Vec<u32> = t.tensor_ops.iter().map(|o| o.total_cycles()).collect();
        assert_eq!(totals, TENSOR_CYCLES);
        assert!(t.tensor_ops.iter().all(|o| o.is_supported()));
    }

    #[test]
    fn merged_and_corrected_rows() {
        let t = seed_paper_table();
        let ex2 = t.record("ex2.approx.f32").unwrap();
        assert_eq!(ex2.cycles, CycleRange::range(14, 18));
        assert_eq!(ex2.mapping.alternatives.len(), 1);
        assert!(t.record("min.f64").unwrap().notes[0].contains("f364"));
        assert_eq!(
            t.record("testp.normal.f32").unwrap().cycles,
            CycleRange::range(0, 6)
        );
        assert!(t.record("div.rn.f32").unwrap().cycles.approx);
    }

    #[test]
    fn seed_is_consistent() {
        let t = seed_paper_table();
        assert!(t.problems().is_empty(), "{:?}", t.problems());
        for r in t.records.values() {
            if r.cycles.is_point() {
                assert_eq!(r.cycles.min, r.cycles.max);
            }
        }
    }
}
