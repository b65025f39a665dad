//! Pointer-chase kernels for global memory, L2 and L1.

use crate::isa::{CacheOp, MemoryLevel};

use super::chase::PointerChaseConfig;
use super::ptx::{KernelBuilder, RegClass};
use super::{BenchRequest, BenchTarget, ClockWidth, DeviceLimits, GenError, Microbenchmark};

/// Checks the cache operator and footprint rules for `level`.
fn check_sizing(
    level: MemoryLevel,
    chase: &PointerChaseConfig,
    limits: &DeviceLimits,
) -> Result<(), GenError> {
    let expected: CacheOp = level.cache_op().ok_or_else(|| {
        GenError::Config(format!(
            "{} is measured with the shared-memory kernel",
            level.name()
        ))
    })?;
    if chase.cache_op != expected {
        return Err(GenError::Config(format!(
            "{} loads must use .{} (got .{})",
            level.name(),
            expected,
            chase.cache_op
        )));
    }
    chase.check()?;
    let bytes = chase.footprint_bytes();
    match level {
        MemoryLevel::Global if bytes <= limits.l2_bytes => Err(GenError::Config(format!(
            "global footprint {bytes} B must exceed the L2 capacity {} B",
            limits.l2_bytes
        ))),
        MemoryLevel::L2 if bytes >= limits.l2_bytes => Err(GenError::Config(format!(
            "l2 footprint {bytes} B must be below the L2 capacity {} B",
            limits.l2_bytes
        ))),
        MemoryLevel::L1 if bytes >= limits.l1_bytes => Err(GenError::Config(format!(
            "l1 footprint {bytes} B must be below the L1 capacity {} B",
            limits.l1_bytes
        ))),
        _ => Ok(()),
    }
}

pub fn gen_memory(
    level: MemoryLevel,
    chase: &PointerChaseConfig,
    limits: &DeviceLimits,
) -> Result<Microbenchmark, GenError> {
    gen_memory_with(level, chase, limits, ClockWidth::Bits64)
}

/// The kernel takes three pointers: the output buffer, the chase array and
/// the next-index table produced by [`build_chase`](super::build_chase).
/// A store loop writes `arr[i] = &arr[next[i]]`, then a timed loop follows
/// the chain with four dependent loads per iteration.
pub(crate) fn gen_memory_with(
    level: MemoryLevel,
    chase: &PointerChaseConfig,
    limits: &DeviceLimits,
    clock_width: ClockWidth,
) -> Result<Microbenchmark, GenError> {
    check_sizing(level, chase, limits)?;
    let request = BenchRequest::Memory {
        level,
        chase: chase.clone(),
        clock_width,
    };
    let id = request.id();
    let n = chase.element_count.to_string();
    let load = format!("ld.global.{}.u64", chase.cache_op);

    let mut k = KernelBuilder::new(&id);
    k.header("id", &id);
    k.header("kind", "memory");
    k.header("probe", &load);
    k.header("timed_count", chase.element_count);
    k.header("divisor", chase.element_count);
    k.header("footprint_bytes", chase.footprint_bytes());

    let p_out = k.param();
    let p_arr = k.param();
    let p_next = k.param();
    let out = k.global_pointer(&p_out);
    let arr = k.global_pointer(&p_arr);
    let next = k.global_pointer(&p_next);

    k.comment("build the chain: arr[i] = &arr[next[i]]");
    let i = k.reg(RegClass::B64);
    k.ins("mov.u64", &[&i, "0"]);
    k.label("$Mem_store");
    let off = k.reg(RegClass::B64);
    let next_ptr = k.reg(RegClass::B64);
    let arr_ptr = k.reg(RegClass::B64);
    k.ins("shl.b64", &[&off, &i, "3"]);
    k.ins("add.u64", &[&next_ptr, &next, &off]);
    k.ins("add.u64", &[&arr_ptr, &arr, &off]);
    for u in 0..chase.unroll as u64 {
        let idx = k.reg(RegClass::B64);
        let scaled = k.reg(RegClass::B64);
        let target = k.reg(RegClass::B64);
        k.ins("ld.global.u64", &[&idx, &format!("[{next_ptr}+{}]", 8 * u)]);
        k.ins("shl.b64", &[&scaled, &idx, "3"]);
        k.ins("add.u64", &[&target, &arr, &scaled]);
        k.ins(
            "st.wt.global.u64",
            &[&format!("[{arr_ptr}+{}]", 8 * u), &target],
        );
    }
    let store_pred = k.reg(RegClass::Pred);
    k.ins("add.u64", &[&i, &i, &chase.unroll.to_string()]);
    k.ins("setp.lt.u64", &[&store_pred, &i, &n]);
    k.guarded(&store_pred, "bra", &["$Mem_store"]);
    k.blank();

    let ptr = k.reg(RegClass::B64);
    let j = k.reg(RegClass::B64);
    k.ins("mov.u64", &[&ptr, &arr]);
    k.ins("mov.u64", &[&j, "0"]);
    let load_pred = k.reg(RegClass::Pred);
    let start = k.clock(clock_width);
    k.label("$Mem_load");
    for _ in 0..chase.unroll {
        k.ins(&load, &[&ptr, &format!("[{ptr}]")]);
    }
    k.ins("add.u64", &[&j, &j, &chase.unroll.to_string()]);
    k.ins("setp.lt.u64", &[&load_pred, &j, &n]);
    k.guarded(&load_pred, "bra", &["$Mem_load"]);
    let end = k.clock(clock_width);
    k.store_delta(clock_width, &out, &start, &end);
    k.store_value(&out, 8, &ptr, RegClass::B64);

    Ok(Microbenchmark {
        id,
        target: BenchTarget::Memory(level),
        source_text: k.finish(),
        timed_count: chase.element_count,
        divisor: chase.element_count,
        clock_width,
        chase: Some(chase.clone()),
        variant: 0,
        probe: Some(load),
        subtract_followup: false,
    })
}
