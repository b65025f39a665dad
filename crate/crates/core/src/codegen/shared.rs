//! Single-access shared-memory kernels.

use super::ptx::{KernelBuilder, RegClass};
use super::{BenchRequest, BenchTarget, ClockWidth, Microbenchmark, SharedDirection};

pub fn gen_shared(direction: SharedDirection) -> Microbenchmark {
    gen_shared_with(direction, ClockWidth::Bits64)
}

/// One shared access followed by a dependent `add.u64` inside the clock
/// window; the add keeps the second clock read from issuing early, and its
/// cost is subtracted during analysis.
pub(crate) fn gen_shared_with(
    direction: SharedDirection,
    clock_width: ClockWidth,
) -> Microbenchmark {
    let id = BenchRequest::Shared {
        direction,
        clock_width,
    }
    .id();
    let probe = match direction {
        SharedDirection::Load => "ld.shared.u64",
        SharedDirection::Store => "st.shared.u64",
    };
    let mut k = KernelBuilder::new(&id);
    k.header("id", &id);
    k.header("kind", "shared");
    k.header("probe", probe);
    k.header("timed_count", 1);
    k.header("divisor", 1);
    k.header("followup", "add.u64");
    k.module_decl(".shared .align 8 .b8 shMem1[32];");

    let p_out = k.param();
    let out = k.global_pointer(&p_out);
    let result = match direction {
        SharedDirection::Load => {
            let seed = k.reg(RegClass::B64);
            k.ins("mov.u64", &[&seed, "50"]);
            k.ins("st.shared.u64", &["[shMem1]", &seed]);
            let start = k.clock(clock_width);
            let loaded = k.reg(RegClass::B64);
            let sum = k.reg(RegClass::B64);
            k.ins("ld.shared.u64", &[&loaded, "[shMem1]"]);
            k.ins("add.u64", &[&sum, &loaded, "1"]);
            let end = k.clock(clock_width);
            k.store_delta(clock_width, &out, &start, &end);
            sum
        }
        SharedDirection::Store => {
            let base = k.reg(RegClass::B64);
            k.ins("mov.u64", &[&base, "7"]);
            let start = k.clock(clock_width);
            let sum = k.reg(RegClass::B64);
            k.ins("st.shared.u64", &["[shMem1]", "50"]);
            k.ins("add.u64", &[&sum, &base, "1"]);
            let end = k.clock(clock_width);
            k.store_delta(clock_width, &out, &start, &end);
            sum
        }
    };
    k.store_value(&out, 8, &result, RegClass::B64);

    Microbenchmark {
        id,
        target: BenchTarget::Shared(direction),
        source_text: k.finish(),
        timed_count: 1,
        divisor: 1,
        clock_width,
        chase: None,
        variant: 0,
        probe: Some(probe.to_string()),
        subtract_followup: true,
    }
}
