//! Arithmetic/logic kernels and the clock-overhead kernel.

use crate::isa::{DataType, Dependency, InstructionSpec};

use super::ptx::{KernelBuilder, RegClass};
use super::{BenchRequest, BenchTarget, ClockWidth, GenError, Microbenchmark};

/// Opcodes the ALU generator knows operand shapes for.
const SUPPORTED: &[&str] = &[
    "abs", "add", "addc", "and", "bfe", "bfi", "bfind", "brev", "clz", "cnot", "copysign", "cos",
    "cvt", "div", "dp2a", "dp4a", "ex2", "fma", "fns", "lg2", "lop3", "mad", "mad24", "max", "min",
    "mul", "mul24", "neg", "not", "or", "popc", "rcp", "rem", "rsqrt", "sad", "setp", "sin",
    "sqrt", "sub", "tanh", "testp", "xor",
];

pub fn supported_alu_opcodes() -> &'static [&'static str] {
    SUPPORTED
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Src {
    Reg(DataType),
    Imm(&'static str),
}

/// Register types of one instruction form.
struct Form {
    dst: DataType,
    srcs: Vec<Src>,
}

fn form(spec: &InstructionSpec) -> Result<Form, GenError> {
    use DataType::*;
    let t = spec.dtype;
    let unsupported_type = || GenError::UnsupportedType {
        opcode: spec.signature(),
        dtype: t,
    };
    if RegClass::of(t).is_none() || t == Pred {
        return Err(unsupported_type());
    }
    let reg = Src::Reg;
    let f = match spec.opcode.as_str() {
        "add" | "addc" | "sub" | "min" | "max" | "and" | "or" | "xor" | "div" | "rem"
        | "copysign" | "mul24" | "mul" => {
            let dst = if spec.has_modifier("wide") {
                t.widened().ok_or_else(unsupported_type)?
            } else {
                t
            };
            Form {
                dst,
                srcs: vec![reg(t), reg(t)],
            }
        }
        "mad" | "fma" | "mad24" | "sad" => {
            let dst = if spec.has_modifier("wide") {
                t.widened().ok_or_else(unsupported_type)?
            } else {
                t
            };
            Form {
                dst,
                srcs: vec![reg(t), reg(t), reg(dst)],
            }
        }
        "neg" | "abs" | "not" | "cnot" | "brev" | "sqrt" | "rsqrt" | "rcp" | "ex2" | "lg2"
        | "sin" | "cos" | "tanh" => Form {
            dst: t,
            srcs: vec![reg(t)],
        },
        "popc" | "clz" | "bfind" => Form {
            dst: U32,
            srcs: vec![reg(t)],
        },
        "testp" => Form {
            dst: Pred,
            srcs: vec![reg(t)],
        },
        "setp" => Form {
            dst: Pred,
            srcs: vec![reg(t), reg(t)],
        },
        "cvt" => {
            let dst = spec
                .modifiers
                .iter()
                .find_map(|m| m.parse::<DataType>().ok())
                .ok_or_else(unsupported_type)?;
            Form {
                dst,
                srcs: vec![reg(t)],
            }
        }
        "lop3" => Form {
            dst: t,
            srcs: vec![reg(t), reg(t), reg(t), Src::Imm("0xE8")],
        },
        "bfe" => Form {
            dst: t,
            srcs: vec![reg(t), reg(U32), reg(U32)],
        },
        "bfi" => Form {
            dst: t,
            srcs: vec![reg(t), reg(t), reg(U32), reg(U32)],
        },
        "fns" => Form {
            dst: B32,
            srcs: vec![reg(B32), reg(U32), reg(S32)],
        },
        "dp4a" | "dp2a" => Form {
            dst: t,
            srcs: vec![reg(B32), reg(B32), reg(t)],
        },
        other => {
            return Err(GenError::UnsupportedOpcode {
                opcode: other.to_string(),
                supported: SUPPORTED.join(", "),
            })
        }
    };
    Ok(f)
}

/// PTX spelling of the instruction; table keys abbreviate a few modifiers.
pub(crate) fn ptx_opcode_text(spec: &InstructionSpec) -> String {
    let mut parts = vec![spec.opcode.clone()];
    for m in &spec.modifiers {
        parts.push(match m.as_str() {
            "subnor" => "subnormal".to_string(),
            other => other.to_string(),
        });
    }
    parts.push(spec.dtype.name().to_string());
    parts.join(".")
}

/// Literal initial value for source operand `index` of type `dtype`.
fn init_value(dtype: DataType, index: usize, variant: u32) -> (String, String) {
    let class = RegClass::of(dtype).expect("register type");
    let i = index as u64;
    let value = match dtype {
        DataType::F16 => {
            let table = if variant == 0 {
                ["0x3C00", "0x4000", "0x4200", "0x4400"]
            } else {
                ["0x5A40", "0x5640", "0x4900", "0x6000"]
            };
            table[index % 4].to_string()
        }
        DataType::F32 => {
            let table = if variant == 0 {
                ["0f3F800000", "0f40000000", "0f40400000", "0f40800000"]
            } else {
                ["0f47C35000", "0f41200000", "0f3DCCCCCD", "0f4B189680"]
            };
            table[index % 4].to_string()
        }
        DataType::F64 => {
            let table = if variant == 0 {
                [
                    "0d3FF0000000000000",
                    "0d4000000000000000",
                    "0d4008000000000000",
                    "0d4010000000000000",
                ]
            } else {
                [
                    "0d40F86A0000000000",
                    "0d4024000000000000",
                    "0d3FB999999999999A",
                    "0d416312D000000000",
                ]
            };
            table[index % 4].to_string()
        }
        _ => {
            if variant == 0 {
                (3 + 2 * i).to_string()
            } else {
                (251 + 1000 * i)
                    .min(match class {
                        RegClass::B16 => 0x7fff,
                        _ => u32::MAX as u64,
                    })
                    .to_string()
            }
        }
    };
    (format!("mov.{}", class.move_type()), value)
}

pub fn gen_alu(
    spec: &InstructionSpec,
    clock_width: ClockWidth,
) -> Result<Microbenchmark, GenError> {
    gen_alu_variant(spec, clock_width, 0)
}

/// ALU kernel: parameter load, clock read, `count` copies of the
/// instruction, clock read, delta store and sentinel stores of every result.
pub(crate) fn gen_alu_variant(
    spec: &InstructionSpec,
    clock_width: ClockWidth,
    variant: u32,
) -> Result<Microbenchmark, GenError> {
    if spec.count == 0 {
        return Err(GenError::ZeroCount);
    }
    let form = form(spec)?;
    let dependent = spec.dependency == Dependency::Dependent;
    let dst_class = RegClass::of(form.dst).expect("register type");
    if dependent {
        let first = match form.srcs.first() {
            Some(Src::Reg(t)) => RegClass::of(*t),
            _ => None,
        };
        if dst_class == RegClass::Pred || first != Some(dst_class) {
            return Err(GenError::DependentUnsupported(spec.signature()));
        }
    }

    let request = BenchRequest::Alu {
        spec: spec.clone(),
        clock_width,
        variant,
    };
    let id = request.id();
    let opcode = ptx_opcode_text(spec);
    let mut k = KernelBuilder::new(&id);
    k.header("id", &id);
    k.header("kind", "alu");
    k.header("probe", &opcode);
    k.header("timed_count", spec.count);
    k.header("divisor", spec.count);

    let out_param = k.param();
    let out = k.global_pointer(&out_param);

    let mut srcs = Vec::new();
    for (i, s) in form.srcs.iter().enumerate() {
        match s {
            Src::Reg(t) => {
                let class = RegClass::of(*t).expect("register type");
                let r = k.reg(class);
                let (mov, value) = init_value(*t, i, variant);
                k.ins(&mov, &[&r, &value]);
                srcs.push(r);
            }
            Src::Imm(v) => srcs.push(v.to_string()),
        }
    }

    let mut results = Vec::new();
    let start = k.clock(clock_width);
    if dependent {
        let acc = srcs[0].clone();
        for _ in 0..spec.count {
            let mut ops: Vec<&str> = vec![&acc];
            ops.extend(srcs.iter().map(String::as_str));
            k.ins(&opcode, &ops);
        }
        results.push(acc);
    } else {
        let dsts: Vec<String> = (0..spec.count).map(|_| k.reg(dst_class)).collect();
        for d in &dsts {
            let mut ops: Vec<&str> = vec![d];
            ops.extend(srcs.iter().map(String::as_str));
            k.ins(&opcode, &ops);
        }
        results = dsts;
    }
    let end = k.clock(clock_width);
    k.store_delta(clock_width, &out, &start, &end);
    for (i, r) in results.iter().enumerate() {
        k.store_value(&out, 8 * (i as u64 + 1), r, dst_class);
    }

    Ok(Microbenchmark {
        id,
        target: BenchTarget::Alu(spec.clone()),
        source_text: k.finish(),
        timed_count: spec.count as u64,
        divisor: spec.count as u64,
        clock_width,
        chase: None,
        variant,
        probe: Some(opcode),
        subtract_followup: false,
    })
}

/// Two back-to-back clock reads with nothing between them.
pub fn gen_clock_overhead(clock_width: ClockWidth) -> Microbenchmark {
    let id = BenchRequest::ClockOverhead { clock_width }.id();
    let mut k = KernelBuilder::new(&id);
    k.header("id", &id);
    k.header("kind", "clock_overhead");
    k.header("timed_count", 0);
    k.header("divisor", 1);
    let out_param = k.param();
    let out = k.global_pointer(&out_param);
    let start = k.clock(clock_width);
    let end = k.clock(clock_width);
    k.store_delta(clock_width, &out, &start, &end);
    Microbenchmark {
        id,
        target: BenchTarget::ClockOverhead,
        source_text: k.finish(),
        timed_count: 0,
        divisor: 1,
        clock_width,
        chase: None,
        variant: 0,
        probe: None,
        subtract_followup: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::parse_signature;

    #[test]
    fn independent_adds_use_disjoint_destinations() {
        let b = gen_alu(&parse_signature("add.u32").unwrap(), ClockWidth::Bits64).unwrap();
        let adds: Vec<&str> = b
            .source_text
            .lines()
            .filter(|l| l.trim_start().starts_with("add.u32"))
            .collect();
        assert_eq!(adds.len(), 3);
        let dsts: std::collections::BTreeSet<&str> = adds
            .iter()
            .map(|l| l.split_whitespace().nth(1).unwrap())
            .collect();
        assert_eq!(dsts.len(), 3);
        assert_eq!(b.timed_count, 3);
    }

    #[test]
    fn dependent_adds_chain_through_one_register() {
        let b = gen_alu(&parse_signature("add.u32:dep").unwrap(), ClockWidth::Bits64).unwrap();
        let adds: Vec<Vec<&str>> = b
            .source_text
            .lines()
            .filter(|l| l.trim_start().starts_with("add.u32"))
            .map(|l| {
                l.split_whitespace()
                    .skip(1)
                    .map(|t| t.trim_end_matches([',', ';']))
                    .collect()
            })
            .collect();
        assert_eq!(adds.len(), 3);
        for a in &adds {
            assert_eq!(a[0], a[1]);
            assert_eq!(a[0], adds[0][0]);
        }
    }

    #[test]
    fn rejects_unknown_opcode_and_zero_count() {
        let spec = parse_signature("frob.u32").unwrap();
        match gen_alu(&spec, ClockWidth::Bits64) {
            Err(GenError::UnsupportedOpcode { supported, .. }) => {
                assert!(supported.contains("add"))
            }
            other => panic!("{other:?}"),
        }
        let spec = parse_signature("add.u32").unwrap().with_count(0);
        assert_eq!(gen_alu(&spec, ClockWidth::Bits64), Err(GenError::ZeroCount));
    }

    #[test]
    fn dependent_type_changing_op_is_rejected() {
        let spec = parse_signature("setp.ne.s32:dep").unwrap();
        assert!(matches!(
            gen_alu(&spec, ClockWidth::Bits64),
            Err(GenError::DependentUnsupported(_))
        ));
    }

    #[test]
    fn clock_overhead_reads_are_adjacent() {
        let b = gen_clock_overhead(ClockWidth::Bits64);
        let lines: Vec<&str> = b.source_text.lines().collect();
        let i = lines.iter().position(|l| l.contains("%clock64")).unwrap();
        assert!(lines[i + 1].contains("%clock64"));
        assert_eq!(b.timed_count, 0);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = parse_signature("mad.rn.f32").unwrap();
        let a = gen_alu(&spec, ClockWidth::Bits64).unwrap();
        let b = gen_alu(&spec, ClockWidth::Bits64).unwrap();
        assert_eq!(a.source_text, b.source_text);
    }
}
