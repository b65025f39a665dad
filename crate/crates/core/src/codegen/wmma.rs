//! Tensor-core WMMA kernels, emitted as annotated CUDA source.

use std::fmt::Write;

use crate::isa::{DataType, Layout, TensorCoreOp};

use super::ptx::sanitize;
use super::{BenchRequest, BenchTarget, ClockWidth, GenError, Microbenchmark, WmmaRequest};

/// Fragment sets issued per loop iteration, one per tensor core.
pub const MMA_PER_ITER: u64 = 4;

pub const WMMA_PROBE: &str = "wmma::mma_sync";

/// `(fragment element type, pointer element type)`.
fn cuda_types(t: DataType) -> (&'static str, &'static str) {
    match t {
        DataType::F16 => ("half", "half"),
        DataType::Bf16 => ("__nv_bfloat16", "__nv_bfloat16"),
        DataType::Tf32 => ("wmma::precision::tf32", "float"),
        DataType::F32 => ("float", "float"),
        DataType::F64 => ("double", "double"),
        DataType::U8 => ("unsigned char", "unsigned char"),
        DataType::U4 => ("wmma::experimental::precision::u4", "unsigned"),
        DataType::U32 | DataType::S32 => ("int", "int"),
        _ => ("float", "float"),
    }
}

fn major(l: Layout) -> &'static str {
    match l {
        Layout::Row => "wmma::row_major",
        Layout::Col => "wmma::col_major",
    }
}

fn mem_major(l: Layout) -> &'static str {
    match l {
        Layout::Row => "wmma::mem_row_major",
        Layout::Col => "wmma::mem_col_major",
    }
}

pub fn gen_wmma(op: &TensorCoreOp, iters: u32) -> Result<Microbenchmark, GenError> {
    gen_wmma_with(op, iters, ClockWidth::Bits64)
}

pub(crate) fn gen_wmma_with(
    op: &TensorCoreOp,
    iters: u32,
    clock_width: ClockWidth,
) -> Result<Microbenchmark, GenError> {
    op.check_supported()?;
    if iters == 0 {
        return Err(GenError::Config("iters must be at least 1".into()));
    }
    let mut op = op.clone();
    op.iters = iters;
    let id = BenchRequest::Wmma {
        op: WmmaRequest::from_op(&op),
        iters,
        clock_width,
    }
    .id();
    let timed = MMA_PER_ITER * iters as u64;
    let (a_frag, a_ptr) = cuda_types(op.in_type);
    let (c_frag, c_ptr) = cuda_types(op.acc_type);
    let (clock_fn, clock_ty) = match clock_width {
        ClockWidth::Bits64 => ("clock64()", "unsigned long long"),
        ClockWidth::Bits32 => ("clock()", "unsigned int"),
    };
    let lda = if op.layout_a == Layout::Row { "K" } else { "M" };
    let ldb = if op.layout_b == Layout::Row { "N" } else { "K" };
    let ldc = if op.layout_c == Layout::Row { "N" } else { "M" };
    let ptx = op.ptx_mma_name();

    let mut s = String::new();
    let _ = writeln!(s, "// id: {id}");
    let _ = writeln!(s, "// kind: wmma");
    let _ = writeln!(s, "// probe: {WMMA_PROBE}");
    let _ = writeln!(s, "// timed_count: {timed}");
    let _ = writeln!(s, "// divisor: {timed}");
    let _ = writeln!(s, "// @ptx {ptx}");
    let _ = writeln!(s, "// @sass {}", op.sass_expansion());
    let _ = writeln!(s, "// @expected_cycles {}", op.total_cycles());
    s.push('\n');
    s.push_str(
        "#include <cstdio>\n#include <mma.h>\n#include <cuda_bf16.h>\nusing namespace nvcuda;\n\n",
    );
    let _ = writeln!(
        s,
        "#define M {}\n#define N {}\n#define K {}",
        op.shape.m, op.shape.n, op.shape.k
    );
    let _ = writeln!(s, "#define ITERS {iters}\n");
    let _ = writeln!(
        s,
        "__global__ void {}(const {a_ptr} *a, const {a_ptr} *b, const {c_ptr} *c, {c_ptr} *d, unsigned long long *out)\n{{",
        sanitize(&id)
    );
    let _ = writeln!(s, "    {clock_ty} start_time = 0, end_time = 0;");
    s.push_str("    // fragments: one set per tensor core\n");
    let _ = writeln!(
        s,
        "    wmma::fragment<wmma::matrix_a, M, N, K, {a_frag}, {}> a0_frag, a1_frag, a2_frag, a3_frag;",
        major(op.layout_a)
    );
    let _ = writeln!(
        s,
        "    wmma::fragment<wmma::matrix_b, M, N, K, {a_frag}, {}> b0_frag, b1_frag, b2_frag, b3_frag;",
        major(op.layout_b)
    );
    let _ = writeln!(
        s,
        "    wmma::fragment<wmma::accumulator, M, N, K, {c_frag}> c0_frag, c1_frag, c2_frag, c3_frag;\n"
    );
    s.push_str("    // load phase\n");
    for f in 0..MMA_PER_ITER {
        let _ = writeln!(
            s,
            "    wmma::load_matrix_sync(a{f}_frag, a + {f} * M * K, {lda});"
        );
        let _ = writeln!(
            s,
            "    wmma::load_matrix_sync(b{f}_frag, b + {f} * K * N, {ldb});"
        );
        let _ = writeln!(
            s,
            "    wmma::load_matrix_sync(c{f}_frag, c + {f} * M * N, {ldc}, {});",
            mem_major(op.layout_c)
        );
    }
    s.push_str("\n    // timed phase\n");
    let _ = writeln!(s, "    start_time = {clock_fn};");
    s.push_str("    for (int i = 0; i < ITERS; i++) {\n");
    for f in 0..MMA_PER_ITER {
        let _ = writeln!(
            s,
            "        wmma::mma_sync(c{f}_frag, a{f}_frag, b{f}_frag, c{f}_frag); // {ptx}"
        );
    }
    s.push_str("    }\n");
    let _ = writeln!(s, "    end_time = {clock_fn};\n");
    s.push_str("    // store phase\n");
    for f in 0..MMA_PER_ITER {
        let _ = writeln!(
            s,
            "    wmma::store_matrix_sync(d + {f} * M * N, c{f}_frag, {ldc}, {});",
            mem_major(op.layout_c)
        );
    }
    s.push_str("\n    if (threadIdx.x == 0) {\n");
    s.push_str("        out[0] = end_time - start_time;\n");
    s.push_str("        printf(\"CLOCKS %llu %llu\\n\", (unsigned long long)start_time, (unsigned long long)end_time);\n");
    s.push_str("    }\n}\n");

    Ok(Microbenchmark {
        id,
        target: BenchTarget::Wmma(op),
        source_text: s,
        timed_count: timed,
        divisor: timed,
        clock_width,
        chase: None,
        variant: 0,
        probe: Some(WMMA_PROBE.to_string()),
        subtract_followup: false,
    })
}
