//! Instruction-latency microbenchmarks for GPU PTX/SASS analysis.
//!
//! The pipeline: [`codegen`] writes PTX kernels (and WMMA source
//! descriptors), a [`runner`] backend executes them and returns two clock
//! readings plus a dynamic SASS trace, [`trace`] checks that the timed
//! region contains exactly the expected SASS, and [`analysis`] turns the
//! clocks into cycles per instruction. [`virtual_device`] replays a latency
//! table so the whole flow runs without a GPU; [`report`] persists, renders
//! and diffs tables.

pub mod analysis;
pub mod codegen;
pub mod cycles;
pub mod isa;
pub mod report;
pub mod runner;
pub mod seed;
pub mod trace;
pub mod virtual_device;

pub use cycles::{CycleRange, Cycles};
pub use isa::{
    parse_signature, CacheOp, DataType, Dependency, InstructionSpec, LatencyMeasurement,
    LatencyRecord, LatencyTable, Layout, MemoryLevel, RecordSource, SassMapping, SassTerm, Shape,
    TensorCoreOp,
};
pub use seed::seed_paper_table;
