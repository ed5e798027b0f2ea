//! Execution: a reference evaluator for stage-I programs, an interpreter for
//! flat stage-III programs, and a C emitter with a native runner.

mod cgen;
mod data;
mod interp;
mod native;
pub mod reference;

pub use cgen::{c_type, emit_c, emit_kernel, STACK_ALLOC_LIMIT};
pub use data::{Array, Bindings, ExecReport, Mode, Stats, Value};
pub use interp::{interpret, thread_count, PARALLEL_CHUNKS, THREADS_ENV};
pub use native::{compiler_available, NativeKernel, NativeRun};

#[cfg(test)]
mod native_tests;
