//! A small sparse tensor compiler.
//!
//! Computations are written over axes in coordinate space, lowered to loop
//! nests in position space, then flattened to one-dimensional buffers that
//! an interpreter or a C compiler executes.

pub mod axes;
pub mod error;
pub mod exec;
pub mod gen;
pub mod ir;
pub mod kernels;
pub mod lower;
pub mod schedule;
pub mod storage;
pub mod tune;
pub mod transform;

pub use error::{Error, Result};
