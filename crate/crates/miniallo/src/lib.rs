//! miniallo: a small accelerator-design compiler.
//!
//! The pipeline: parse a typed kernel (`.adl`) into an AST, check and
//! instantiate templates, lower to a loop-nest IR, apply schedule primitives
//! (split/fuse/reorder/unroll/unfold/pipeline/buffer_at/reuse_at/partition/
//! relay) as immediate verifiable rewrites, compose per-kernel schedules with
//! memory-layout unification and FIFO sizing, then either simulate the result
//! deterministically or emit HLS-style C++.

pub mod ast;
pub mod check;
pub mod compose;
pub mod dfg;
pub mod diag;
pub mod hls;
pub mod ir;
pub mod layout;
pub mod lexer;
pub mod parser;
pub mod perf;
pub mod sched;
pub mod schfile;
pub mod sim;
pub mod stream;
pub mod types;
pub mod value;

pub use diag::{Diag, Result};
