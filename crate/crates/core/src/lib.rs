//! Tensor network contraction for quantum circuit amplitudes.
//!
//! The crate covers the whole pipeline: dense tensor kernels ([`tensor`]),
//! circuit ingestion ([`circuit`]), contraction plans ([`tree`], [`schedule`]),
//! slicing ([`slicer`]), reuse scheduling across sliced subtasks ([`reuse`]),
//! execution with exact operation counters ([`executor`]) and a residency and
//! traffic model of fused stem execution on a cell array ([`cost`]).

pub mod circuit;
pub mod cost;
pub mod error;
pub mod executor;
pub mod io;
pub mod network;
pub mod par;
pub mod reuse;
pub mod schedule;
pub mod slicer;
pub mod tensor;
pub mod tree;

pub use error::{Result, TncError};
