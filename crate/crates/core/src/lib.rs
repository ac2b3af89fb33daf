//! Compile boosted decision tree ensembles and dense networks into
//! pipelined fixed-point hardware.
//!
//! The flow is `ingest` → `quantize` → `lower` → `emit`, with `emulate`
//! providing float and bit-exact fixed-point reference engines, `estimate`
//! costing the generated netlist and `bench` sweeping precision, sparsity
//! and reuse to chart accuracy against resources.

pub mod bench;
pub mod dataset;
pub mod emit;
pub mod emulate;
pub mod estimate;
pub mod fixedpoint;
pub mod ingest;
pub mod lower;
pub mod model;
pub mod netlist;
pub mod quantize;
