//! Gradient-boosted tree ensembles compiled to a streaming datapath:
//! rank-quantized comparator banks, per-tree encoders and leaf multiplexers,
//! and a pipelined adder tree. The crate emulates that datapath bit-exactly,
//! lowers it to a netlist and Verilog, runs it through a host-side streaming
//! runtime, and models its throughput.
//!
//! Everything numeric is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the common instantiations.

pub mod datapath;
mod error;
pub mod model_ir;
pub mod netlist;
pub mod perf_model;
pub mod quantize;
pub mod scalar;
pub mod stream_engine;

pub use datapath::{compile_forest, score, score_reference, CompiledForest, Fixed};
pub use error::{Error, Result};
pub use model_ir::{canonicalize, parse_model, prune_features, CanonicalForest, FeatureMap, Forest};
pub use netlist::{build_netlist, emit_verilog, eval_netlist, lint_structure, Netlist};
pub use perf_model::{analytic_latency, analytic_throughput, calibrate, cycle_sim, PerfConfig, PerfReport};
pub use quantize::{build_quant_spec, encode_record, pack_records, unpack_record, CodeVector, QuantSpec};
pub use scalar::Real;
pub use stream_engine::{run_memory_mapped, run_streaming, RunStats, StreamConfig};

pub type Forest64 = Forest<f64>;
pub type Forest32 = Forest<f32>;
pub type CanonicalForest64 = CanonicalForest<f64>;
pub type CanonicalForest32 = CanonicalForest<f32>;
pub type QuantSpec64 = QuantSpec<f64>;
pub type QuantSpec32 = QuantSpec<f32>;
pub type CompiledForest64 = CompiledForest<f64>;
pub type CompiledForest32 = CompiledForest<f32>;
pub type PerfConfig64 = PerfConfig<f64>;
pub type PerfConfig32 = PerfConfig<f32>;
pub type PerfReport64 = PerfReport<f64>;

/// Canonicalizes at depth `depth`, builds `width`-bit rank tables and
/// compiles. Pruning happens inside canonicalization.
pub fn compile_model<T: Real>(forest: &Forest<T>, depth: usize, width: u32) -> Result<CompiledForest<T>> {
    let cf = canonicalize(forest, depth)?;
    let spec = build_quant_spec(&cf, width)?;
    Ok(compile_forest(&cf, &spec)?)
}
