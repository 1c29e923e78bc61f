//! Uplink resource allocation for a sliced two-tier cellular network.

// Guards written as `!(x > 0)` reject NaN along with nonpositive values;
// the `partial_cmp` rewrite clippy suggests would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod channel;
pub mod handover;
pub mod metrics;
pub mod num;
pub mod rng;
pub mod scenario;

pub use num::Scalar;

/// Double-precision aliases for the main entry types; the generic forms
/// remain available for f32 work.
pub type ScenarioConfigF64 = scenario::ScenarioConfig<f64>;
pub type TopologyF64 = scenario::Topology<f64>;
pub type GainTensorF64 = channel::GainTensor<f64>;
pub type AllocationProblemF64<'a> = allocator::AllocationProblem<'a, f64>;
pub type AllocationF64 = allocator::Allocation<f64>;
pub type DualParamsF64 = allocator::dual::DualParams<f64>;
pub type FixedPointParamsF64 = metrics::FixedPointParams<f64>;
pub type FixedPointOutcomeF64 = metrics::FixedPointOutcome<f64>;
