//! Deterministic, desk-scale simulation of two systems mechanisms for training
//! models that exceed accelerator memory:
//!
//! * **Tensor swapping** (`graph`, `lms`, `exec`): static rewriting of a dataflow
//!   graph so long-lived tensors round-trip through host memory, plus a
//!   discrete-event executor that prices the rewritten graph on a modeled
//!   host/device link and checks it never exceeds device capacity.
//! * **Topology-aware all-reduce** (`topology`, `collectives`): mixed-radix rank
//!   coordinates over bandwidth tiers, a flat-ring baseline, and a hierarchical
//!   reduce-scatter/all-gather schedule with a closed-form cost model.
//!
//! The `trainer` module composes both into synchronous data-parallel SGD on a
//! toy least-squares model, and `metrics` holds the scaling arithmetic used by
//! report tables. Everything is deterministic: topological ties break
//! lexicographically, reductions run in ascending rank order, and all random
//! workloads are seeded.
//!
//! With the default `parallel` feature, per-rank and per-group work runs on
//! rayon; disabling it yields a sequential build with bit-identical results.

pub mod collectives;
pub mod exec;
pub mod graph;
pub mod lms;
pub mod metrics;
pub mod par;
pub mod synth;
pub mod topology;
pub mod trainer;

pub use collectives::{CollectiveError, RankBuffers, ReduceSchedule, SweepRow};
pub use exec::{DeviceConfig, ExecError, ExecTrace, MemoryProfile, TraceEvent, Value};
pub use graph::{Graph, GraphError, LivenessTable, OpKind, OpNode, Placement, TensorSpec};
pub use lms::{LmsSettings, PlanError, SwapCandidate, SwapEntry, SwapPlan};
pub use metrics::{MetricsError, ScalingRow};
pub use topology::{RankCoord, Tier, Topology, TopologyError};
pub use trainer::{
    Dataset, EpochReport, Sample, TopologyFamily, ToyModel, TrainConfig, TrainError,
    TrainOutcome,
};
