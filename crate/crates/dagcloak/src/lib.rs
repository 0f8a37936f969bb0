//! dagcloak anonymizes DAG-structured offloaded computations and measures how
//! well the anonymization defeats machine-learning identification of those
//! computations.
//!
//! Three modes distort what a host-resident observer can collect about a
//! running computation (I/O counts and sizes, completion time, cpu and memory
//! usage):
//!
//! - **Remodeling** rewrites a single graph: fake busy-work nodes stretch the
//!   time/cpu/memory profile and padding hides true input/output sizes, while
//!   logical results are preserved exactly and restored by stripping.
//! - **Mixing** interleaves a batch of independent graphs through weighted
//!   random node selection (sequential or on a worker pool), so per-graph
//!   timing observations absorb foreign work.
//! - **Hybrid** remodels each graph and then mixes the batch.
//!
//! The rest of the crate is the evaluation loop: a synthetic workload suite,
//! a simulated-clock executor emitting [`exec::FeatureRecord`]s, attack models
//! (kNN, CART decision tree, MLP) that try to identify computations from those
//! records, a socket-served engine, and an experiment pipeline behind the
//! `dagcloak` binary. Runnable walkthroughs live in `examples/`.

pub mod attack;
pub mod cost;
pub mod error;
pub mod exec;
pub mod graph;
pub mod hybrid;
pub mod mixing;
pub mod ops;
pub mod payload;
pub mod remodel;
pub mod seed;
pub mod workloads;

pub use cost::{ClockMode, CostModel};
pub use error::{Error, Result};
pub use exec::{execute_single, FeatureRecord, Schedule, SinkOutput};
pub use graph::{CompiledGraph, ComputationGraph, DelayClass, NodeId, OpKind};
pub use payload::Payload;
pub use remodel::{anonymize_remodel, strip_outputs, AnonymizationPlan, AnonymizedGraph, FeatureMask, Mode};
