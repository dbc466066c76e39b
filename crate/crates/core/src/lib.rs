//! Survey propagation guided decimation on random k-SAT.
//!
//! The crate covers the algorithm itself (SP and BP message passing, guided
//! decimation, success estimation) and the instrumentation used to study it:
//! brute-force cover and solution oracles, edge biases, the typical-value
//! recursion, bias-certificate sets and quasirandomness audits.

pub mod bias;
pub mod cover;
pub mod decimation;
pub mod dimacs;
pub mod error;
pub mod formula;
pub mod graph;
pub mod message;
pub mod quasi;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
pub use formula::{
    expected_sat_count, Clause, CnfFormula, Literal, ModelKind, PartialAssignment, RandomModel,
};
pub use graph::{EdgeId, FactorGraph};
pub use message::{Engine, IterationPolicy, MarginalEstimate, MessageState, PsiTriple};
