//! Sparse (hands-off) optimal control of linear time-invariant plants.
//!
//! The continuous-time steering problem — drive the state to the origin in
//! fixed time under a sup-norm control bound — is discretized by zero-order
//! hold and solved as a convex program under one of three regularizers:
//! plain L1 (bang-off-bang solutions), L1 plus squared L2 (elastic net,
//! smooth but dense), or L1 plus plain L2 (smooth and nearly as sparse).
//! Optional Euclidean-norm bounds on every intermediate state are supported.
//!
//! Modules:
//! - [`lti`]: plants, realizations, zero-order-hold discretization;
//! - [`prox`]: proximal operators and projections;
//! - [`solver`]: the primal-dual splitting solver;
//! - [`kkt`]: subdifferentials and solution certificates;
//! - [`analysis`]: sparsity density, threshold sweeps, refinement studies;
//! - [`experiments`]: the benchmark catalog and table reproductions.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod kkt;
pub mod lti;
pub mod prox;
pub mod solver;

pub use error::{Error, Result};
pub use lti::{discretize, DiscreteProblem, Plant, TransferFunctionSpec};
pub use prox::{RegKind, Regularizer};
pub use solver::{solve, simulate, ProblemSpec, Solution, SolveStatus, SolverConfig};
