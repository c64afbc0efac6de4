//! Nonparametric Markov network structure learning.
//!
//! Data of any type mix (continuous, discrete, or both) is fitted with an
//! unnormalized pairwise RBF energy by regularized score matching. The graph
//! is read off the Generalized Precision Matrix (GPM): one nonnegative entry
//! per variable pair that vanishes exactly when the pair is conditionally
//! independent given all remaining variables.
//!
//! Module map:
//! - [`types`]: schema, dataset container, CSV/JSON I/O, standardization
//! - [`graphs`]: undirected graphs, DAGs, moralization, Hamming distance
//! - [`energy`]: the energy model, its derivatives, and the θ-tape
//! - [`scorematch`]: continuous, discrete, and mixed score-matching losses
//! - [`gpm`]: pair statistics, the GPM, and graph extraction
//! - [`penalty`]: ℓ1, adaptive ℓ1, SCAD, MCP
//! - [`train`]: Adam training loop and gradient self-check
//! - [`synthgen`]: butterfly and random-graph benchmark generators
//! - [`oracle`]: exact enumeration and quadrature checks
//! - [`eval`]: benchmark harness and runtime scaling
//! - [`config`]: flat dotted-key configuration files

pub mod config;
pub mod energy;
pub mod error;
pub mod eval;
pub mod gpm;
pub mod graphs;
pub mod oracle;
pub mod penalty;
pub mod scorematch;
pub mod synthgen;
pub mod train;
pub mod types;

pub use error::{Error, Result};
