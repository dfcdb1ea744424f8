//! Differential testing of tensor computation graphs.
//!
//! `graphdiff` synthesizes variant graphs from a corpus of seed graphs,
//! generates inputs for them, executes them on backends whose numerical
//! semantics are described by declarative profiles, and compares, localizes
//! and clusters the discrepancies between backends.
//!
//! The pipeline, module by module:
//!
//! - [`graph`]: graph IR, validation, shape inference, JSON format
//! - [`corpus`]: seed graphs, architecture dedup, connected subgraph sampling
//! - [`synth`]: graph merging with glue nodes and operator mutation
//! - [`inputgen`]: input tensors following index and range heuristics
//! - [`backend`]: profile-driven interpreter and the optimization passes
//! - [`diff`]: tolerance comparison, divergence localization, clustering
//! - [`campaign`]: end-to-end orchestration, ledger, replay and reporting

pub mod backend;
pub mod campaign;
pub mod corpus;
pub mod diff;
mod digest;
pub mod graph;
pub mod inputgen;
pub mod rng;
pub mod synth;

pub use digest::sha256_hex;
