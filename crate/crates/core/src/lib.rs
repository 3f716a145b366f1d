//! A self-contained GNN training engine with teacher-free self-distillation.
//!
//! The crate is built around four layers:
//!
//! - [`tensor`]: dense `f64` matrices on a define-by-run reverse-mode tape,
//!   with CSR sparse matrices for adjacency structures and a stop-gradient
//!   node for frozen distillation targets.
//! - [`graph`]: the graph data model, citation / TU-format / JSON loaders,
//!   a stochastic block model generator, and structural transforms
//!   (label-masked adjacency, edge adjacency, random edge dropping).
//! - [`layers`] and [`distill`]: GCN / GraphSage / GAT forwards with full
//!   hidden-state capture, and the distillation losses built on top of the
//!   per-layer neighborhood discrepancy rate.
//! - [`train`] and [`oracle`]: Adam training loops for semi-supervised node
//!   classification and k-fold graph classification, grid search, and the
//!   brute-force reference suite that cross-checks the numerics.

pub mod distill;
pub mod error;
pub mod graph;
pub mod layers;
pub mod oracle;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
