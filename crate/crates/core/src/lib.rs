//! Graph data distillation by clustering smoothed node representations.
//!
//! A graph is condensed in stages: attributes are smoothed over the graph,
//! a classifier head is fitted on the smoothed attributes, its outputs are
//! clustered, and each cluster becomes one synthetic node. A final stage
//! learns a small class-aware correction to the synthetic attributes.

pub mod caar;
pub mod cluster;
pub mod condense;
pub mod config;
pub mod dense;
pub mod error;
pub mod eval;
pub mod fid;
pub mod graph;
pub mod io;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod propagate;
pub mod rng;
pub mod sbm;

pub use condense::CondensedGraph;
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use graph::{Dataset, SparseGraph, Split};
pub use pipeline::{distill, run_pipeline};
