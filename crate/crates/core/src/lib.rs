//! Urban region representation learning with graph-based pretraining and
//! prompt adaptation.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod kg;
pub mod pretrain;
pub mod prompt;
pub mod schema;
pub mod subgraph;
pub mod synth;
pub mod tape;

pub use error::{Error, Result};
pub use graph::{GraphBuilder, GraphConfig, UrbanGraph};
pub use schema::{EdgeType, NodeType};
