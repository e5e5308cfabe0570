//! Scene graph generation for desk-scale scenes with bidirectional
//! relationships: interaction heads, direction-aware edge encoding,
//! attract/repel regularization, evaluation and dataset analysis.

pub mod analysis;
pub mod attract_repel;
pub mod data;
pub mod direction_encoding;
pub mod error;
pub mod global_interaction;
pub mod local_interaction;
pub mod metrics;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::{Matrix, Shape, Tape, Var};
