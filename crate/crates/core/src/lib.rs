//! Multi-view contrastive node representations for heterophilic graphs.
//!
//! A shared GCN encoder produces a semantic view (identity adjacency) and a
//! contextual view (normalized adjacency). A per-node controller mixes the
//! two into a fused view. Training alternates between NT-Xent contrast over
//! the three views and a controller objective.

pub mod augment;
pub mod error;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod training;

pub use error::{Error, Phase, Result};
