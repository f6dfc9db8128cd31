//! Repeat-aware sequential music session recommendation.
//!
//! Listening histories are modelled with ACT-R declarative memory
//! (base-level, spreading and partial-matching activation). Tracks a user
//! has never heard get predicted activation from their audio embeddings,
//! so the whole catalog can be ranked.

pub mod actr;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
