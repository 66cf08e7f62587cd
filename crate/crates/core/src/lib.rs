//! Meta-sense extension toolkit: WordNet taxonomy, CoreLex mapping,
//! alternation mining, token partitioning, a small transformer encoder with
//! chaining objectives, and the substitution evaluator.

pub mod chaining;
pub mod config;
pub mod corelex;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod mining;
pub mod partition;
pub mod pipeline;
pub mod wordnet;

pub use error::{Error, Result};
