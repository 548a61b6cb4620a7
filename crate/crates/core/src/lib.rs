//! Self-evolving reasoning from zero data: a challenger proposes questions at
//! the edge of a solver's ability, the solver's own majority votes become
//! pseudo-labels, and both are trained with GRPO in alternation.

pub mod backends;
pub mod challenger_reward;
pub mod curation;
pub mod error;
pub mod grpo;
pub mod io;
pub mod orchestrator;
pub mod seed;
pub mod similarity;

pub use error::{Error, Result};
