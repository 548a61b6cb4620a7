//! Question generators and solvers.
//!
//! Two implementations ship: a trainable toy world whose policies are
//! [`CategoricalPolicy`](crate::grpo::CategoricalPolicy) values, and a client
//! for chat-completions endpoints, which only samples.

pub mod endpoint;
pub mod prompts;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grpo::ActionStep;

pub use endpoint::{endpoint_sample, EndpointChallenger, EndpointConfig, EndpointSolver, RetryPolicy};
pub use prompts::{render_prompts, Role};
pub use toy::{solver_state, ToyChallenger, CHALLENGER_STATE, ToyLevelSpec, ToyQuestion, ToySolver, ToyWorld, ToyWorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub trainable: bool,
}

/// One sampled generation together with what GRPO needs to credit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    pub action_path: Vec<ActionStep>,
    /// Log-probability of `action_path` under the sampling policy (0 when
    /// the backend exposes no policy).
    pub logprob: f64,
}

pub trait GeneratorBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Exactly `n` raw generations. `seed` fixes the draw for backends that
    /// can be seeded.
    fn sample_questions(&self, n: usize, seed: u64) -> Result<Vec<Sample>>;
}

pub trait SolverBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Exactly `m` answers to `question` (the text inside the question tags).
    fn sample_answers(&self, question: &str, m: usize, seed: u64) -> Result<Vec<Sample>>;

    /// Ground-truth answer when the backend knows it.
    fn oracle_answer(&self, _question: &str) -> Option<String> {
        None
    }
}
