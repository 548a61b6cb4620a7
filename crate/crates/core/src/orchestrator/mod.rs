//! The co-evolution loop: challenger GRPO, dataset curation, solver GRPO.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod state;

pub use config::{Ablations, BackendKind, KlReference, LoopConfig, PhaseConfig, RepBatchScope, PRESETS};
pub use engine::{run_loop, Engine, RunOutcome};
pub use metrics::{read_records, MetricsRecord, RolloutRecord, StepMetrics};
pub use state::{read_checkpoint, resolve_checkpoint, write_checkpoint, IterationState, Phase, Policies};
