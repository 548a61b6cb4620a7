use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grpo::CategoricalPolicy;
use crate::io::write_atomic;

use super::config::LoopConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Challenger,
    Curation,
    Solver,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Challenger => "challenger",
            Phase::Curation => "curation",
            Phase::Solver => "solver",
        }
    }

    pub(crate) fn stream(self) -> u64 {
        self as u64
    }
}

/// Policy snapshots of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Policies {
    Separate {
        challenger: CategoricalPolicy,
        solver: CategoricalPolicy,
    },
    /// One parameter set serving both roles.
    Shared { policy: CategoricalPolicy },
    /// Remote backends carry no local parameters.
    Remote,
}

impl Policies {
    pub fn challenger(&self) -> Option<&CategoricalPolicy> {
        match self {
            Policies::Separate { challenger, .. } => Some(challenger),
            Policies::Shared { policy } => Some(policy),
            Policies::Remote => None,
        }
    }

    pub fn solver(&self) -> Option<&CategoricalPolicy> {
        match self {
            Policies::Separate { solver, .. } => Some(solver),
            Policies::Shared { policy } => Some(policy),
            Policies::Remote => None,
        }
    }

    pub fn set_challenger(&mut self, p: CategoricalPolicy) {
        match self {
            Policies::Separate { challenger, .. } => *challenger = p,
            Policies::Shared { policy } => *policy = p,
            Policies::Remote => {}
        }
    }

    pub fn set_solver(&mut self, p: CategoricalPolicy) {
        match self {
            Policies::Separate { solver, .. } => *solver = p,
            Policies::Shared { policy } => *policy = p,
            Policies::Remote => {}
        }
    }

    pub fn challenger_hash(&self) -> Option<String> {
        self.challenger().map(CategoricalPolicy::hash)
    }

    pub fn solver_hash(&self) -> Option<String> {
        self.solver().map(CategoricalPolicy::hash)
    }
}

/// Everything needed to continue a run from a phase boundary.
///
/// Random streams are derived from `seed` and the (iteration, phase, step)
/// position, so the seed is the whole RNG state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterationState {
    /// Iteration the next phase belongs to (1-based).
    pub iteration: u32,
    pub next_phase: Phase,
    pub policies: Policies,
    /// Dataset produced by the latest curation, relative to the run directory.
    pub dataset_path: Option<PathBuf>,
    /// Metrics log, relative to the run directory.
    pub metrics_path: PathBuf,
    /// Lines of the metrics log that belong to this state.
    pub metrics_lines: usize,
    pub seed: u64,
    pub config_hash: String,
}

pub const CHECKPOINT_DIR: &str = "checkpoints";
const LATEST: &str = "LATEST";

pub fn checkpoint_name(state: &IterationState) -> String {
    // named after the phase that just completed
    let (iteration, done) = match state.next_phase {
        Phase::Challenger => (state.iteration.saturating_sub(1), if state.iteration <= 1 { Phase::Init } else { Phase::Solver }),
        Phase::Curation => (state.iteration, Phase::Challenger),
        Phase::Solver => (state.iteration, Phase::Curation),
        Phase::Init => (state.iteration, Phase::Init),
    };
    format!("iter-{iteration:04}-{}", done.name())
}

/// Writes `state.json` and `config.toml` into a fresh checkpoint directory
/// and then points `checkpoints/LATEST` at it.
pub fn write_checkpoint(run_dir: &Path, state: &IterationState, config: &LoopConfig) -> Result<PathBuf> {
    let name = checkpoint_name(state);
    let dir = run_dir.join(CHECKPOINT_DIR).join(&name);
    std::fs::create_dir_all(&dir)?;
    write_atomic(&dir.join("config.toml"), config.to_toml_string().as_bytes())?;
    write_atomic(&dir.join("state.json"), &serde_json::to_vec_pretty(state)?)?;
    write_atomic(&run_dir.join(CHECKPOINT_DIR).join(LATEST), name.as_bytes())?;
    Ok(dir)
}

/// Accepts a checkpoint directory, or a run directory (uses `LATEST`).
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join("state.json").is_file() {
        return Ok(path.to_path_buf());
    }
    let latest = path.join(CHECKPOINT_DIR).join(LATEST);
    if latest.is_file() {
        let name = std::fs::read_to_string(&latest)?;
        return Ok(path.join(CHECKPOINT_DIR).join(name.trim()));
    }
    Err(Error::Config(format!("{}: no checkpoint found", path.display())))
}

pub fn read_checkpoint(dir: &Path) -> Result<(IterationState, LoopConfig)> {
    let state_path = dir.join("state.json");
    let state: IterationState =
        serde_json::from_slice(&std::fs::read(&state_path)?).map_err(|e| Error::Format {
            path: state_path.clone(),
            message: e.to_string(),
        })?;
    let config = LoopConfig::from_toml_str(&std::fs::read_to_string(dir.join("config.toml"))?)?;
    Ok((state, config))
}

/// Run directory owning a checkpoint directory.
pub fn run_dir_of(checkpoint: &Path) -> PathBuf {
    checkpoint
        .parent()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
