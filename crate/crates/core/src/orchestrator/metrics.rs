use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::challenger_reward::RewardBreakdown;
use crate::error::{Error, Result};
use crate::grpo::LossReport;

use super::state::Phase;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepMetrics {
    pub step: usize,
    /// `None` when the backend is not trainable.
    pub loss: Option<LossReport>,
    pub mean_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_uncertainty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rep_penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_valid: Option<usize>,
}

/// One line of the metrics log, written once per (iteration, phase).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub iteration: u32,
    pub phase: Option<Phase>,
    #[serde(default)]
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub challenger_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub steps: Vec<StepMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_composite_reward: Option<f64>,
    /// Mean uncertainty reward of a fresh sample after the phase's updates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub too_easy: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub too_hard: Option<usize>,
    /// Questions per majority count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority_count_histogram: Option<BTreeMap<usize, usize>>,
    /// Share of kept pseudo-labels matching the toy oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_label_true_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub challenger_distribution: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_accuracy: Option<Vec<f64>>,
}

impl MetricsRecord {
    pub fn new(iteration: u32, phase: Phase) -> Self {
        Self {
            iteration,
            phase: Some(phase),
            ..Default::default()
        }
    }

    pub fn mean_solver_accuracy(&self) -> Option<f64> {
        self.solver_accuracy
            .as_ref()
            .filter(|a| !a.is_empty())
            .map(|a| a.iter().sum::<f64>() / a.len() as f64)
    }
}

/// Appends one record; records must arrive in (iteration, phase) order.
pub fn append_record(path: &Path, record: &MetricsRecord) -> Result<()> {
    if let Some(last) = read_records(path).ok().and_then(|r| r.last().cloned()) {
        if (last.iteration, last.phase) >= (record.iteration, record.phase) {
            return Err(Error::Wiring(format!(
                "metrics out of order: ({}, {:?}) after ({}, {:?})",
                record.iteration, record.phase, last.iteration, last.phase
            )));
        }
    }
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&line)?;
    f.sync_data()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Drops every line past the first `lines`.
pub fn truncate_records(path: &Path, lines: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path)?;
    let kept: String = text.split_inclusive('\n').take(lines).collect();
    crate::io::write_atomic(path, kept.as_bytes())
}

/// One exported rollout with its reward annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub iteration: u32,
    pub phase: Phase,
    pub step: usize,
    pub group: String,
    pub index: usize,
    pub text: String,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<RewardBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_label: Option<String>,
}
