//! Reward for question generators: a structural format gate, an uncertainty
//! reward peaking where the solver agrees with itself half the time, and a
//! penalty for questions that land in large BLEU clusters of the same batch.

use serde::{Deserialize, Serialize};

use crate::curation::last_boxed;
use crate::error::{Error, Result};
use crate::similarity::{cluster, pairwise_distances, tokenize, ClusterAssignment};

const OPEN: &str = "<question>";
const CLOSE: &str = "</question>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatCheckResult {
    pub ok: bool,
    pub question_text: String,
    /// The generator's own boxed answer. Logged, never used as a label.
    pub self_answer: Option<String>,
}

impl FormatCheckResult {
    fn rejected() -> Self {
        Self {
            ok: false,
            question_text: String::new(),
            self_answer: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_ok: bool,
    pub r_uncertainty: f64,
    pub r_rep: f64,
    pub composite: f64,
}

/// Accepts exactly one non-empty `<question>…</question>` block.
pub fn check_format(raw: &str) -> FormatCheckResult {
    if raw.matches(OPEN).count() != 1 || raw.matches(CLOSE).count() != 1 {
        return FormatCheckResult::rejected();
    }
    let start = raw.find(OPEN).expect("counted") + OPEN.len();
    let Some(close_rel) = raw[start..].find(CLOSE) else {
        return FormatCheckResult::rejected();
    };
    let interior = raw[start..start + close_rel].trim();
    if interior.is_empty() {
        return FormatCheckResult::rejected();
    }
    let tail = &raw[start + close_rel + CLOSE.len()..];
    FormatCheckResult {
        ok: true,
        question_text: interior.to_string(),
        self_answer: last_boxed(tail).map(|s| s.trim().to_string()),
    }
}

/// `1 − 2|p̂ − ½|`.
pub fn uncertainty_reward(p_hat: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_hat) {
        return Err(Error::invalid(format!("p_hat {p_hat} outside [0, 1]")));
    }
    Ok(1.0 - 2.0 * (p_hat - 0.5).abs())
}

/// `λ |C_k(i)| / B` for every item.
pub fn repetition_penalty(
    assignment: &ClusterAssignment,
    lambda: f64,
    batch_size: usize,
) -> Result<Vec<f64>> {
    if assignment.len() != batch_size {
        return Err(Error::invalid(format!(
            "assignment covers {} items, batch size is {batch_size}",
            assignment.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be >= 0"));
    }
    let b = batch_size as f64;
    Ok((0..batch_size)
        .map(|i| lambda * assignment.size_of(i) as f64 / b)
        .collect())
}

pub fn composite_reward(format_ok: bool, r_uncertainty: f64, r_rep: f64) -> f64 {
    if !format_ok {
        return 0.0;
    }
    (r_uncertainty - r_rep).max(0.0)
}

/// Scores one batch of raw generations.
///
/// `solver_accuracies[i]` must be present exactly when generation `i` passes
/// the format check. Clustering and the batch size `B` cover only the
/// format-valid items; output order follows input order.
pub fn score_batch(
    raw_generations: &[String],
    solver_accuracies: &[Option<f64>],
    lambda: f64,
    tau: f64,
) -> Result<Vec<RewardBreakdown>> {
    if raw_generations.len() != solver_accuracies.len() {
        return Err(Error::Wiring(format!(
            "{} generations but {} accuracy slots",
            raw_generations.len(),
            solver_accuracies.len()
        )));
    }
    let checks: Vec<FormatCheckResult> = raw_generations.iter().map(|r| check_format(r)).collect();
    score_checked(&checks, solver_accuracies, lambda, tau)
}

/// [`score_batch`] on generations whose format has already been checked.
pub fn score_checked(
    checks: &[FormatCheckResult],
    solver_accuracies: &[Option<f64>],
    lambda: f64,
    tau: f64,
) -> Result<Vec<RewardBreakdown>> {
    let mut valid = Vec::new();
    for (i, (check, acc)) in checks.iter().zip(solver_accuracies).enumerate() {
        match (check.ok, acc) {
            (true, Some(p)) => valid.push((i, uncertainty_reward(*p)?)),
            (true, None) => {
                return Err(Error::Wiring(format!("no solver accuracy for valid question {i}")))
            }
            (false, Some(_)) => {
                return Err(Error::Wiring(format!(
                    "solver accuracy supplied for malformed generation {i}"
                )))
            }
            (false, None) => {}
        }
    }

    let tokens: Vec<_> = valid
        .iter()
        .map(|&(i, _)| tokenize(&checks[i].question_text))
        .collect();
    let penalties = if tokens.is_empty() {
        Vec::new()
    } else {
        let assignment = cluster(&pairwise_distances(&tokens), tau);
        repetition_penalty(&assignment, lambda, tokens.len())?
    };

    let mut out = vec![
        RewardBreakdown {
            format_ok: false,
            r_uncertainty: 0.0,
            r_rep: 0.0,
            composite: 0.0,
        };
        checks.len()
    ];
    for (&(i, r_unc), &r_rep) in valid.iter().zip(&penalties) {
        out[i] = RewardBreakdown {
            format_ok: true,
            r_uncertainty: r_unc,
            r_rep,
            composite: composite_reward(true, r_unc, r_rep),
        };
    }
    Ok(out)
}
