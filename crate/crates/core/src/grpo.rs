//! Group Relative Policy Optimization for categorical policies.
//!
//! Rewards inside a group are z-scored into advantages, the policy ratio
//! against the sampling policy enters a PPO-style clipped surrogate, and a
//! KL penalty against a snapshot policy keeps the update local:
//!
//! ```text
//! L(θ) = -(1/G) Σ_i min(ρ_i A_i, clip(ρ_i, 1-ε, 1+ε) A_i) + β KL(π_θ ‖ π_snapshot)
//! ```
//!
//! The toy backends parameterize each decision point as a softmax over a
//! logit vector, so both the loss and its gradient are computed exactly.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One decision taken while producing a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionStep {
    pub state: String,
    pub action: usize,
}

impl ActionStep {
    pub fn new(state: impl Into<String>, action: usize) -> Self {
        Self {
            state: state.into(),
            action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub text: String,
    /// Decisions of a trainable categorical backend; empty for remote models.
    pub action_path: Vec<ActionStep>,
    /// Log-probability of `action_path` under the sampling policy.
    pub logprob_old: f64,
}

/// A prompt's G sampled responses and their scalar rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub responses: Vec<ResponseSample>,
    pub rewards: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(
        prompt_id: impl Into<String>,
        responses: Vec<ResponseSample>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let group = Self {
            prompt_id: prompt_id.into(),
            responses,
            rewards,
        };
        group.validate()?;
        Ok(group)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.responses.len() != self.rewards.len() {
            return Err(Error::invalid(format!(
                "group {}: {} responses but {} rewards",
                self.prompt_id,
                self.responses.len(),
                self.rewards.len()
            )));
        }
        if self.rewards.len() < 2 {
            return Err(Error::invalid(format!(
                "group {}: needs at least 2 responses, got {}",
                self.prompt_id,
                self.rewards.len()
            )));
        }
        for (i, r) in self.responses.iter().enumerate() {
            if !r.logprob_old.is_finite() || r.logprob_old > 0.0 {
                return Err(Error::invalid(format!(
                    "group {}: response {i} has invalid logprob_old {}",
                    self.prompt_id, r.logprob_old
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoConfig {
    /// Stabilizer added to the group standard deviation.
    pub eps_norm: f64,
    /// PPO clip radius.
    pub clip_eps: f64,
    /// KL penalty coefficient.
    pub kl_coeff: f64,
    pub learning_rate: f64,
    pub group_size: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            eps_norm: 1e-6,
            clip_eps: 0.2,
            kl_coeff: 1e-2,
            learning_rate: 1e-6,
            group_size: 4,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("grpo: {what}")));
        if !(self.eps_norm > 0.0 && self.eps_norm.is_finite()) {
            return bad("eps_norm must be > 0");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.kl_coeff >= 0.0 && self.kl_coeff.is_finite()) {
            return bad("kl_coeff must be >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.group_size < 2 {
            return bad("group_size must be >= 2");
        }
        Ok(())
    }
}

/// Loss components evaluated at the policy passed into [`grpo_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub surrogate: f64,
    pub kl: f64,
    pub total: f64,
    pub group_count: usize,
}

/// Softmax policies keyed by decision-point identifier.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    logits: BTreeMap<String, Vec<f64>>,
}

impl CategoricalPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_logits(logits: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut p = Self::new();
        for (state, l) in logits {
            p.insert_state(state, l)?;
        }
        Ok(p)
    }

    pub fn insert_state(&mut self, state: impl Into<String>, logits: Vec<f64>) -> Result<()> {
        let state = state.into();
        if logits.is_empty() {
            return Err(Error::invalid(format!("state {state}: no actions")));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid(format!("state {state}: non-finite logit")));
        }
        self.logits.insert(state, logits);
        Ok(())
    }

    pub fn states(&self) -> impl Iterator<Item = &str> {
        self.logits.keys().map(String::as_str)
    }

    pub fn contains(&self, state: &str) -> bool {
        self.logits.contains_key(state)
    }

    pub fn logits(&self, state: &str) -> Result<&[f64]> {
        self.logits
            .get(state)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("unknown state {state:?}")))
    }

    pub fn probs(&self, state: &str) -> Result<Vec<f64>> {
        Ok(softmax(self.logits(state)?))
    }

    pub fn log_prob(&self, state: &str, action: usize) -> Result<f64> {
        let logits = self.logits(state)?;
        if action >= logits.len() {
            return Err(Error::invalid(format!(
                "state {state:?}: action {action} out of range ({} actions)",
                logits.len()
            )));
        }
        Ok(log_softmax(logits)[action])
    }

    pub fn path_log_prob(&self, path: &[ActionStep]) -> Result<f64> {
        path.iter()
            .map(|s| self.log_prob(&s.state, s.action))
            .sum()
    }

    /// Draws an action by inverse-CDF on one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, state: &str, rng: &mut R) -> Result<(usize, f64)> {
        let probs = self.probs(state)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        Ok((chosen, probs[chosen].ln()))
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.logits).expect("logit map serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn logits_mut(&mut self, state: &str) -> Option<&mut Vec<f64>> {
        self.logits.get_mut(state)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Z-scores rewards within a group using the population standard deviation.
///
/// A group whose rewards are all equal carries no relative signal and maps to
/// all-zero advantages.
pub fn compute_advantages(rewards: &[f64], eps_norm: f64) -> Result<AdvantageVector> {
    if rewards.is_empty() {
        return Err(Error::invalid("advantages of an empty reward list"));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(Error::invalid(format!("reward {i} is not finite")));
    }
    if !(eps_norm > 0.0) {
        return Err(Error::invalid("eps_norm must be > 0"));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(AdvantageVector {
            values: vec![0.0; rewards.len()],
        });
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let denom = var.sqrt() + eps_norm;
    Ok(AdvantageVector {
        values: rewards.iter().map(|r| (r - mean) / denom).collect(),
    })
}

/// `-(1/G) Σ min(ρ A, clip(ρ, 1-ε, 1+ε) A)`; the KL term is not included.
pub fn clipped_surrogate_loss(ratios: &[f64], advantages: &[f64], clip_eps: f64) -> Result<f64> {
    if ratios.len() != advantages.len() {
        return Err(Error::invalid(format!(
            "{} ratios vs {} advantages",
            ratios.len(),
            advantages.len()
        )));
    }
    if ratios.is_empty() {
        return Err(Error::invalid("empty surrogate input"));
    }
    if let Some(i) = ratios.iter().position(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::invalid(format!("ratio {i} must be positive, got {}", ratios[i])));
    }
    let g = ratios.len() as f64;
    let sum: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| surrogate_term(r, a, clip_eps).0)
        .sum();
    Ok(-sum / g)
}

/// Objective term and whether the unclipped branch is the active one.
fn surrogate_term(ratio: f64, adv: f64, clip_eps: f64) -> (f64, bool) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// `Σ p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!("length mismatch {} vs {}", p.len(), q.len())));
    }
    for (name, v) in [("p", p), ("q", q)] {
        if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid(format!("{name} has negative or non-finite mass")));
        }
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("{name} sums to {s}, not 1")));
        }
    }
    let mut kl = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::DivergenceUndefined { index: i });
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// Gradient of the loss with respect to every logit, keyed like the policy.
pub type LogitGradient = BTreeMap<String, Vec<f64>>;

/// Evaluates the GRPO loss at `policy`.
///
/// The surrogate is averaged over groups; the KL term is the mean over every
/// distinct state visited by any response of `KL(π_policy(s) ‖ π_reference(s))`.
pub fn grpo_loss(
    policy: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<LossReport> {
    grpo_loss_and_gradient(policy, reference, groups, config).map(|(r, _)| r)
}

pub fn grpo_loss_and_gradient(
    policy: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<(LossReport, LogitGradient)> {
    let mut grad: LogitGradient = BTreeMap::new();
    if groups.is_empty() {
        return Ok((
            LossReport {
                surrogate: 0.0,
                kl: 0.0,
                total: 0.0,
                group_count: 0,
            },
            grad,
        ));
    }
    let n_groups = groups.len() as f64;
    let mut surrogate = 0.0;
    let mut visited: BTreeSet<&str> = BTreeSet::new();

    for group in groups {
        group.validate()?;
        let adv = compute_advantages(&group.rewards, config.eps_norm)?;
        let g = group.len() as f64;
        let mut ratios = Vec::with_capacity(group.len());
        for resp in &group.responses {
            let lp = policy.path_log_prob(&resp.action_path)?;
            ratios.push((lp - resp.logprob_old).exp());
            for step in &resp.action_path {
                visited.insert(step.state.as_str());
            }
        }
        surrogate += clipped_surrogate_loss(&ratios, &adv.values, config.clip_eps)? / n_groups;

        for ((resp, &ratio), &a) in group.responses.iter().zip(&ratios).zip(&adv.values) {
            let (_, unclipped_active) = surrogate_term(ratio, a, config.clip_eps);
            if a == 0.0 || !unclipped_active {
                continue;
            }
            // d/dθ of -(1/G)(1/#groups) ρ A, with dρ/dθ = ρ ∇ log π(path)
            let scale = -ratio * a / (g * n_groups);
            for step in &resp.action_path {
                let probs = policy.probs(&step.state)?;
                let entry = grad
                    .entry(step.state.clone())
                    .or_insert_with(|| vec![0.0; probs.len()]);
                for (k, p) in probs.iter().enumerate() {
                    let indicator = if k == step.action { 1.0 } else { 0.0 };
                    entry[k] += scale * (indicator - p);
                }
            }
        }
    }

    let mut kl_sum = 0.0;
    let n_states = visited.len().max(1) as f64;
    for state in &visited {
        let p = policy.probs(state)?;
        let q = reference.probs(state)?;
        if p.len() != q.len() {
            return Err(Error::invalid(format!(
                "state {state:?}: reference has {} actions, policy {}",
                q.len(),
                p.len()
            )));
        }
        let kl = kl_categorical(&p, &q)?;
        kl_sum += kl;
        if config.kl_coeff > 0.0 {
            let entry = grad
                .entry(state.to_string())
                .or_insert_with(|| vec![0.0; p.len()]);
            // dKL/dθ_k = p_k (ln p_k − ln q_k − KL)
            for k in 0..p.len() {
                let term = if p[k] > 0.0 { p[k] * ((p[k] / q[k]).ln() - kl) } else { 0.0 };
                entry[k] += config.kl_coeff * term / n_states;
            }
        }
    }
    let kl = kl_sum / n_states;
    Ok((
        LossReport {
            surrogate,
            kl,
            total: surrogate + config.kl_coeff * kl,
            group_count: groups.len(),
        },
        grad,
    ))
}

/// One plain gradient-descent step on the GRPO loss.
///
/// `reference` is the snapshot the KL term is measured against; passing the
/// sampling policy reproduces `KL(π_θ ‖ π_θ_old)`, passing a frozen initial
/// policy gives the usual reference-model penalty.
pub fn grpo_step(
    policy: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<(CategoricalPolicy, LossReport)> {
    let (report, grad) = grpo_loss_and_gradient(policy, reference, groups, config)?;
    let mut next = policy.clone();
    for (state, g) in grad {
        let logits = next
            .logits_mut(&state)
            .ok_or_else(|| Error::invalid(format!("unknown state {state:?}")))?;
        for (l, d) in logits.iter_mut().zip(g) {
            *l -= config.learning_rate * d;
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid(format!("state {state:?}: update produced non-finite logits")));
        }
    }
    Ok((next, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn advantages_symmetric_pair() {
        let a = compute_advantages(&[1.0, 0.0, 0.0, 1.0], 1e-12).unwrap();
        for (v, e) in a.values.iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-9);
        }
    }

    #[test]
    fn advantages_zero_variance() {
        let a = compute_advantages(&[1.0; 4], 1e-6).unwrap();
        assert_eq!(a.values, vec![0.0; 4]);
        let a = compute_advantages(&[0.1; 3], 1e-6).unwrap();
        assert_eq!(a.values, vec![0.0; 3]);
    }

    #[test]
    fn advantages_one_hot_of_ten() {
        let mut r = vec![0.0; 10];
        r[0] = 1.0;
        // mean 0.1, population std 0.3
        let a = compute_advantages(&r, 1e-6).unwrap();
        assert_abs_diff_eq!(a.values[0], 0.9 / (0.3 + 1e-6), epsilon = 1e-12);
        assert_abs_diff_eq!(a.values[0], 3.0, epsilon = 1e-4);
        for v in &a.values[1..] {
            assert_abs_diff_eq!(*v, -0.1 / (0.3 + 1e-6), epsilon = 1e-12);
        }
    }

    #[test]
    fn advantages_reject_bad_input() {
        assert!(matches!(compute_advantages(&[], 1e-6), Err(Error::InvalidInput(_))));
        assert!(matches!(
            compute_advantages(&[1.0, f64::NAN], 1e-6),
            Err(Error::InvalidInput(_))
        ));
        assert!(compute_advantages(&[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn surrogate_examples() {
        assert_abs_diff_eq!(clipped_surrogate_loss(&[1.0], &[1.0], 0.2).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(clipped_surrogate_loss(&[1.5], &[1.0], 0.2).unwrap(), -1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(
            clipped_surrogate_loss(&[0.5, 1.0], &[-1.0, 1.0], 0.2).unwrap(),
            -0.1,
            epsilon = 1e-12
        );
        assert!(clipped_surrogate_loss(&[1.0], &[1.0, 2.0], 0.2).is_err());
        assert!(clipped_surrogate_loss(&[0.0], &[1.0], 0.2).is_err());
        assert!(clipped_surrogate_loss(&[-1.0], &[1.0], 0.2).is_err());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_categorical(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            kl_categorical(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            kl_categorical(&[0.9, 0.1], &[0.5, 0.5]).unwrap(),
            0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(kl_categorical(&[0.9, 0.1], &[0.5, 0.5]).unwrap(), 0.3681, epsilon = 1e-4);
        assert!(matches!(
            kl_categorical(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::DivergenceUndefined { index: 1 })
        ));
    }

    fn two_action_policy(l0: f64, l1: f64) -> CategoricalPolicy {
        let mut p = CategoricalPolicy::new();
        p.insert_state("s", vec![l0, l1]).unwrap();
        p
    }

    fn group_for(policy: &CategoricalPolicy, actions: &[usize], rewards: &[f64]) -> RolloutGroup {
        let responses = actions
            .iter()
            .map(|&a| ResponseSample {
                text: format!("a{a}"),
                action_path: vec![ActionStep::new("s", a)],
                logprob_old: policy.log_prob("s", a).unwrap(),
            })
            .collect();
        RolloutGroup::new("g", responses, rewards.to_vec()).unwrap()
    }

    #[test]
    fn zero_advantage_step_is_noop() {
        let p = two_action_policy(0.3, -0.2);
        let g = group_for(&p, &[0, 1, 0, 1], &[1.0; 4]);
        let cfg = GrpoConfig {
            learning_rate: 0.5,
            ..Default::default()
        };
        let (next, report) = grpo_step(&p, &p, &[g], &cfg).unwrap();
        assert_eq!(next, p);
        assert_eq!(report.kl, 0.0);
    }

    #[test]
    fn favored_action_gains_probability_and_loss_drops() {
        let p = two_action_policy(0.0, 0.0);
        let g = group_for(&p, &[0, 1, 0, 1], &[1.0, 0.0, 1.0, 0.0]);
        let cfg = GrpoConfig {
            learning_rate: 0.1,
            kl_coeff: 0.0,
            clip_eps: 0.2,
            ..Default::default()
        };
        let (next, before) = grpo_step(&p, &p, std::slice::from_ref(&g), &cfg).unwrap();
        assert!(next.probs("s").unwrap()[0] > 0.5);
        let after = grpo_loss(&next, &p, &[g], &cfg).unwrap();
        assert!(after.total < before.total, "{} !< {}", after.total, before.total);
    }

    #[test]
    fn unknown_state_rejected() {
        let p = two_action_policy(0.0, 0.0);
        let g = RolloutGroup::new(
            "g",
            vec![
                ResponseSample {
                    text: String::new(),
                    action_path: vec![ActionStep::new("missing", 0)],
                    logprob_old: -0.5,
                },
                ResponseSample {
                    text: String::new(),
                    action_path: vec![ActionStep::new("s", 5)],
                    logprob_old: -0.5,
                },
            ],
            vec![0.0, 1.0],
        )
        .unwrap();
        assert!(matches!(
            grpo_step(&p, &p, &[g], &GrpoConfig::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn group_invariants() {
        let r = ResponseSample {
            text: String::new(),
            action_path: vec![],
            logprob_old: 0.1,
        };
        assert!(RolloutGroup::new("g", vec![r.clone(), r.clone()], vec![0.0, 1.0]).is_err());
        let ok = ResponseSample { logprob_old: -0.1, ..r };
        assert!(RolloutGroup::new("g", vec![ok.clone()], vec![0.0]).is_err());
        assert!(RolloutGroup::new("g", vec![ok.clone(), ok], vec![0.0]).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let p = two_action_policy(0.0, 1.0);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| p.sample("s", &mut rng).unwrap().0).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        let (a, lp) = p.sample("s", &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_abs_diff_eq!(lp, p.log_prob("s", a).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn hash_tracks_content() {
        let a = two_action_policy(0.0, 1.0);
        let b = two_action_policy(0.0, 1.0);
        let c = two_action_policy(0.0, 1.5);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    fn reward_vec() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 2..12)
    }

    proptest! {
        #[test]
        fn advantages_are_normalized(r in reward_vec()) {
            prop_assume!(r.iter().any(|x| (x - r[0]).abs() > 1e-3));
            let a = compute_advantages(&r, 1e-12).unwrap().values;
            let n = a.len() as f64;
            let mean = a.iter().sum::<f64>() / n;
            let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }

        #[test]
        fn advantages_shift_invariant(r in reward_vec(), c in -5.0f64..5.0) {
            let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
            let a = compute_advantages(&r, 1e-6).unwrap().values;
            let b = compute_advantages(&shifted, 1e-6).unwrap().values;
            if r.iter().all(|x| *x == r[0]) || shifted.iter().all(|x| *x == shifted[0]) {
                // equal-reward groups: both sides are zero up to rounding of the shift
                prop_assert!(a.iter().chain(&b).all(|v| v.abs() < 1e-9));
            } else {
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn clip_inert_inside_band(
            pairs in prop::collection::vec((0.8f64..=1.2, -3.0f64..3.0), 1..10)
        ) {
            let (ratios, adv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let unclipped = -ratios.iter().zip(&adv).map(|(r, a)| r * a).sum::<f64>() / ratios.len() as f64;
            let clipped = clipped_surrogate_loss(&ratios, &adv, 0.2).unwrap();
            prop_assert!((clipped - unclipped).abs() < 1e-12);
        }

        #[test]
        fn kl_nonnegative(
            raw in prop::collection::vec((0.0f64..1.0, 0.01f64..1.0), 1..8)
        ) {
            let (pr, qr): (Vec<f64>, Vec<f64>) = raw.into_iter().unzip();
            let ps: f64 = pr.iter().sum();
            prop_assume!(ps > 1e-6);
            let p: Vec<f64> = pr.iter().map(|x| x / ps).collect();
            let qs: f64 = qr.iter().sum();
            let q: Vec<f64> = qr.iter().map(|x| x / qs).collect();
            prop_assert!(kl_categorical(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_categorical(&p, &p).unwrap().abs() < 1e-12);
        }
    }
}
