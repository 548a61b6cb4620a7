//! A desk-scale world of arithmetic word problems.
//!
//! Each difficulty level renders its own template around two integer
//! operands and has one correct procedure plus a set of distractor
//! procedures. Distractors are fixed offsets from the true answer, so wrong
//! answers are systematic and a solver that leans on the same distractor is
//! confidently wrong. Procedure 1 at each level is the "lure", whose initial
//! solver logit is configurable separately.
//!
//! The challenger policy has a single state whose actions are levels; the
//! solver policy has one state per level whose actions are procedures.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Capabilities, GeneratorBackend, Sample, SolverBackend};
use crate::error::{Error, Result};
use crate::grpo::{ActionStep, CategoricalPolicy};
use crate::seed;

pub const CHALLENGER_STATE: &str = "challenger";

pub fn solver_state(level: usize) -> String {
    format!("solver/level-{level}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyLevelSpec {
    /// Number of wrong procedures at this level.
    pub distractors: usize,
    /// Initial solver logit of the correct procedure.
    pub correct_logit: f64,
    /// Initial solver logit of the first distractor; the others start at 0.
    pub lure_logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyWorldConfig {
    pub levels: Vec<ToyLevelSpec>,
    /// Operands are drawn uniformly from `2..=operand_max`.
    pub operand_max: u32,
    /// Probability that the challenger drops the question tags.
    pub format_error_rate: f64,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        Self {
            levels: vec![
                ToyLevelSpec { distractors: 2, correct_logit: 2.0, lure_logit: 0.0 },
                ToyLevelSpec { distractors: 3, correct_logit: 1.2, lure_logit: 0.0 },
                ToyLevelSpec { distractors: 4, correct_logit: 0.6, lure_logit: 0.0 },
                ToyLevelSpec { distractors: 5, correct_logit: 0.0, lure_logit: 0.0 },
            ],
            operand_max: 99,
            format_error_rate: 0.02,
        }
    }
}

impl ToyWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Config("toy: at least one level required".into()));
        }
        if self.levels.iter().any(|l| l.distractors == 0) {
            return Err(Error::Config("toy: every level needs at least one distractor".into()));
        }
        if self
            .levels
            .iter()
            .any(|l| !l.correct_logit.is_finite() || !l.lure_logit.is_finite())
        {
            return Err(Error::Config("toy: logits must be finite".into()));
        }
        if self.operand_max < 2 {
            return Err(Error::Config("toy: operand_max must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.format_error_rate) {
            return Err(Error::Config("toy: format_error_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

const TEMPLATES: [&str; 8] = [
    "A farmer plants {a} rows of trees and then adds {b} extra saplings along the fence. How many trees stand in total?",
    "A library shelves {a} boxes of novels, then receives {b} donated volumes. Find the final count of books.",
    "Starting from {a} coins arranged in stacks, a collector gains {b} rare tokens. Determine the size of the collection.",
    "Consider a sequence whose seed term is {a} and whose offset is {b}. Evaluate the next term under the stated recurrence.",
    "In a triangle the base measures {a} units and an extension adds {b} units. Compute the resulting weighted perimeter.",
    "Let n equal {a} and let m equal {b}. What is the value of the polynomial expression in n and m?",
    "A train departs carrying {a} passengers per carriage, and {b} more board at the next station. How many ride now?",
    "Each of several identical crates holds {a} widgets, with {b} loose widgets on the floor. Give the overall widget total.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyQuestion {
    pub level: usize,
    pub a: i64,
    pub b: i64,
}

impl ToyQuestion {
    pub fn render(&self) -> String {
        let body = TEMPLATES[self.level % TEMPLATES.len()]
            .replace("{a}", &self.a.to_string())
            .replace("{b}", &self.b.to_string());
        format!("[L{}] {body}", self.level)
    }

    /// Inverse of [`render`](Self::render): level tag, then the first two
    /// integer tokens.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("not a toy question: {text:?}"));
        let mut tokens = text.split_whitespace();
        let level = tokens
            .next()
            .and_then(|t| t.strip_prefix("[L"))
            .and_then(|t| t.strip_suffix(']'))
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(bad)?;
        let mut nums = tokens.filter_map(|t| {
            t.trim_end_matches(|c: char| c.is_ascii_punctuation())
                .parse::<i64>()
                .ok()
        });
        let a = nums.next().ok_or_else(bad)?;
        let b = nums.next().ok_or_else(bad)?;
        Ok(Self { level, a, b })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorld {
    config: ToyWorldConfig,
}

impl ToyWorld {
    pub fn new(config: ToyWorldConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ToyWorldConfig {
        &self.config
    }

    pub fn levels(&self) -> usize {
        self.config.levels.len()
    }

    /// Correct procedure plus distractors at `level`.
    pub fn procedure_count(&self, level: usize) -> Result<usize> {
        self.level_spec(level).map(|s| s.distractors + 1)
    }

    fn level_spec(&self, level: usize) -> Result<&ToyLevelSpec> {
        self.config
            .levels
            .get(level)
            .ok_or_else(|| Error::invalid(format!("unknown difficulty level {level}")))
    }

    pub fn oracle(&self, q: &ToyQuestion) -> i64 {
        q.a * (q.level as i64 + 2) + q.b
    }

    /// Procedure 0 is correct; procedure `j > 0` is off by +1, −1, +2, −2, …
    pub fn apply(&self, q: &ToyQuestion, procedure: usize) -> Result<i64> {
        let count = self.procedure_count(q.level)?;
        if procedure >= count {
            return Err(Error::invalid(format!(
                "procedure {procedure} out of range at level {}",
                q.level
            )));
        }
        let j = procedure as i64;
        let offset = if j == 0 {
            0
        } else if j % 2 == 1 {
            (j + 1) / 2
        } else {
            -(j / 2)
        };
        Ok(self.oracle(q) + offset)
    }

    pub fn initial_challenger_policy(&self) -> CategoricalPolicy {
        let mut p = CategoricalPolicy::new();
        p.insert_state(CHALLENGER_STATE, vec![0.0; self.levels()])
            .expect("non-empty level list");
        p
    }

    pub fn initial_solver_policy(&self) -> CategoricalPolicy {
        let mut p = CategoricalPolicy::new();
        self.add_solver_states(&mut p);
        p
    }

    /// One policy holding both roles' states.
    pub fn initial_shared_policy(&self) -> CategoricalPolicy {
        let mut p = self.initial_challenger_policy();
        self.add_solver_states(&mut p);
        p
    }

    fn add_solver_states(&self, p: &mut CategoricalPolicy) {
        for (level, spec) in self.config.levels.iter().enumerate() {
            let mut logits = vec![0.0; spec.distractors + 1];
            logits[0] = spec.correct_logit;
            logits[1] = spec.lure_logit;
            p.insert_state(solver_state(level), logits)
                .expect("validated level spec");
        }
    }

    /// Probability of the correct procedure at every level.
    pub fn solver_accuracy(&self, policy: &CategoricalPolicy) -> Result<Vec<f64>> {
        (0..self.levels())
            .map(|l| policy.probs(&solver_state(l)).map(|p| p[0]))
            .collect()
    }

    pub fn challenger_distribution(&self, policy: &CategoricalPolicy) -> Result<Vec<f64>> {
        policy.probs(CHALLENGER_STATE)
    }

    pub fn sample_questions(&self, policy: &CategoricalPolicy, n: usize, seed: u64) -> Result<Vec<Sample>> {
        (0..n)
            .map(|i| {
                let mut rng = seed::rng(seed, &[i as u64]);
                let (level, logprob) = policy.sample(CHALLENGER_STATE, &mut rng)?;
                let q = ToyQuestion {
                    level,
                    a: rng.gen_range(2..=self.config.operand_max) as i64,
                    b: rng.gen_range(2..=self.config.operand_max) as i64,
                };
                let malformed = rng.gen::<f64>() < self.config.format_error_rate;
                let text = if malformed {
                    format!("{}\n\\boxed{{{}}}", q.render(), self.oracle(&q))
                } else {
                    format!("<question>{}</question>\n\\boxed{{{}}}", q.render(), self.oracle(&q))
                };
                Ok(Sample {
                    text,
                    action_path: vec![ActionStep::new(CHALLENGER_STATE, level)],
                    logprob,
                })
            })
            .collect()
    }

    pub fn sample_answers(
        &self,
        policy: &CategoricalPolicy,
        question: &str,
        m: usize,
        seed: u64,
    ) -> Result<Vec<Sample>> {
        let q = ToyQuestion::parse(question)?;
        self.level_spec(q.level)?;
        let state = solver_state(q.level);
        (0..m)
            .map(|j| {
                let mut rng = seed::rng(seed, &[j as u64]);
                let (procedure, logprob) = policy.sample(&state, &mut rng)?;
                let value = self.apply(&q, procedure)?;
                Ok(Sample {
                    text: format!("Working it through, the result is \\boxed{{{value}}}"),
                    action_path: vec![ActionStep::new(state.clone(), procedure)],
                    logprob,
                })
            })
            .collect()
    }
}

/// Trainable generator view over a world and a policy snapshot.
#[derive(Debug, Clone, Copy)]
pub struct ToyChallenger<'a> {
    pub world: &'a ToyWorld,
    pub policy: &'a CategoricalPolicy,
}

impl GeneratorBackend for ToyChallenger<'_> {
    fn capabilities(&self) -> Capabilities {
        Capabilities { trainable: true }
    }

    fn sample_questions(&self, n: usize, seed: u64) -> Result<Vec<Sample>> {
        self.world.sample_questions(self.policy, n, seed)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ToySolver<'a> {
    pub world: &'a ToyWorld,
    pub policy: &'a CategoricalPolicy,
}

impl SolverBackend for ToySolver<'_> {
    fn capabilities(&self) -> Capabilities {
        Capabilities { trainable: true }
    }

    fn sample_answers(&self, question: &str, m: usize, seed: u64) -> Result<Vec<Sample>> {
        self.world.sample_answers(self.policy, question, m, seed)
    }

    fn oracle_answer(&self, question: &str) -> Option<String> {
        ToyQuestion::parse(question)
            .ok()
            .filter(|q| q.level < self.world.levels())
            .map(|q| self.world.oracle(&q).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::challenger_reward::check_format;
    use crate::curation::{majority_vote, normalize_answer};

    fn world() -> ToyWorld {
        ToyWorld::new(ToyWorldConfig {
            format_error_rate: 0.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn render_parse_round_trip() {
        for level in 0..10 {
            let q = ToyQuestion { level, a: 17, b: 93 };
            assert_eq!(ToyQuestion::parse(&q.render()).unwrap(), q);
        }
        assert!(ToyQuestion::parse("What is 2+2?").is_err());
    }

    #[test]
    fn procedures_are_distinct_and_one_is_correct() {
        let w = world();
        let q = ToyQuestion { level: 3, a: 5, b: 7 };
        let answers: Vec<i64> = (0..w.procedure_count(3).unwrap())
            .map(|p| w.apply(&q, p).unwrap())
            .collect();
        assert_eq!(answers[0], w.oracle(&q));
        let mut dedup = answers.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), answers.len());
        assert_eq!(answers.iter().filter(|&&a| a == w.oracle(&q)).count(), 1);
        assert!(w.apply(&q, 99).is_err());
    }

    #[test]
    fn generations_are_format_valid() {
        let w = world();
        let p = w.initial_challenger_policy();
        for s in w.sample_questions(&p, 50, 1).unwrap() {
            let f = check_format(&s.text);
            assert!(f.ok);
            let q = ToyQuestion::parse(&f.question_text).unwrap();
            assert_eq!(f.self_answer.unwrap(), w.oracle(&q).to_string());
            assert_eq!(s.action_path[0].action, q.level);
        }
    }

    #[test]
    fn uniform_challenger_level_counts() {
        let w = world();
        let p = w.initial_challenger_policy();
        let n = 4000;
        let mut counts = [0usize; 4];
        for s in w.sample_questions(&p, n, 42).unwrap() {
            counts[s.action_path[0].action] += 1;
        }
        // binomial(4000, 1/4): mean 1000, sigma ~27.4
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 1000.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn saturated_challenger_and_determinism() {
        let w = world();
        let mut p = CategoricalPolicy::new();
        p.insert_state(CHALLENGER_STATE, vec![0.0, 0.0, 20.0, 0.0]).unwrap();
        let a = w.sample_questions(&p, 200, 9).unwrap();
        assert!(a.iter().all(|s| s.action_path[0].action == 2));
        assert_eq!(a, w.sample_questions(&p, 200, 9).unwrap());
        assert_ne!(a, w.sample_questions(&p, 200, 10).unwrap());
    }

    #[test]
    fn certain_solver_always_right() {
        let w = world();
        let mut p = w.initial_solver_policy();
        p.insert_state(solver_state(1), vec![50.0, 0.0, 0.0, 0.0]).unwrap();
        let q = ToyQuestion { level: 1, a: 4, b: 9 }.render();
        let ans: Vec<String> = w.sample_answers(&p, &q, 10, 3).unwrap().into_iter().map(|s| s.text).collect();
        let v = majority_vote(&ans, 10).unwrap();
        assert_eq!(v.p_hat, 1.0);
        let solver = ToySolver { world: &w, policy: &p };
        assert_eq!(v.pseudo_label, normalize_answer(&solver.oracle_answer(&q).unwrap()));
    }

    #[test]
    fn half_correct_solver_converges() {
        let w = world();
        let mut p = w.initial_solver_policy();
        // half on the correct procedure, half on the lure
        p.insert_state(solver_state(0), vec![0.0, 0.0, -1e3]).unwrap();
        let q = ToyQuestion { level: 0, a: 11, b: 3 };
        let truth = w.oracle(&q).to_string();
        let m = 10_000;
        let ans = w.sample_answers(&p, &q.render(), m, 5).unwrap();
        let correct = ans.iter().filter(|s| normalize_answer(&s.text).as_str() == truth).count();
        assert!((correct as f64 / m as f64 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn unknown_level_rejected() {
        let w = world();
        let p = w.initial_solver_policy();
        let q = ToyQuestion { level: 7, a: 2, b: 2 }.render();
        assert!(matches!(w.sample_answers(&p, &q, 3, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn untrained_accuracy_decreases_with_level() {
        let w = world();
        let acc = w.solver_accuracy(&w.initial_solver_policy()).unwrap();
        assert!(acc.windows(2).all(|p| p[0] > p[1]), "{acc:?}");
    }
}
