use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::backends::{
    EndpointChallenger, EndpointSolver, GeneratorBackend, Sample, SolverBackend, ToyChallenger, ToySolver,
    ToyWorld, CHALLENGER_STATE,
};
use crate::challenger_reward::{check_format, score_checked, FormatCheckResult, RewardBreakdown};
use crate::curation::{
    build_dataset, majority_vote_with, read_dataset, solver_reward_with, write_dataset,
    AnswerNormalizer, BandFilter, BoxedNormalizer, CuratedDataset, CurationRecord, IntegerNormalizer, PoolEntry,
};
use crate::error::{Error, Result};
use crate::grpo::{grpo_step, CategoricalPolicy, ResponseSample, RolloutGroup};
use crate::io::write_atomic;
use crate::seed;

use super::config::{BackendKind, KlReference, LoopConfig, RepBatchScope};
use super::metrics::{append_record, read_records, truncate_records, MetricsRecord, RolloutRecord, StepMetrics};
use super::state::{
    read_checkpoint, resolve_checkpoint, run_dir_of, write_checkpoint, IterationState, Phase, Policies,
};

const METRICS_FILE: &str = "metrics.jsonl";
const PROBE_STREAM: u64 = 99;

/// Drives the co-evolution loop for one run directory.
pub struct Engine {
    config: LoopConfig,
    run_dir: PathBuf,
    world: Option<ToyWorld>,
}

pub struct RunOutcome {
    pub state: IterationState,
    pub metrics: Vec<MetricsRecord>,
}

impl Engine {
    pub fn new(config: LoopConfig, run_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let world = match config.backend {
            BackendKind::Toy => Some(ToyWorld::new(config.toy.clone())?),
            BackendKind::Endpoint => None,
        };
        Ok(Self {
            config,
            run_dir: run_dir.into(),
            world,
        })
    }

    /// Reopens the run owning `checkpoint` (a checkpoint or run directory).
    ///
    /// `config` overrides the stored one; it must hash identically apart from
    /// the iteration count. The metrics log is cut back to the checkpoint.
    pub fn resume(checkpoint: &Path, config: Option<LoopConfig>) -> Result<(Self, IterationState)> {
        let dir = resolve_checkpoint(checkpoint)?;
        let (state, stored) = read_checkpoint(&dir)?;
        let config = config.unwrap_or(stored);
        if config.hash() != state.config_hash {
            return Err(Error::Config(format!(
                "{}: checkpoint was written with a different configuration",
                dir.display()
            )));
        }
        let engine = Self::new(config, run_dir_of(&dir))?;
        truncate_records(&engine.run_dir.join(&state.metrics_path), state.metrics_lines)?;
        Ok((engine, state))
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn world(&self) -> Option<&ToyWorld> {
        self.world.as_ref()
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.run_dir.join(METRICS_FILE)
    }

    fn initial_policies(&self) -> Policies {
        match &self.world {
            Some(w) if self.config.shared_policy => Policies::Shared {
                policy: w.initial_shared_policy(),
            },
            Some(w) => Policies::Separate {
                challenger: w.initial_challenger_policy(),
                solver: w.initial_solver_policy(),
            },
            None => Policies::Remote,
        }
    }

    /// Fresh state at iteration 1; logs the initial policies as iteration 0
    /// and checkpoints it. Any previous metrics log is replaced.
    pub fn init(&self) -> Result<IterationState> {
        std::fs::create_dir_all(&self.run_dir)?;
        let metrics = self.metrics_path();
        if metrics.exists() {
            std::fs::remove_file(&metrics)?;
        }
        let mut state = IterationState {
            iteration: 1,
            next_phase: Phase::Challenger,
            policies: self.initial_policies(),
            dataset_path: None,
            metrics_path: PathBuf::from(METRICS_FILE),
            metrics_lines: 0,
            seed: self.config.seed,
            config_hash: self.config.hash(),
        };
        let mut rec = MetricsRecord::new(0, Phase::Init);
        self.annotate_policies(&state, &mut rec)?;
        self.log(&mut state, &rec)?;
        write_checkpoint(&self.run_dir, &state, &self.config)?;
        Ok(state)
    }

    pub fn is_finished(&self, state: &IterationState) -> bool {
        state.next_phase == Phase::Challenger && state.iteration > self.config.iterations
    }

    /// Runs the phase `state` points at and checkpoints the result.
    pub fn step(&self, state: &IterationState) -> Result<IterationState> {
        let next = match state.next_phase {
            Phase::Challenger => self.run_challenger_phase(state)?,
            Phase::Curation => self.run_curation_phase(state)?.0,
            Phase::Solver => self.run_solver_phase(state)?,
            Phase::Init => return Err(Error::Wiring("state points at the init phase".into())),
        };
        write_checkpoint(&self.run_dir, &next, &self.config)?;
        Ok(next)
    }

    /// Runs at most `max_phases` phases, stopping early when the loop is done.
    pub fn run_phases(&self, mut state: IterationState, max_phases: usize) -> Result<IterationState> {
        for _ in 0..max_phases {
            if self.is_finished(&state) {
                break;
            }
            state = self.step(&state)?;
        }
        Ok(state)
    }

    pub fn run_to_end(&self, state: IterationState) -> Result<RunOutcome> {
        let state = self.run_phases(state, usize::MAX)?;
        let metrics = read_records(&self.metrics_path())?;
        Ok(RunOutcome { state, metrics })
    }

    fn log(&self, state: &mut IterationState, rec: &MetricsRecord) -> Result<()> {
        append_record(&self.run_dir.join(&state.metrics_path), rec)?;
        state.metrics_lines += 1;
        Ok(())
    }

    fn annotate_policies(&self, state: &IterationState, rec: &mut MetricsRecord) -> Result<()> {
        rec.challenger_hash = state.policies.challenger_hash();
        rec.solver_hash = state.policies.solver_hash();
        if let Some(w) = &self.world {
            if let Some(p) = state.policies.challenger() {
                rec.challenger_distribution = Some(w.challenger_distribution(p)?);
            }
            if let Some(p) = state.policies.solver() {
                rec.solver_accuracy = Some(w.solver_accuracy(p)?);
            }
        }
        Ok(())
    }

    fn challenger_backend<'a>(&'a self, policies: &'a Policies) -> Box<dyn GeneratorBackend + 'a> {
        match (&self.world, policies.challenger()) {
            (Some(world), Some(policy)) => Box::new(ToyChallenger { world, policy }),
            _ => Box::new(EndpointChallenger {
                config: self.config.endpoint.clone(),
            }),
        }
    }

    fn solver_backend<'a>(&'a self, policies: &'a Policies) -> Box<dyn SolverBackend + 'a> {
        match (&self.world, policies.solver()) {
            (Some(world), Some(policy)) => Box::new(ToySolver { world, policy }),
            _ => Box::new(EndpointSolver {
                config: self.config.endpoint.clone(),
            }),
        }
    }

    fn normalizer(&self) -> &'static dyn AnswerNormalizer {
        match self.config.backend {
            BackendKind::Toy => &IntegerNormalizer,
            BackendKind::Endpoint => &BoxedNormalizer,
        }
    }

    fn reference(&self, current: &CategoricalPolicy) -> CategoricalPolicy {
        if self.config.kl_reference == KlReference::Sampling {
            return current.clone();
        }
        match self.initial_policies() {
            Policies::Shared { policy } => policy,
            Policies::Separate { challenger, solver } => {
                if current.contains(CHALLENGER_STATE) {
                    challenger
                } else {
                    solver
                }
            }
            Policies::Remote => current.clone(),
        }
    }

    /// Seed for the solver's `m` answers to one question.
    fn answer_seed(&self, iteration: u32, phase: Phase, step: usize, index: usize, question: &str) -> u64 {
        if self.config.reuse_uncertainty_samples {
            seed::derive(self.config.seed, &[iteration as u64, seed::text_key(question)])
        } else {
            seed::derive(
                self.config.seed,
                &[iteration as u64, phase.stream(), step as u64, 1, index as u64],
            )
        }
    }

    /// Majority vote of the frozen solver for every format-valid question.
    fn solver_votes(
        &self,
        solver: &dyn SolverBackend,
        checks: &[FormatCheckResult],
        iteration: u32,
        phase: Phase,
        step: usize,
    ) -> Result<Vec<Option<(Vec<String>, f64)>>> {
        let m = self.config.vote_samples;
        let normalizer = self.normalizer();
        checks
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                if !c.ok {
                    return Ok(None);
                }
                let seed = self.answer_seed(iteration, phase, step, i, &c.question_text);
                let answers: Vec<String> = solver
                    .sample_answers(&c.question_text, m, seed)?
                    .into_iter()
                    .map(|s| s.text)
                    .collect();
                let vote = majority_vote_with(&answers, m, normalizer)?;
                Ok(Some((answers, vote.p_hat)))
            })
            .collect()
    }

    fn score(&self, checks: &[FormatCheckResult], p_hats: &[Option<f64>]) -> Result<Vec<RewardBreakdown>> {
        let lambda = if self.config.ablations.rep_penalty_enabled {
            self.config.rep_lambda
        } else {
            0.0
        };
        let tau = self.config.bleu_threshold;
        match self.config.rep_batch {
            RepBatchScope::Step => score_checked(checks, p_hats, lambda, tau),
            RepBatchScope::Group => {
                let g = self.config.challenger.group_size;
                let mut out = Vec::with_capacity(checks.len());
                for (c, p) in checks.chunks(g).zip(p_hats.chunks(g)) {
                    out.extend(score_checked(c, p, lambda, tau)?);
                }
                Ok(out)
            }
        }
    }

    fn write_rollouts(&self, iteration: u32, phase: Phase, rows: &[RolloutRecord]) -> Result<()> {
        let trainable = self.world.is_some();
        if trainable && !self.config.export_rollouts {
            return Ok(());
        }
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        let path = self
            .run_dir
            .join("rollouts")
            .join(format!("iter-{iteration:04}-{}.jsonl", phase.name()));
        write_atomic(&path, &buf)
    }

    /// GRPO on the challenger against the frozen solver.
    pub fn run_challenger_phase(&self, state: &IterationState) -> Result<IterationState> {
        expect_phase(state, Phase::Challenger)?;
        let t = state.iteration;
        let mut next = state.clone();
        next.next_phase = Phase::Curation;
        let mut rec = MetricsRecord::new(t, Phase::Challenger);

        if !self.config.ablations.train_challenger {
            rec.skipped = true;
            self.annotate_policies(&next, &mut rec)?;
            self.log(&mut next, &rec)?;
            return Ok(next);
        }

        let cfg = &self.config.challenger;
        let grpo = cfg.grpo();
        let g = cfg.group_size;
        let trainable = self.world.is_some();
        let mut rollouts = Vec::new();
        let mut total_reward = 0.0;
        let mut total_items = 0usize;

        for step in 0..cfg.steps {
            let ctx = |e: Error| e.in_phase("challenger", t, step);
            let (checks, samples, breakdowns) = self
                .sample_and_score(&next.policies, t, Phase::Challenger, step)
                .map_err(ctx)?;

            let mut groups = Vec::with_capacity(cfg.batch);
            for (gi, (chunk, rewards)) in samples.chunks(g).zip(breakdowns.chunks(g)).enumerate() {
                let prompt_id = format!("it{t}-s{step}-g{gi}");
                for (k, (s, b)) in chunk.iter().zip(rewards).enumerate() {
                    rollouts.push(RolloutRecord {
                        iteration: t,
                        phase: Phase::Challenger,
                        step,
                        group: prompt_id.clone(),
                        index: k,
                        text: s.text.clone(),
                        reward: b.composite,
                        breakdown: Some(*b),
                        question: None,
                        pseudo_label: None,
                    });
                }
                groups.push(to_group(prompt_id, chunk, rewards.iter().map(|b| b.composite).collect()).map_err(ctx)?);
            }

            let composites: Vec<f64> = breakdowns.iter().map(|b| b.composite).collect();
            total_reward += composites.iter().sum::<f64>();
            total_items += composites.len();
            let valid: Vec<&RewardBreakdown> = breakdowns.iter().filter(|b| b.format_ok).collect();

            let loss = if trainable {
                let policy = next.policies.challenger().expect("toy policies").clone();
                let reference = self.reference(&policy);
                let (updated, report) = grpo_step(&policy, &reference, &groups, &grpo).map_err(ctx)?;
                next.policies.set_challenger(updated);
                Some(report)
            } else {
                None
            };
            rec.steps.push(StepMetrics {
                step,
                loss,
                mean_reward: mean(&composites),
                mean_uncertainty: Some(mean_by(&valid, |b| b.r_uncertainty)),
                mean_rep_penalty: Some(mean_by(&valid, |b| b.r_rep)),
                format_valid: Some(checks.iter().filter(|c| c.ok).count()),
            });
        }

        if trainable && cfg.steps > 0 {
            let (_, _, probe) = self
                .sample_and_score(&next.policies, t, Phase::Challenger, PROBE_STREAM as usize)
                .map_err(|e| e.in_phase("challenger", t, cfg.steps))?;
            let valid: Vec<&RewardBreakdown> = probe.iter().filter(|b| b.format_ok).collect();
            rec.uncertainty_after = Some(mean_by(&valid, |b| b.r_uncertainty));
        }
        rec.mean_composite_reward = Some(if total_items == 0 { 0.0 } else { total_reward / total_items as f64 });
        self.annotate_policies(&next, &mut rec)?;
        self.write_rollouts(t, Phase::Challenger, &rollouts)?;
        self.log(&mut next, &rec)?;
        Ok(next)
    }

    /// One batch of challenger generations with their reward breakdowns.
    fn sample_and_score(
        &self,
        policies: &Policies,
        t: u32,
        phase: Phase,
        step: usize,
    ) -> Result<(Vec<FormatCheckResult>, Vec<Sample>, Vec<RewardBreakdown>)> {
        let cfg = &self.config.challenger;
        let challenger = self.challenger_backend(policies);
        let solver = self.solver_backend(policies);
        let n = cfg.batch * cfg.group_size;
        let samples = challenger.sample_questions(n, seed::derive(self.config.seed, &[t as u64, phase.stream(), step as u64, 0]))?;
        if samples.len() != n {
            return Err(Error::Wiring(format!("challenger returned {} of {n} generations", samples.len())));
        }
        let checks: Vec<FormatCheckResult> = samples.iter().map(|s| check_format(&s.text)).collect();
        let votes = self.solver_votes(solver.as_ref(), &checks, t, phase, step)?;
        let p_hats: Vec<Option<f64>> = votes.iter().map(|v| v.as_ref().map(|(_, p)| *p)).collect();
        let breakdowns = self.score(&checks, &p_hats)?;
        Ok((checks, samples, breakdowns))
    }

    /// Samples the question pool, votes, filters and persists the dataset.
    pub fn run_curation_phase(&self, state: &IterationState) -> Result<(IterationState, CuratedDataset)> {
        expect_phase(state, Phase::Curation)?;
        let t = state.iteration;
        let ctx = |e: Error| e.in_phase("curation", t, 0);
        let mut next = state.clone();
        next.next_phase = Phase::Solver;

        let challenger = self.challenger_backend(&state.policies);
        let solver = self.solver_backend(&state.policies);
        let n = self.config.pool_size;
        let samples = challenger
            .sample_questions(n, seed::derive(self.config.seed, &[t as u64, Phase::Curation.stream(), 0]))
            .map_err(ctx)?;
        let checks: Vec<FormatCheckResult> = samples.iter().map(|s| check_format(&s.text)).collect();
        let votes = self
            .solver_votes(solver.as_ref(), &checks, t, Phase::Curation, 0)
            .map_err(ctx)?;
        let pool: Vec<PoolEntry> = checks
            .iter()
            .zip(votes)
            .enumerate()
            .filter_map(|(i, (c, v))| {
                v.map(|(answers, _)| PoolEntry {
                    question_id: format!("it{t:04}-q{i:05}"),
                    question_text: c.question_text.clone(),
                    answers,
                })
            })
            .collect();
        let filter = if self.config.ablations.filter_enabled {
            BandFilter::Band {
                delta: self.config.band_delta,
            }
        } else {
            BandFilter::PassThrough
        };
        let dataset = build_dataset(&pool, filter, t, self.normalizer()).map_err(ctx)?;

        let rel = PathBuf::from("datasets").join(format!("iter-{t:04}.jsonl"));
        write_dataset(&self.run_dir.join(&rel), t, &dataset.records)?;
        next.dataset_path = Some(rel.clone());

        let mut rec = MetricsRecord::new(t, Phase::Curation);
        rec.generated = Some(samples.len());
        rec.valid = Some(pool.len());
        rec.kept = Some(dataset.stats.kept);
        rec.too_easy = Some(dataset.stats.too_easy);
        rec.too_hard = Some(dataset.stats.too_hard);
        rec.majority_count_histogram = Some(dataset.stats.majority_count_histogram.clone());
        rec.dataset_path = Some(rel.to_string_lossy().into_owned());
        rec.pseudo_label_true_accuracy = self.label_accuracy(solver.as_ref(), dataset.kept());
        self.annotate_policies(&next, &mut rec)?;
        self.log(&mut next, &rec)?;

        if dataset.stats.kept == 0 {
            return Err(Error::EmptyCurriculum {
                iteration: t,
                valid: pool.len(),
            });
        }
        Ok((next, dataset))
    }

    fn label_accuracy<'r>(
        &self,
        solver: &dyn SolverBackend,
        kept: impl Iterator<Item = &'r CurationRecord>,
    ) -> Option<f64> {
        let normalizer = self.normalizer();
        let mut total = 0usize;
        let mut correct = 0usize;
        for r in kept {
            let truth = solver.oracle_answer(&r.question_text)?;
            total += 1;
            if normalizer.key(&truth) == r.pseudo_label {
                correct += 1;
            }
        }
        (total > 0).then(|| correct as f64 / total as f64)
    }

    /// GRPO on the solver against the stored pseudo-labels.
    pub fn run_solver_phase(&self, state: &IterationState) -> Result<IterationState> {
        expect_phase(state, Phase::Solver)?;
        let t = state.iteration;
        let rel = state
            .dataset_path
            .as_ref()
            .ok_or_else(|| Error::Wiring("solver phase without a dataset".into()))?;
        let (_, records) = read_dataset(&self.run_dir.join(rel))?;
        let kept: Vec<CurationRecord> = records.into_iter().filter(|r| r.kept).collect();
        if kept.is_empty() {
            return Err(Error::EmptyCurriculum { iteration: t, valid: 0 });
        }
        self.train_solver(state, &kept)
    }

    /// Solver GRPO over an explicit list of kept records.
    pub fn train_solver(&self, state: &IterationState, kept: &[CurationRecord]) -> Result<IterationState> {
        let t = state.iteration;
        let mut next = state.clone();
        next.next_phase = Phase::Challenger;
        next.iteration = t + 1;
        let cfg = &self.config.solver;
        let grpo = cfg.grpo();
        let trainable = self.world.is_some();
        let normalizer = self.normalizer();
        let mut rec = MetricsRecord::new(t, Phase::Solver);
        let mut rollouts = Vec::new();

        let mut order: Vec<usize> = (0..kept.len()).collect();
        {
            use rand::seq::SliceRandom;
            order.shuffle(&mut seed::rng(self.config.seed, &[t as u64, Phase::Solver.stream(), 0]));
        }
        let per_step = cfg.batch.min(kept.len());
        let mut cursor = 0usize;

        for step in 0..cfg.steps {
            let ctx = |e: Error| e.in_phase("solver", t, step);
            let picks: Vec<usize> = (0..per_step).map(|k| order[(cursor + k) % order.len()]).collect();
            cursor = (cursor + per_step) % order.len();

            let solver = self.solver_backend(&next.policies);
            let answered: Vec<(Vec<Sample>, Vec<f64>)> = picks
                .par_iter()
                .enumerate()
                .map(|(k, &qi)| {
                    let r = &kept[qi];
                    let s = seed::derive(self.config.seed, &[t as u64, Phase::Solver.stream(), step as u64, 1, k as u64]);
                    let answers = solver.sample_answers(&r.question_text, cfg.group_size, s)?;
                    if answers.len() != cfg.group_size {
                        return Err(Error::Wiring(format!(
                            "solver returned {} of {} answers",
                            answers.len(),
                            cfg.group_size
                        )));
                    }
                    let rewards = answers
                        .iter()
                        .map(|a| solver_reward_with(&a.text, &r.pseudo_label, normalizer) as f64)
                        .collect();
                    Ok((answers, rewards))
                })
                .collect::<Result<_>>()
                .map_err(ctx)?;
            drop(solver);

            let mut groups = Vec::with_capacity(answered.len());
            let mut all_rewards = Vec::new();
            for (&qi, (answers, rewards)) in picks.iter().zip(&answered) {
                let r = &kept[qi];
                for (k, (a, &rw)) in answers.iter().zip(rewards).enumerate() {
                    rollouts.push(RolloutRecord {
                        iteration: t,
                        phase: Phase::Solver,
                        step,
                        group: r.question_id.clone(),
                        index: k,
                        text: a.text.clone(),
                        reward: rw,
                        breakdown: None,
                        question: Some(r.question_text.clone()),
                        pseudo_label: Some(r.pseudo_label.to_string()),
                    });
                }
                all_rewards.extend_from_slice(rewards);
                groups.push(to_group(r.question_id.clone(), answers, rewards.clone()).map_err(ctx)?);
            }

            let loss = if trainable {
                let policy = next.policies.solver().expect("toy policies").clone();
                let reference = self.reference(&policy);
                let (updated, report) = grpo_step(&policy, &reference, &groups, &grpo).map_err(ctx)?;
                next.policies.set_solver(updated);
                Some(report)
            } else {
                None
            };
            rec.steps.push(StepMetrics {
                step,
                loss,
                mean_reward: mean(&all_rewards),
                mean_uncertainty: None,
                mean_rep_penalty: None,
                format_valid: None,
            });
        }
        self.annotate_policies(&next, &mut rec)?;
        self.write_rollouts(t, Phase::Solver, &rollouts)?;
        self.log(&mut next, &rec)?;
        Ok(next)
    }
}

fn expect_phase(state: &IterationState, phase: Phase) -> Result<()> {
    if state.next_phase != phase {
        return Err(Error::Wiring(format!(
            "state expects the {} phase, not {}",
            state.next_phase.name(),
            phase.name()
        )));
    }
    Ok(())
}

fn to_group(prompt_id: String, samples: &[Sample], rewards: Vec<f64>) -> Result<RolloutGroup> {
    let responses = samples
        .iter()
        .map(|s| ResponseSample {
            text: s.text.clone(),
            action_path: s.action_path.clone(),
            logprob_old: s.logprob,
        })
        .collect();
    RolloutGroup::new(prompt_id, responses, rewards)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn mean_by(items: &[&RewardBreakdown], f: impl Fn(&RewardBreakdown) -> f64) -> f64 {
    if items.is_empty() {
        0.0
    } else {
        items.iter().map(|b| f(b)).sum::<f64>() / items.len() as f64
    }
}

/// A full run from scratch in `run_dir`.
pub fn run_loop(config: LoopConfig, run_dir: impl Into<PathBuf>) -> Result<RunOutcome> {
    let engine = Engine::new(config, run_dir)?;
    let state = engine.init()?;
    engine.run_to_end(state)
}
