use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rzero_core::backends::{ToyLevelSpec, ToyQuestion, ToyWorld};
use rzero_core::curation::{informative_band_filter, normalize_answer, read_dataset, CurationRecord, RejectReason};
use rzero_core::orchestrator::{
    read_records, run_loop, BackendKind, Engine, LoopConfig, Phase, RolloutRecord,
};
use rzero_core::Error;

fn smoke(seed: u64) -> LoopConfig {
    let mut c = LoopConfig::toy_smoke();
    c.seed = seed;
    c
}

#[test]
fn zero_iterations_return_base_policies() {
    let mut c = smoke(0);
    c.iterations = 0;
    let dir = tempfile::tempdir().unwrap();
    let out = run_loop(c.clone(), dir.path()).unwrap();
    let world = ToyWorld::new(c.toy.clone()).unwrap();
    assert_eq!(out.state.policies.challenger().unwrap(), &world.initial_challenger_policy());
    assert_eq!(out.state.policies.solver().unwrap(), &world.initial_solver_policy());
    assert!(!dir.path().join("datasets").exists());
    assert_eq!(out.metrics.len(), 1);
    assert_eq!(out.metrics[0].phase, Some(Phase::Init));
}

#[test]
fn smoke_curation_writes_a_valid_dataset() {
    let mut c = smoke(1);
    c.pool_size = 100;
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::new(c, dir.path()).unwrap();
    let mut state = engine.init().unwrap();
    state.next_phase = Phase::Curation;
    let (next, dataset) = engine.run_curation_phase(&state).unwrap();
    let path = dir.path().join(next.dataset_path.as_ref().unwrap());
    let (header, records) = read_dataset(&path).unwrap();
    assert_eq!(header.kind, "rzero-dataset");
    assert_eq!(header.iteration, 1);
    assert!(records.len() <= 100);
    assert_eq!(records, dataset.records);

    let rec = read_records(&engine.metrics_path()).unwrap().pop().unwrap();
    assert_eq!(rec.generated, Some(100));
    let valid = rec.valid.unwrap();
    assert_eq!(valid, records.len());
    assert_eq!(valid, rec.kept.unwrap() + rec.too_easy.unwrap() + rec.too_hard.unwrap());
    for r in records.iter().filter(|r| r.kept) {
        assert!(informative_band_filter(r.p_hat, 0.25).0);
    }
}

#[test]
fn hopeless_solver_makes_most_items_too_hard() {
    let mut c = smoke(2);
    c.pool_size = 100;
    c.toy.levels = (0..4)
        .map(|_| ToyLevelSpec { distractors: 30, correct_logit: -6.0, lure_logit: 0.0 })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::new(c, dir.path()).unwrap();
    let mut state = engine.init().unwrap();
    state.next_phase = Phase::Curation;
    match engine.run_curation_phase(&state) {
        Ok((_, d)) => assert!(d.stats.too_hard * 2 > d.stats.total, "{:?}", d.stats),
        Err(Error::EmptyCurriculum { .. }) => {}
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn saturated_solver_aborts_with_empty_curriculum() {
    let mut c = smoke(3);
    c.toy.levels = (0..4)
        .map(|_| ToyLevelSpec { distractors: 2, correct_logit: 20.0, lure_logit: 0.0 })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::new(c, dir.path()).unwrap();
    let state = engine.init().unwrap();
    let state = engine.run_phases(state, 1).unwrap();
    let err = engine.step(&state).unwrap_err();
    assert!(matches!(err, Error::EmptyCurriculum { iteration: 1, .. }), "{err}");
    // the last checkpoint still resumes to the failing phase
    let (_, resumed) = Engine::resume(dir.path(), None).unwrap();
    assert_eq!(resumed.next_phase, Phase::Curation);
}

fn oracle_records(world: &ToyWorld, levels: &[usize], per_level: usize) -> Vec<CurationRecord> {
    let mut out = Vec::new();
    for &level in levels {
        for k in 0..per_level {
            let q = ToyQuestion { level, a: 3 + k as i64, b: 7 + 2 * k as i64 };
            out.push(CurationRecord {
                question_id: format!("l{level}-{k}"),
                question_text: q.render(),
                pseudo_label: normalize_answer(&world.oracle(&q).to_string()),
                p_hat: 0.5,
                histogram: BTreeMap::new(),
                iteration: 1,
                kept: true,
                reject_reason: RejectReason::None,
            });
        }
    }
    out
}

#[test]
fn oracle_labels_raise_solver_accuracy() {
    let mut c = smoke(4);
    c.export_rollouts = true;
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::new(c, dir.path()).unwrap();
    let mut state = engine.init().unwrap();
    state.next_phase = Phase::Solver;
    let world = engine.world().unwrap().clone();
    let levels = [1, 2, 3];
    let records = oracle_records(&world, &levels, 20);
    let before = world.solver_accuracy(state.policies.solver().unwrap()).unwrap();
    let next = engine.train_solver(&state, &records).unwrap();
    let after = world.solver_accuracy(next.policies.solver().unwrap()).unwrap();
    for l in levels {
        assert!(after[l] > before[l], "level {l}: {} -> {}", before[l], after[l]);
    }
    assert_eq!(next.policies.challenger(), state.policies.challenger());

    // 15 steps, five answers per question
    let rec = read_records(&engine.metrics_path()).unwrap().pop().unwrap();
    assert_eq!(rec.steps.len(), 15);
    let text = std::fs::read_to_string(dir.path().join("rollouts/iter-0001-solver.jsonl")).unwrap();
    let mut per_group: BTreeMap<(usize, String), usize> = BTreeMap::new();
    for line in text.lines() {
        let r: RolloutRecord = serde_json::from_str(line).unwrap();
        *per_group.entry((r.step, r.group)).or_default() += 1;
    }
    assert!(!per_group.is_empty());
    assert!(per_group.values().all(|&n| n == 5));
}

#[test]
fn unreachable_label_leaves_solver_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::new(smoke(5), dir.path()).unwrap();
    let mut state = engine.init().unwrap();
    state.next_phase = Phase::Solver;
    let world = engine.world().unwrap().clone();
    let mut records = oracle_records(&world, &[2], 1);
    records[0].pseudo_label = normalize_answer("-12345");
    let next = engine.train_solver(&state, &records).unwrap();
    assert_eq!(next.policies.solver_hash(), state.policies.solver_hash());
}

#[test]
fn challenger_phase_does_not_lower_uncertainty() {
    for seed in 0..5 {
        let dir = tempfile::tempdir().unwrap();
        let engine = Engine::new(smoke(seed), dir.path()).unwrap();
        let state = engine.init().unwrap();
        engine.run_challenger_phase(&state).unwrap();
        let rec = read_records(&engine.metrics_path()).unwrap().pop().unwrap();
        let before = rec.steps[0].mean_uncertainty.unwrap();
        let after = rec.uncertainty_after.unwrap();
        assert!(after >= before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn phase_order_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::new(smoke(0), dir.path()).unwrap();
    let state = engine.init().unwrap();
    assert!(matches!(engine.run_solver_phase(&state), Err(Error::Wiring(_))));
}

#[test]
fn resume_rejects_a_different_config() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::new(smoke(0), dir.path()).unwrap();
    engine.init().unwrap();
    let mut other = smoke(0);
    other.rep_lambda = 0.5;
    assert!(matches!(Engine::resume(dir.path(), Some(other)), Err(Error::Config(_))));
    let mut longer = smoke(0);
    longer.iterations = 5;
    assert!(Engine::resume(dir.path(), Some(longer)).is_ok());
}

#[test]
fn checkpoints_round_trip_policies() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::new(smoke(6), dir.path()).unwrap();
    let state = engine.init().unwrap();
    let state = engine.run_phases(state, 1).unwrap();
    let (_, resumed) = Engine::resume(dir.path(), None).unwrap();
    assert_eq!(resumed, state);
}

/// Chat-completions stand-in: challenger prompts get a fixed question,
/// solver prompts alternate between two answers.
fn fake_model() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let counter = Arc::new(AtomicUsize::new(0));
    let c = counter.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let c = c.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(&mut stream);
                let mut len = 0;
                loop {
                    let mut h = String::new();
                    if reader.read_line(&mut h).unwrap_or(0) == 0 {
                        return;
                    }
                    let h = h.trim_end().to_ascii_lowercase();
                    if h.is_empty() {
                        break;
                    }
                    if let Some(v) = h.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let req: serde_json::Value = serde_json::from_slice(&body).unwrap();
                let system = req["messages"][0]["content"].as_str().unwrap_or_default();
                let k = c.fetch_add(1, Ordering::SeqCst);
                let content = if system.contains("<question>") {
                    format!("<question>\nWhat is {} plus two?\n</question>\n\\boxed{{{}}}", k % 3, k % 3 + 2)
                } else {
                    format!("Thinking.\n\\boxed{{{}}}", k % 2)
                };
                let out = serde_json::json!({"choices": [{"message": {"content": content}}]}).to_string();
                let resp = format!(
                    "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}",
                    out.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            });
        }
    });
    (url, counter)
}

#[test]
fn endpoint_backend_runs_a_full_iteration() {
    let (url, calls) = fake_model();
    std::env::set_var("RZERO_TEST_FAKE_MODEL_KEY", "k");
    let mut c = smoke(0);
    c.backend = BackendKind::Endpoint;
    c.endpoint.base_url = url;
    c.endpoint.api_key_env = "RZERO_TEST_FAKE_MODEL_KEY".into();
    c.pool_size = 6;
    c.vote_samples = 4;
    c.challenger.steps = 1;
    c.challenger.batch = 2;
    c.challenger.group_size = 2;
    c.solver.steps = 1;
    c.solver.batch = 2;
    c.solver.group_size = 2;
    let dir = tempfile::tempdir().unwrap();
    let out = run_loop(c, dir.path()).unwrap();
    assert!(calls.load(Ordering::SeqCst) > 0);
    assert_eq!(out.state.iteration, 2);
    let curation = out.metrics.iter().find(|r| r.phase == Some(Phase::Curation)).unwrap();
    assert_eq!(curation.generated, Some(6));
    assert!(curation.kept.unwrap() > 0);
    assert!(out.metrics.iter().all(|r| r.challenger_hash.is_none()));
    // remote runs always export rollouts for an external trainer
    assert!(dir.path().join("rollouts/iter-0001-challenger.jsonl").exists());
    assert!(dir.path().join("rollouts/iter-0001-solver.jsonl").exists());
}

#[test]
fn shared_policy_needs_a_trainable_backend() {
    let mut c = smoke(0);
    c.backend = BackendKind::Endpoint;
    c.shared_policy = true;
    assert!(matches!(Engine::new(c, "unused"), Err(Error::Config(_))));
}
