//! C ABI over `rzero-core`.
//!
//! Every fallible function returns an [`RzStatus`]; on failure the message is
//! available from [`rz_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rzero_core::challenger_reward::{composite_reward, uncertainty_reward};
use rzero_core::curation::{informative_band_filter, majority_vote, RejectReason, VoteResult};
use rzero_core::grpo::{clipped_surrogate_loss, compute_advantages, kl_categorical};
use rzero_core::orchestrator::{Engine, IterationState, LoopConfig, Phase};
use rzero_core::similarity::{sentence_bleu, tokenize, DEFAULT_MAX_ORDER, DEFAULT_SMOOTH_EPS};
use rzero_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RzStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Config = 4,
    Io = 5,
    Format = 6,
    Transport = 7,
    EmptyCurriculum = 8,
    Wiring = 9,
    DivergenceUndefined = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RzRejectReason {
    None = 0,
    TooEasy = 1,
    TooHard = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> RzStatus {
    match err.root() {
        Error::InvalidInput(_) => RzStatus::InvalidInput,
        Error::DivergenceUndefined { .. } => RzStatus::DivergenceUndefined,
        Error::Wiring(_) => RzStatus::Wiring,
        Error::Config(_) => RzStatus::Config,
        Error::Transport { .. } => RzStatus::Transport,
        Error::EmptyCurriculum { .. } => RzStatus::EmptyCurriculum,
        Error::Format { .. } | Error::Json(_) => RzStatus::Format,
        Error::Io(_) => RzStatus::Io,
        Error::Phase { .. } => RzStatus::Wiring,
    }
}

struct Fail(RzStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any error or panic and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RzStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RzStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside rzero");
            RzStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(RzStatus::NullPointer, format!("{what} is null"))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RzStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rz_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- formulas

/// `1 − 2|p_hat − ½|`.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn rz_uncertainty_reward(p_hat: f64, out: *mut f64) -> RzStatus {
    guard(|| {
        *out_ptr(out)? = uncertainty_reward(p_hat)?;
        Ok(())
    })
}

unsafe fn out_ptr<'a>(p: *mut f64) -> Result<&'a mut f64, Fail> {
    out(p, "out")
}

#[no_mangle]
pub extern "C" fn rz_composite_reward(format_ok: bool, r_uncertainty: f64, r_rep: f64) -> f64 {
    composite_reward(format_ok, r_uncertainty, r_rep)
}

/// Band test `|p_hat − ½| ≤ delta`.
///
/// # Safety
/// `kept` and `reason` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rz_informative_band_filter(
    p_hat: f64,
    delta: f64,
    kept: *mut bool,
    reason: *mut RzRejectReason,
) -> RzStatus {
    guard(|| {
        let (k, r) = informative_band_filter(p_hat, delta);
        *out(kept, "kept")? = k;
        *out(reason, "reason")? = match r {
            RejectReason::None => RzRejectReason::None,
            RejectReason::TooEasy => RzRejectReason::TooEasy,
            RejectReason::TooHard => RzRejectReason::TooHard,
        };
        Ok(())
    })
}

/// Group z-score advantages; writes `len` values to `out`.
///
/// # Safety
/// `rewards` and `out` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rz_compute_advantages(
    rewards: *const f64,
    len: usize,
    eps_norm: f64,
    out: *mut f64,
) -> RzStatus {
    guard(|| {
        let r = slice(rewards, len, "rewards")?;
        let a = compute_advantages(r, eps_norm)?;
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&a.values);
        Ok(())
    })
}

/// # Safety
/// `ratios` and `advantages` must point to `len` doubles; `out` to one.
#[no_mangle]
pub unsafe extern "C" fn rz_clipped_surrogate_loss(
    ratios: *const f64,
    advantages: *const f64,
    len: usize,
    clip_eps: f64,
    out: *mut f64,
) -> RzStatus {
    guard(|| {
        let r = slice(ratios, len, "ratios")?;
        let a = slice(advantages, len, "advantages")?;
        *out_ptr(out)? = clipped_surrogate_loss(r, a, clip_eps)?;
        Ok(())
    })
}

/// `KL(p ‖ q)` in nats.
///
/// # Safety
/// `p` and `q` must point to `len` doubles; `out` to one.
#[no_mangle]
pub unsafe extern "C" fn rz_kl_categorical(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> RzStatus {
    guard(|| {
        let p = slice(p, len, "p")?;
        let q = slice(q, len, "q")?;
        *out_ptr(out)? = kl_categorical(p, q)?;
        Ok(())
    })
}

/// Smoothed sentence BLEU (4-gram, smoothing 0.1) of whitespace-tokenized
/// strings.
///
/// # Safety
/// `candidate` and `reference` must be NUL-terminated strings; `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn rz_sentence_bleu(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> RzStatus {
    guard(|| {
        let c = tokenize(string(candidate, "candidate")?);
        let r = tokenize(string(reference, "reference")?);
        *out_ptr(out)? = sentence_bleu(&c, &r, DEFAULT_MAX_ORDER, DEFAULT_SMOOTH_EPS)?;
        Ok(())
    })
}

// ---- majority vote handle

pub struct RzVote {
    result: VoteResult,
    label: CString,
}

/// Majority vote over `m` raw answers.
///
/// # Safety
/// `answers` must point to `m` NUL-terminated strings; `out` to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn rz_vote_new(answers: *const *const c_char, m: usize, out: *mut *mut RzVote) -> RzStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let raw = slice(answers, m, "answers")?;
        let texts = raw
            .iter()
            .enumerate()
            .map(|(i, &p)| string(p, &format!("answers[{i}]")).map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        let result = majority_vote(&texts, m)?;
        let label = CString::new(result.pseudo_label.as_str().replace('\0', ""))
            .map_err(|e| Fail(RzStatus::InvalidInput, e.to_string()))?;
        *slot = Box::into_raw(Box::new(RzVote { result, label }));
        Ok(())
    })
}

/// # Safety
/// `vote` must be a live handle from [`rz_vote_new`].
#[no_mangle]
pub unsafe extern "C" fn rz_vote_p_hat(vote: *const RzVote) -> f64 {
    vote.as_ref().map_or(f64::NAN, |v| v.result.p_hat)
}

/// # Safety
/// `vote` must be a live handle from [`rz_vote_new`].
#[no_mangle]
pub unsafe extern "C" fn rz_vote_majority_count(vote: *const RzVote) -> usize {
    vote.as_ref().map_or(0, |v| v.result.majority_count)
}

/// Pseudo-label owned by the handle.
///
/// # Safety
/// `vote` must be a live handle from [`rz_vote_new`].
#[no_mangle]
pub unsafe extern "C" fn rz_vote_label(vote: *const RzVote) -> *const c_char {
    vote.as_ref().map_or(ptr::null(), |v| v.label.as_ptr())
}

/// # Safety
/// `vote` must be NULL or a handle from [`rz_vote_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rz_vote_free(vote: *mut RzVote) {
    if !vote.is_null() {
        drop(Box::from_raw(vote));
    }
}

// ---- run handle

pub struct RzRun {
    engine: Engine,
    state: IterationState,
}

/// Starts a fresh run. `config` is a preset name or a TOML path; a negative
/// `seed` keeps the configured one.
///
/// # Safety
/// `config` and `run_dir` must be NUL-terminated strings; `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn rz_run_new(
    config: *const c_char,
    run_dir: *const c_char,
    seed: i64,
    out: *mut *mut RzRun,
) -> RzStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let mut c = LoopConfig::load(string(config, "config")?)?;
        if seed >= 0 {
            c.seed = seed as u64;
        }
        let engine = Engine::new(c, PathBuf::from(string(run_dir, "run_dir")?))?;
        let state = engine.init()?;
        *slot = Box::into_raw(Box::new(RzRun { engine, state }));
        Ok(())
    })
}

/// Reopens a run from a checkpoint directory or a run directory.
///
/// # Safety
/// `checkpoint` must be a NUL-terminated string; `out` a handle slot.
#[no_mangle]
pub unsafe extern "C" fn rz_run_resume(checkpoint: *const c_char, out: *mut *mut RzRun) -> RzStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        let (engine, state) = Engine::resume(&PathBuf::from(string(checkpoint, "checkpoint")?), None)?;
        *slot = Box::into_raw(Box::new(RzRun { engine, state }));
        Ok(())
    })
}

/// Runs the next phase and checkpoints it. Does nothing once finished.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rz_run_step(run: *mut RzRun) -> RzStatus {
    guard(|| {
        let r = run.as_mut().ok_or_else(|| null("run"))?;
        if !r.engine.is_finished(&r.state) {
            r.state = r.engine.step(&r.state)?;
        }
        Ok(())
    })
}

/// Runs every remaining phase.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rz_run_to_end(run: *mut RzRun) -> RzStatus {
    guard(|| {
        let r = run.as_mut().ok_or_else(|| null("run"))?;
        r.state = r.engine.run_phases(r.state.clone(), usize::MAX)?;
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rz_run_is_finished(run: *const RzRun) -> bool {
    run.as_ref().is_some_and(|r| r.engine.is_finished(&r.state))
}

/// Iteration the next phase belongs to (1-based).
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rz_run_iteration(run: *const RzRun) -> u32 {
    run.as_ref().map_or(0, |r| r.state.iteration)
}

/// Next phase: 1 challenger, 2 curation, 3 solver; 0 for a NULL handle.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rz_run_next_phase(run: *const RzRun) -> u32 {
    run.as_ref().map_or(0, |r| match r.state.next_phase {
        Phase::Init => 0,
        Phase::Challenger => 1,
        Phase::Curation => 2,
        Phase::Solver => 3,
    })
}

/// Per-level probability that the toy solver picks the correct procedure.
/// Writes up to `cap` values and stores the level count in `len`.
///
/// # Safety
/// `run` must be a live handle, `out` must hold `cap` doubles and `len` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rz_run_solver_accuracy(
    run: *const RzRun,
    out: *mut f64,
    cap: usize,
    len: *mut usize,
) -> RzStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let len = self::out(len, "len")?;
        let world = r
            .engine
            .world()
            .ok_or_else(|| Fail(RzStatus::Config, "remote backends have no local solver".into()))?;
        let policy = r
            .state
            .policies
            .solver()
            .ok_or_else(|| Fail(RzStatus::Config, "no solver policy".into()))?;
        let acc = world.solver_accuracy(policy)?;
        *len = acc.len();
        if cap > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            let n = cap.min(acc.len());
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&acc[..n]);
        }
        Ok(())
    })
}

/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rz_run_free(run: *mut RzRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
