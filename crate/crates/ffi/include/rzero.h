#ifndef RZERO_H
#define RZERO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum RzRejectReason {
  RZ_REJECT_REASON_NONE = 0,
  RZ_REJECT_REASON_TOO_EASY = 1,
  RZ_REJECT_REASON_TOO_HARD = 2,
} RzRejectReason;

typedef enum RzStatus {
  RZ_STATUS_OK = 0,
  RZ_STATUS_NULL_POINTER = 1,
  RZ_STATUS_INVALID_UTF8 = 2,
  RZ_STATUS_INVALID_INPUT = 3,
  RZ_STATUS_CONFIG = 4,
  RZ_STATUS_IO = 5,
  RZ_STATUS_FORMAT = 6,
  RZ_STATUS_TRANSPORT = 7,
  RZ_STATUS_EMPTY_CURRICULUM = 8,
  RZ_STATUS_WIRING = 9,
  RZ_STATUS_DIVERGENCE_UNDEFINED = 10,
  RZ_STATUS_PANIC = 11,
} RzStatus;

typedef struct RzRun RzRun;

typedef struct RzVote RzVote;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *rz_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rz_version(void);

/**
 * `1 − 2|p_hat − ½|`.
 *
 * # Safety
 * `out` must be a valid pointer to a double.
 */
enum RzStatus rz_uncertainty_reward(double p_hat, double *out);

double rz_composite_reward(bool format_ok, double r_uncertainty, double r_rep);

/**
 * Band test `|p_hat − ½| ≤ delta`.
 *
 * # Safety
 * `kept` and `reason` must be valid pointers.
 */
enum RzStatus rz_informative_band_filter(double p_hat,
                                         double delta,
                                         bool *kept,
                                         enum RzRejectReason *reason);

/**
 * Group z-score advantages; writes `len` values to `out`.
 *
 * # Safety
 * `rewards` and `out` must point to `len` doubles.
 */
enum RzStatus rz_compute_advantages(const double *rewards,
                                    size_t len,
                                    double eps_norm,
                                    double *out);

/**
 * # Safety
 * `ratios` and `advantages` must point to `len` doubles; `out` to one.
 */
enum RzStatus rz_clipped_surrogate_loss(const double *ratios,
                                        const double *advantages,
                                        size_t len,
                                        double clip_eps,
                                        double *out);

/**
 * `KL(p ‖ q)` in nats.
 *
 * # Safety
 * `p` and `q` must point to `len` doubles; `out` to one.
 */
enum RzStatus rz_kl_categorical(const double *p, const double *q, size_t len, double *out);

/**
 * Smoothed sentence BLEU (4-gram, smoothing 0.1) of whitespace-tokenized
 * strings.
 *
 * # Safety
 * `candidate` and `reference` must be NUL-terminated strings; `out` a valid
 * pointer.
 */
enum RzStatus rz_sentence_bleu(const char *candidate, const char *reference, double *out);

/**
 * Majority vote over `m` raw answers.
 *
 * # Safety
 * `answers` must point to `m` NUL-terminated strings; `out` to a handle slot.
 */
enum RzStatus rz_vote_new(const char *const *answers, size_t m, struct RzVote **out);

/**
 * # Safety
 * `vote` must be a live handle from [`rz_vote_new`].
 */
double rz_vote_p_hat(const struct RzVote *vote);

/**
 * # Safety
 * `vote` must be a live handle from [`rz_vote_new`].
 */
size_t rz_vote_majority_count(const struct RzVote *vote);

/**
 * Pseudo-label owned by the handle.
 *
 * # Safety
 * `vote` must be a live handle from [`rz_vote_new`].
 */
const char *rz_vote_label(const struct RzVote *vote);

/**
 * # Safety
 * `vote` must be NULL or a handle from [`rz_vote_new`] not yet freed.
 */
void rz_vote_free(struct RzVote *vote);

/**
 * Starts a fresh run. `config` is a preset name or a TOML path; a negative
 * `seed` keeps the configured one.
 *
 * # Safety
 * `config` and `run_dir` must be NUL-terminated strings; `out` a handle slot.
 */
enum RzStatus rz_run_new(const char *config, const char *run_dir, int64_t seed, struct RzRun **out);

/**
 * Reopens a run from a checkpoint directory or a run directory.
 *
 * # Safety
 * `checkpoint` must be a NUL-terminated string; `out` a handle slot.
 */
enum RzStatus rz_run_resume(const char *checkpoint, struct RzRun **out);

/**
 * Runs the next phase and checkpoints it. Does nothing once finished.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum RzStatus rz_run_step(struct RzRun *run);

/**
 * Runs every remaining phase.
 *
 * # Safety
 * `run` must be a live handle.
 */
enum RzStatus rz_run_to_end(struct RzRun *run);

/**
 * # Safety
 * `run` must be a live handle.
 */
bool rz_run_is_finished(const struct RzRun *run);

/**
 * Iteration the next phase belongs to (1-based).
 *
 * # Safety
 * `run` must be a live handle.
 */
uint32_t rz_run_iteration(const struct RzRun *run);

/**
 * Next phase: 1 challenger, 2 curation, 3 solver; 0 for a NULL handle.
 *
 * # Safety
 * `run` must be a live handle.
 */
uint32_t rz_run_next_phase(const struct RzRun *run);

/**
 * Per-level probability that the toy solver picks the correct procedure.
 * Writes up to `cap` values and stores the level count in `len`.
 *
 * # Safety
 * `run` must be a live handle, `out` must hold `cap` doubles and `len` must
 * be a valid pointer.
 */
enum RzStatus rz_run_solver_accuracy(const struct RzRun *run, double *out, size_t cap, size_t *len);

/**
 * # Safety
 * `run` must be NULL or a handle not yet freed.
 */
void rz_run_free(struct RzRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RZERO_H */
