#ifndef RVIC_H
#define RVIC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Environment kinds accepted by [`rvic_env_new`].
#define RVIC_ENV_TOROIDAL_GRID 0

#define RVIC_ENV_FOUR_ROOMS 1

#define RVIC_ENV_TWO_JOINT_ARM 2

typedef enum RvicStatus {
  RVIC_STATUS_OK = 0,
  RVIC_STATUS_NULL_POINTER = 1,
  RVIC_STATUS_INVALID_ARGUMENT = 2,
  RVIC_STATUS_CONFIG = 3,
  RVIC_STATUS_CONTRACT = 4,
  RVIC_STATUS_CHECKPOINT = 5,
  RVIC_STATUS_IO = 6,
  RVIC_STATUS_INAPPLICABLE = 7,
  RVIC_STATUS_PANIC = 8,
} RvicStatus;

// An environment plus the rng its resets and slips draw from.
typedef struct RvicEnv RvicEnv;

// A skill-discovery run.
typedef struct RvicTrainer RvicTrainer;

// Skill-set metrics. `relativity_score` is only meaningful when
// `has_relativity` is nonzero.
typedef struct RvicMetrics {
  double mi_end_given_start;
  double mi_start_given_end;
  double h_skill_given_end;
  double h_skill_given_both;
  double partition_score;
  double relativity_score;
  uint8_t has_relativity;
} RvicMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *rvic_last_error(void);

// Library version as a static NUL-terminated string.
const char *rvic_version(void);

// Creates an environment. `kind` is one of the `RVIC_ENV_*` constants; the
// rng used by resets and slips is seeded with `seed`.
enum RvicStatus rvic_env_new(uint32_t kind,
                             size_t width,
                             size_t height,
                             double slip_prob,
                             uint64_t seed,
                             struct RvicEnv **out);

void rvic_env_free(struct RvicEnv *env);

enum RvicStatus rvic_env_num_states(const struct RvicEnv *env, size_t *out);

// Draws a start state uniformly.
enum RvicStatus rvic_env_reset(struct RvicEnv *env, size_t *out_state);

// One step. Outputs may not be null.
enum RvicStatus rvic_env_step(struct RvicEnv *env,
                              size_t state,
                              size_t action,
                              size_t *out_next,
                              double *out_reward,
                              uint8_t *out_terminal);

enum RvicStatus rvic_env_coords(const struct RvicEnv *env,
                                size_t state,
                                size_t *out_x,
                                size_t *out_y);

// Creates a trainer from experiment-config TOML text (its `[train]` section is used).
enum RvicStatus rvic_trainer_new_from_toml(const char *toml, struct RvicTrainer **out);

void rvic_trainer_free(struct RvicTrainer *trainer);

// Runs up to `max_episodes` more skill episodes; `out_done` (may be null)
// receives the total completed so far.
enum RvicStatus rvic_trainer_run(struct RvicTrainer *trainer,
                                 uint64_t max_episodes,
                                 uint64_t *out_done);

enum RvicStatus rvic_trainer_evaluate(const struct RvicTrainer *trainer, struct RvicMetrics *out);

// Greedy end state of `skill` from every start; `out_ends` must hold
// `len >= num_states` entries.
enum RvicStatus rvic_trainer_skill_map(const struct RvicTrainer *trainer,
                                       size_t skill,
                                       size_t *out_ends,
                                       size_t len);

enum RvicStatus rvic_trainer_save_checkpoint(const struct RvicTrainer *trainer, const char *path);

enum RvicStatus rvic_trainer_load_checkpoint(const char *path, struct RvicTrainer **out);

// Metrics of `n` rollouts given as parallel arrays. `env` supplies the
// geometry for the relativity score.
enum RvicStatus rvic_metrics_from_arrays(const struct RvicEnv *env,
                                         const size_t *skills,
                                         const size_t *starts,
                                         const size_t *ends,
                                         size_t n,
                                         struct RvicMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RVIC_H */
