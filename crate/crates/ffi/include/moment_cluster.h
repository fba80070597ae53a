#ifndef MOMENT_CLUSTER_H
#define MOMENT_CLUSTER_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum McStatus {
  MC_STATUS_OK = 0,
  MC_STATUS_NULL_POINTER = 1,
  MC_STATUS_INVALID_ARGUMENT = 2,
  MC_STATUS_CONFIG = 3,
  MC_STATUS_NUMERIC = 4,
  MC_STATUS_ALGORITHM_FAILED = 5,
  MC_STATUS_IO = 6,
  MC_STATUS_PANIC = 7,
} McStatus;

/**
 * A mixture specification with its sampler.
 */
typedef struct McMixture McMixture;

/**
 * Learned means and weights.
 */
typedef struct McResult McResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread (empty after success).
 */
const char *mc_last_error(void);

/**
 * A mixture from explicit means (row-major k × d) and weights (length k).
 *
 * # Safety
 * `means` must hold k·d doubles, `weights` k doubles, `base` a NUL-terminated
 * tag (gaussian, laplace, uniform_cube, point_mass) and `out` must be writable.
 */
enum McStatus mc_mixture_new(size_t k,
                             size_t d,
                             const double *means,
                             const double *weights,
                             const char *base,
                             struct McMixture **out);

/**
 * A synthetic mixture with uniform weights and pairwise mean distances in
 * [sep, 1.2·sep].
 *
 * # Safety
 * `base` must be a NUL-terminated tag and `out` writable.
 */
enum McStatus mc_mixture_generate(size_t k,
                                  size_t d,
                                  double sep,
                                  const char *base,
                                  uint64_t seed,
                                  struct McMixture **out);

/**
 * # Safety
 * `mix` must come from a constructor above (or be null) and not be used afterwards.
 */
void mc_mixture_free(struct McMixture *mix);

/**
 * # Safety
 * `mix` must be a live handle; `k` and `d` writable.
 */
enum McStatus mc_mixture_shape(const struct McMixture *mix, size_t *k, size_t *d);

/**
 * Copies the true means (row-major, k·d doubles) into `out`.
 *
 * # Safety
 * `mix` must be a live handle and `out` hold `len` doubles.
 */
enum McStatus mc_mixture_means(const struct McMixture *mix, double *out, size_t len);

/**
 * Draws `n` labeled samples: `x` receives n·d doubles row-major, `labels`
 * (may be null) n component indices.
 *
 * # Safety
 * `mix` must be a live handle, `x` hold n·d doubles and `labels` n entries.
 */
enum McStatus mc_mixture_sample(const struct McMixture *mix,
                                uint64_t seed,
                                size_t n,
                                double *x,
                                size_t *labels);

/**
 * Runs the Poincaré learner on samples from `mix`. `params_json` holds
 * learner parameters as JSON (null for defaults).
 *
 * # Safety
 * `mix` must be a live handle, `params_json` null or NUL-terminated, `out` writable.
 */
enum McStatus mc_learn_poincare(const struct McMixture *mix,
                                const char *params_json,
                                struct McResult **out);

/**
 * Runs the recursive Gaussian clustering on samples from `mix`.
 *
 * # Safety
 * As for `mc_learn_poincare`.
 */
enum McStatus mc_cluster_gaussian(const struct McMixture *mix,
                                  const char *params_json,
                                  struct McResult **out);

/**
 * # Safety
 * `res` must come from a learner above (or be null) and not be used afterwards.
 */
void mc_result_free(struct McResult *res);

/**
 * # Safety
 * `res` must be a live handle; `k` and `d` writable.
 */
enum McStatus mc_result_shape(const struct McResult *res, size_t *k, size_t *d);

/**
 * Copies the learned means (row-major, k·d doubles).
 *
 * # Safety
 * `res` must be a live handle and `out` hold `len` doubles.
 */
enum McStatus mc_result_means(const struct McResult *res, double *out, size_t len);

/**
 * Copies the learned weights (k doubles).
 *
 * # Safety
 * `res` must be a live handle and `out` hold `len` doubles.
 */
enum McStatus mc_result_weights(const struct McResult *res, double *out, size_t len);

/**
 * Assigns one point to a learned component; `ambiguous` (may be null) is
 * set to 1 when the minimax fallback decided.
 *
 * # Safety
 * `res` must be a live handle, `x` hold d doubles, `index` writable.
 */
enum McStatus mc_result_assign(const struct McResult *res,
                               const double *x,
                               size_t d,
                               size_t *index,
                               uint8_t *ambiguous);

/**
 * Runs one validation suite by name; `pass` receives 1 or 0.
 *
 * # Safety
 * `suite` must be NUL-terminated and `pass` writable.
 */
enum McStatus mc_validate(const char *suite, uint64_t seed, double scale, uint8_t *pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOMENT_CLUSTER_H */
