/* Generated by cbindgen; do not edit. */

#ifndef LATENT_STATES_H
#define LATENT_STATES_H

#include <stddef.h>
#include <stdint.h>

/**
 * Status codes. Library error classes share their numbers with the
 * command-line exit codes.
 */
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_CONFIG = 2,
  LS_STATUS_IO = 3,
  LS_STATUS_PARSE = 4,
  LS_STATUS_INVALID_INPUT = 5,
  LS_STATUS_DEGENERATE = 6,
  LS_STATUS_NUMERICAL = 7,
  LS_STATUS_PANIC = 8,
  LS_STATUS_BUFFER_TOO_SMALL = 9,
} LsStatus;

/**
 * Transition counting rule for [`ls_transition_matrix`] and [`ls_state_vector`].
 */
typedef enum LsTransitionMode {
  LS_TRANSITION_MODE_PROXIMITY = 0,
  LS_TRANSITION_MODE_TEMPORAL = 1,
} LsTransitionMode;

/**
 * A fitted k-means model.
 */
typedef struct LsKMeans LsKMeans;

/**
 * A finished t-SNE run.
 */
typedef struct LsTsne LsTsne;

/**
 * Parameters of an exact t-SNE run.
 */
typedef struct LsTsneParams {
  double perplexity;
  size_t iterations;
  double learning_rate;
  double early_exaggeration;
  size_t exaggeration_iters;
  uint64_t seed;
} LsTsneParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *ls_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ls_version(void);

/**
 * Damped PageRank of a `k x k` row-stochastic matrix. Writes `k` values to
 * `out` and the iteration count to `iterations` (which may be null).
 *
 * # Safety
 * `matrix` must hold `k * k` values and `out` room for `k`.
 */
enum LsStatus ls_pagerank(const double *matrix,
                          size_t k,
                          double alpha,
                          size_t max_iter,
                          double tol,
                          double *out,
                          size_t *iterations);

/**
 * Row-stochastic transition matrix between `k` states of one participant's
 * days. `xy` holds `n` interleaved 2D coordinates, `labels` the state of each
 * day and `days` its date as days since 1970-01-01. `threshold` is the
 * proximity distance and is ignored in temporal mode. Writes `k * k` values.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum LsStatus ls_transition_matrix(const double *xy,
                                   const size_t *labels,
                                   const int64_t *days,
                                   size_t n,
                                   size_t k,
                                   double threshold,
                                   enum LsTransitionMode mode,
                                   double *out);

/**
 * State vector of one participant-period: the transition matrix of
 * [`ls_transition_matrix`] with the proximity threshold set to the
 * `quantile` of pairwise day distances, then PageRank. Writes `k` values.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum LsStatus ls_state_vector(const double *xy,
                              const size_t *labels,
                              const int64_t *days,
                              size_t n,
                              size_t k,
                              double quantile,
                              enum LsTransitionMode mode,
                              double alpha,
                              double *out);

/**
 * The proximity threshold [`ls_state_vector`] would use.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum LsStatus ls_distance_quantile(const double *xy, size_t n, double quantile, double *out);

/**
 * k-means with k-means++ seeding and restarts on `n` points of dimension `d`.
 *
 * # Safety
 * `points` must hold `n * d` values; `handle` must be writable.
 */
enum LsStatus ls_kmeans_fit(const double *points,
                            size_t n,
                            size_t d,
                            size_t k,
                            uint64_t seed,
                            struct LsKMeans **handle);

/**
 * Cluster index of each of the `n` fitted points.
 *
 * # Safety
 * `handle` must come from [`ls_kmeans_fit`]; `out` must hold `len` values.
 */
enum LsStatus ls_kmeans_assignments(const struct LsKMeans *handle, size_t *out, size_t len);

/**
 * The `k * d` centroid coordinates, row-major.
 *
 * # Safety
 * `handle` must come from [`ls_kmeans_fit`]; `out` must hold `len` values.
 */
enum LsStatus ls_kmeans_centroids(const struct LsKMeans *handle, double *out, size_t len);

/**
 * Within-cluster sum of squared distances of the fitted model.
 *
 * # Safety
 * `handle` must come from [`ls_kmeans_fit`].
 */
enum LsStatus ls_kmeans_inertia(const struct LsKMeans *handle, double *out);

/**
 * Releases a k-means handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from [`ls_kmeans_fit`] and not be used afterwards.
 */
void ls_kmeans_free(struct LsKMeans *handle);

/**
 * Mean silhouette of a labeling of `n` points of dimension `d`.
 *
 * # Safety
 * `points` must hold `n * d` values and `labels` `n`.
 */
enum LsStatus ls_silhouette(const double *points,
                            size_t n,
                            size_t d,
                            const size_t *labels,
                            double *out);

/**
 * Default t-SNE parameters.
 */
struct LsTsneParams ls_tsne_default_params(void);

/**
 * Embeds `n` points of dimension `d` into the plane.
 *
 * # Safety
 * `points` must hold `n * d` values; `params` and `handle` must be valid.
 */
enum LsStatus ls_tsne_run(const double *points,
                          size_t n,
                          size_t d,
                          const struct LsTsneParams *params,
                          struct LsTsne **handle);

/**
 * The `2 * n` layout coordinates, interleaved.
 *
 * # Safety
 * `handle` must come from [`ls_tsne_run`]; `out` must hold `len` values.
 */
enum LsStatus ls_tsne_layout(const struct LsTsne *handle, double *out, size_t len);

/**
 * KL divergence after the last iteration.
 *
 * # Safety
 * `handle` must come from [`ls_tsne_run`].
 */
enum LsStatus ls_tsne_final_kl(const struct LsTsne *handle, double *out);

/**
 * Releases a t-SNE handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from [`ls_tsne_run`] and not be used afterwards.
 */
void ls_tsne_free(struct LsTsne *handle);

/**
 * `max(0, d(a, p) - d(a, n) + margin)` with Manhattan distance.
 *
 * # Safety
 * `anchor`, `positive` and `negative` must each hold `d` values.
 */
enum LsStatus ls_triplet_loss(const double *anchor,
                              const double *positive,
                              const double *negative,
                              size_t d,
                              double margin,
                              double *out);

/**
 * Leave-one-out MAE and RMSE of standardized ridge regression with penalty
 * `lambda` on `n` rows of `p` features.
 *
 * # Safety
 * `x` must hold `n * p` values and `y` `n`.
 */
enum LsStatus ls_ridge_loocv(const double *x,
                             size_t n,
                             size_t p,
                             const double *y,
                             double lambda,
                             double *mae,
                             double *rmse);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATENT_STATES_H */
