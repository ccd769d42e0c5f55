/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef SKELGRID_H
#define SKELGRID_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_POINTER = 1,
  SG_STATUS_INVALID_ARGUMENT = 2,
  SG_STATUS_BUFFER_TOO_SMALL = 3,
  SG_STATUS_MAP_ERROR = 4,
  SG_STATUS_QUADRATURE_ERROR = 5,
  SG_STATUS_TOPOLOGY_ERROR = 6,
  SG_STATUS_BALL_ERROR = 7,
  SG_STATUS_TRANSPORT_ERROR = 8,
  SG_STATUS_EXPERIMENT_FAILED = 9,
  SG_STATUS_IO_ERROR = 10,
  SG_STATUS_PANIC = 11,
} SgStatus;

/**
 * Plans accepted by [`sg_transport_plan`].
 */
typedef enum {
  SG_SOLVER_NAIVE = 0,
  SG_SOLVER_DYADIC = 1,
  /**
   * Dyadic plan followed by 64 sweeps of local search.
   */
  SG_SOLVER_BEST = 2,
} SgSolver;

/**
 * An integer face flow on a cube grid.
 */
typedef struct SgFlow SgFlow;

/**
 * An evaluable map.
 */
typedef struct SgMap SgMap;

/**
 * A growing-ball trajectory.
 */
typedef struct SgTrajectory SgTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL terminated and
 * truncated to `len`. Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t sg_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sg_version(void);

/**
 * Skeleton retraction of the unit-cube grid in dimension `dim >= 2`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
SgStatus sg_map_skeleton(size_t dim, SgMap **out);

/**
 * Whitehead boundary map on the boundary of `[-1/2, 1/2]^{4n}`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
SgStatus sg_map_whitehead(size_t n, SgMap **out);

/**
 * Hopf fibration `R^4 \ {0} -> S^2`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
SgStatus sg_map_hopf_fibration(SgMap **out);

/**
 * Releases a map; null is ignored.
 *
 * # Safety
 * `map` must come from an `sg_map_*` constructor and not be used afterwards.
 */
void sg_map_free(SgMap *map);

/**
 * Domain and codomain dimensions.
 *
 * # Safety
 * `map` must be a live handle; outputs must be valid for writes.
 */
SgStatus sg_map_dims(const SgMap *map, size_t *domain, size_t *codomain);

/**
 * Evaluates `map` at `x` (length `x_len`) into `out` (capacity `out_len`).
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
SgStatus sg_map_eval(const SgMap *map, const double *x, size_t x_len, double *out, size_t out_len);

/**
 * `int_{[lo, hi]} |Du|^p` with its error bound, at coarse level `level`.
 *
 * # Safety
 * `lo` and `hi` must hold `dim` entries; outputs must be valid for writes.
 */
SgStatus sg_energy_box(const SgMap *map,
                       const double *lo,
                       const double *hi,
                       size_t dim,
                       double p,
                       uint32_t level,
                       double *value,
                       double *error_bound);

/**
 * Degrees of `map` restricted to the boundary of the cube with center
 * `center` (length `dim`) and edge `edge`, about `count` points stored
 * row-major in `sigmas`. Writes `count` degrees and the largest rounding
 * residual.
 *
 * # Safety
 * Pointers must be valid for the given lengths.
 */
SgStatus sg_degrees_on_cube(const SgMap *map,
                            const double *center,
                            size_t dim,
                            double edge,
                            const double *sigmas,
                            size_t count,
                            int64_t *degrees,
                            double *residual);

/**
 * Hopf invariant of a map on the boundary of `[-1/2, 1/2]^4`, agreed on by
 * `pairs` regular-value pairs drawn from `seed`.
 *
 * # Safety
 * `map` must be a live handle and `out` valid for writes.
 */
SgStatus sg_hopf_invariant(const SgMap *map,
                           size_t resolution,
                           size_t pairs,
                           uint64_t seed,
                           int64_t *out);

/**
 * Certified minimum-cost flow for uniform supply `supply` on the `l^n`
 * grid with face cost `|d|^alpha`, searching `|d| <= flow_cap`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
SgStatus sg_transport_exact(size_t n,
                            size_t l,
                            int64_t supply,
                            double alpha,
                            int64_t flow_cap,
                            SgFlow **out);

/**
 * Heuristic plan for uniform supply on the `l^n` grid.
 *
 * # Safety
 * `out` must be valid for writes.
 */
SgStatus sg_transport_plan(size_t n,
                           size_t l,
                           int64_t supply,
                           double alpha,
                           SgSolver solver,
                           SgFlow **out);

/**
 * Total cost, validity and certification of a flow.
 *
 * # Safety
 * `flow` must be a live handle; outputs must be valid for writes.
 */
SgStatus sg_flow_summary(const SgFlow *flow, double *cost, bool *valid, bool *certified);

/**
 * Copies the per-face `+e_axis` flux (indexed by face id) into `buf`.
 * `needed` receives the face count; a short buffer yields `BufferTooSmall`.
 *
 * # Safety
 * `buf` must be valid for `len` entries and `needed` for writes.
 */
SgStatus sg_flow_values(const SgFlow *flow, int64_t *buf, size_t len, size_t *needed);

/**
 * Releases a flow; null is ignored.
 *
 * # Safety
 * `flow` must come from an `sg_transport_*` call and not be used afterwards.
 */
void sg_flow_free(SgFlow *flow);

/**
 * Grows `count` balls in `R^dim` (centers row-major) up to `horizon`.
 *
 * # Safety
 * Pointers must be valid for the given lengths; `out` for writes.
 */
SgStatus sg_balls_grow(const double *centers,
                       const double *radii,
                       size_t count,
                       size_t dim,
                       double horizon,
                       SgTrajectory **out);

/**
 * Balls at time `t`: writes up to `capacity` centers (row-major) and radii,
 * and the actual count to `count`.
 *
 * # Safety
 * `centers` must hold `capacity * dim` entries and `radii` `capacity`.
 */
SgStatus sg_trajectory_at(const SgTrajectory *traj,
                          double t,
                          double *centers,
                          double *radii,
                          size_t capacity,
                          size_t *count);

/**
 * Release a trajectory; null is ignored.
 *
 * # Safety
 * `traj` must come from [`sg_balls_grow`] and not be used afterwards.
 */
void sg_trajectory_free(SgTrajectory *traj);

/**
 * Runs the experiment described by the JSON `config` (as accepted by
 * `skelgrid --config`) and writes its outputs to `out_dir` as CSV.
 * `all_pass` receives whether every covered assertion passed.
 *
 * # Safety
 * `config` and `out_dir` must be NUL-terminated; `all_pass` valid for writes.
 */
SgStatus sg_run_experiment(const char *config, uint64_t seed, const char *out_dir, bool *all_pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKELGRID_H */
