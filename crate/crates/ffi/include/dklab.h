#ifndef DKLAB_H
#define DKLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DkNoiseMode {
  DK_NOISE_MODE_FROZEN_FRAME = 0,
  DK_NOISE_MODE_COMMON_NOISE = 1,
  DK_NOISE_MODE_PURE_FROZEN_FLOW = 2,
} DkNoiseMode;

typedef enum DkStatus {
  DK_STATUS_OK = 0,
  DK_STATUS_NULL_POINTER = 1,
  DK_STATUS_DOMAIN = 2,
  DK_STATUS_SINGULAR = 3,
  DK_STATUS_COLLISION = 4,
  DK_STATUS_MISUSE = 5,
  DK_STATUS_INSUFFICIENT_DATA = 6,
  DK_STATUS_CONFIG = 7,
  DK_STATUS_PARSE = 8,
  DK_STATUS_IO = 9,
  DK_STATUS_JSON = 10,
  DK_STATUS_INVALID_UTF8 = 11,
  DK_STATUS_PANIC = 12,
} DkStatus;

// Empirical measure on the torus.
typedef struct DkMeasure DkMeasure;

// Simulation parameters.
typedef struct DkParams DkParams;

// Test function parsed from its short name (`e1`, `e-2`, `de1`, `bump`, `const(2)`).
typedef struct DkTestFn DkTestFn;

// One simulated replica.
typedef struct DkTrajectory DkTrajectory;

typedef struct DkSpectralConstants {
  double beta;
  double k1_n;
  double k2_n;
  double k2_inf;
  uintptr_t mode_cut;
} DkSpectralConstants;

typedef struct DkCollision {
  double t;
  uintptr_t i;
  double gap;
} DkCollision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none. Valid until the next failure.
const char *dk_last_error_message(void);

const char *dk_version(void);

// `e_k(x)`.
double dk_fourier_basis(int32_t k, double x);

// Truncated kernel `Q̄_K(u)` and the bound on the omitted tail.
//
// # Safety
// `value` and `tail_bound` must be valid for writes.
enum DkStatus dk_kernel_qbar(double beta,
                             double u,
                             uintptr_t k_trunc,
                             double *value,
                             double *tail_bound);

// # Safety
// `result` must be valid for writes.
enum DkStatus dk_spectral_constants(double beta, uintptr_t n, struct DkSpectralConstants *result);

// Parameters with defaults for everything not listed (uniform grid start, seed 0, save every step).
//
// # Safety
// `result` must be valid for writes; the handle is released with [`dk_params_free`].
enum DkStatus dk_params_new(uintptr_t n,
                            double beta,
                            double alpha,
                            double t_end,
                            double dt,
                            enum DkNoiseMode mode,
                            struct DkParams **result);

// # Safety
// `params` must come from [`dk_params_new`].
enum DkStatus dk_params_set_seed(struct DkParams *params, uint64_t seed);

// # Safety
// `params` must come from [`dk_params_new`].
enum DkStatus dk_params_set_save_stride(struct DkParams *params, uintptr_t stride);

// # Safety
// `params` must come from [`dk_params_new`] or be null.
void dk_params_free(struct DkParams *params);

// Simulates replica `replica_id`. A collision stops the path early and is reported through
// [`dk_trajectory_collision`], not as an error.
//
// # Safety
// `params` must be a live handle and `result` valid for writes.
enum DkStatus dk_simulate_replica(const struct DkParams *params,
                                  uint64_t replica_id,
                                  struct DkTrajectory **result);

// Number of saved states; 0 for a null handle.
//
// # Safety
// `traj` must be a live handle or null.
uintptr_t dk_trajectory_len(const struct DkTrajectory *traj);

// Particle count of the saved states; 0 for a null handle.
//
// # Safety
// `traj` must be a live handle or null.
uintptr_t dk_trajectory_particles(const struct DkTrajectory *traj);

// Time of save `idx` and its positions copied into `x[0..len]`; `len` must equal the particle count.
//
// # Safety
// `traj` must be a live handle, `t` valid for writes and `x` valid for `len` writes.
enum DkStatus dk_trajectory_state(const struct DkTrajectory *traj,
                                  uintptr_t idx,
                                  double *t,
                                  double *x,
                                  uintptr_t len);

// Returns 1 and fills `event` if the replica stopped on a collision, 0 otherwise.
//
// # Safety
// `traj` must be a live handle or null; `event` valid for writes or null.
int32_t dk_trajectory_collision(const struct DkTrajectory *traj, struct DkCollision *event);

// # Safety
// `traj` must come from [`dk_simulate_replica`] or be null.
void dk_trajectory_free(struct DkTrajectory *traj);

// Uniform-weight empirical measure of `x[0..len]`, positions taken modulo 1.
//
// # Safety
// `x` must be valid for `len` reads and `result` valid for writes.
enum DkStatus dk_measure_new(const double *x, uintptr_t len, struct DkMeasure **result);

// # Safety
// `m` must be a live handle and `result` valid for writes.
enum DkStatus dk_measure_cdf(const struct DkMeasure *m, double x, double *result);

// # Safety
// `m` must be a live handle and `result` valid for writes.
enum DkStatus dk_measure_quantile(const struct DkMeasure *m, double u, double *result);

// # Safety
// `m` must be a live handle and `result` valid for writes.
enum DkStatus dk_measure_max_window_mass(const struct DkMeasure *m, double width, double *result);

// Circular Wasserstein-1 distance of two measures with equal atom counts.
//
// # Safety
// `a` and `b` must be live handles and `result` valid for writes.
enum DkStatus dk_measure_wasserstein1(const struct DkMeasure *a,
                                      const struct DkMeasure *b,
                                      double *result);

// # Safety
// `m` must come from [`dk_measure_new`] or be null.
void dk_measure_free(struct DkMeasure *m);

// # Safety
// `name` must be a NUL-terminated string and `result` valid for writes.
enum DkStatus dk_testfn_parse(const char *name, struct DkTestFn **result);

// Value and first two derivatives at `x`.
//
// # Safety
// `f` must be a live handle; each output must be valid for writes.
enum DkStatus dk_testfn_eval(const struct DkTestFn *f,
                             double x,
                             double *value,
                             double *d1,
                             double *d2);

// # Safety
// `f` must come from [`dk_testfn_parse`] or be null.
void dk_testfn_free(struct DkTestFn *f);

// Q-form of `f` at `m` from the kernel double sum truncated at `k_trunc`.
//
// # Safety
// `m` and `f` must be live handles; outputs valid for writes.
enum DkStatus dk_qform_direct(const struct DkMeasure *m,
                              const struct DkTestFn *f,
                              double beta,
                              uintptr_t k_trunc,
                              double *value,
                              double *tail_bound);

// Q-form of `f` at `m` from pushforward Fourier coefficients truncated at `k_trunc`.
//
// # Safety
// `m` and `f` must be live handles; outputs valid for writes.
enum DkStatus dk_qform_spectral(const struct DkMeasure *m,
                                const struct DkTestFn *f,
                                double beta,
                                uintptr_t k_trunc,
                                double *value,
                                double *tail_bound);

// Runs a TOML experiment config. `out_dir` overrides the configured output directory when
// non-null. `all_pass` receives 1 when every configured check passed and some replica survived.
//
// # Safety
// `config_path` must be a NUL-terminated string, `out_dir` one or null, `all_pass` valid for writes.
enum DkStatus dk_run_config(const char *config_path,
                            const char *out_dir,
                            int32_t *all_pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DKLAB_H */
