#ifndef HYPERCONE_H
#define HYPERCONE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum HcStatus {
  HC_STATUS_OK = 0,
  HC_STATUS_NULL_POINTER = 1,
  HC_STATUS_INVALID_ARGUMENT = 2,
  HC_STATUS_PRECONDITION = 3,
  HC_STATUS_RUNTIME = 4,
  HC_STATUS_CHECK_FAILED = 5,
  HC_STATUS_PANIC = 6,
} HcStatus;

/**
 * Coefficient family `t ↦ (A_1(t), …, A_n(t))`.
 */
typedef struct HcFamily HcFamily;

/**
 * Symmetrizer `S(t, ξ)` with its bounds.
 */
typedef struct HcSymmetrizer HcSymmetrizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after success.
 */
const char *hc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hc_version(void);

/**
 * Constant coefficients. `matrices` holds `n` row-major `m×m` blocks.
 *
 * # Safety
 * `matrices` must point to `n·m·m` doubles and `out` must be writable.
 */
enum HcStatus hc_family_constant(size_t n,
                                 size_t m,
                                 const double *matrices_ptr,
                                 double t_final,
                                 struct HcFamily **out);

/**
 * Oscillatory coefficients `B_j (1 + ½ sin ωt)`.
 *
 * # Safety
 * As for [`hc_family_constant`].
 */
enum HcStatus hc_family_smooth(size_t n,
                               size_t m,
                               const double *matrices_ptr,
                               double omega,
                               double t_final,
                               struct HcFamily **out);

/**
 * # Safety
 * `family` must come from an `hc_family_*` constructor or be null.
 */
void hc_family_free(struct HcFamily *family);

/**
 * `α(t) = Σ_j ‖A_j(t)‖`.
 *
 * # Safety
 * `family` must be a live handle and `out` writable.
 */
enum HcStatus hc_family_alpha(const struct HcFamily *family, double t, double *out);

/**
 * Forward and backward cone radii `r(t)`, `ϱ(t)` for data radius `r0`.
 *
 * # Safety
 * `family` must be a live handle; `forward` and `backward` writable.
 */
enum HcStatus hc_cone_radii(const struct HcFamily *family,
                            double r0,
                            double big_lambda,
                            double t,
                            double *forward,
                            double *backward);

/**
 * `S ≡ Id` of size `m`.
 *
 * # Safety
 * `out` must be writable.
 */
enum HcStatus hc_symmetrizer_identity(size_t m, double t_final, struct HcSymmetrizer **out);

/**
 * Eigenprojector symmetrizer for strictly hyperbolic coefficients.
 *
 * # Safety
 * `family` must be a live handle and `out` writable.
 */
enum HcStatus hc_symmetrizer_build_strict(const struct HcFamily *family,
                                          struct HcSymmetrizer **out);

/**
 * # Safety
 * `s` must come from an `hc_symmetrizer_*` constructor or be null.
 */
void hc_symmetrizer_free(struct HcSymmetrizer *s);

/**
 * Declared bounds `λ ≤ S ≤ Λ`.
 *
 * # Safety
 * `s` must be a live handle; `lambda` and `big_lambda` writable.
 */
enum HcStatus hc_symmetrizer_bounds(const struct HcSymmetrizer *s,
                                    double *lambda,
                                    double *big_lambda);

/**
 * Writes `S(t, ξ)` row-major into `re` and `im`, each of length `m·m`.
 *
 * # Safety
 * `xi` must hold `n` doubles; `re` and `im` must hold `m·m` doubles.
 */
enum HcStatus hc_symmetrizer_eval(const struct HcSymmetrizer *s,
                                  double t,
                                  const double *xi,
                                  size_t n,
                                  double *re,
                                  double *im);

/**
 * Runs the full experiment described by a JSON config and writes its
 * reports to `out_dir` (or the config's own output directory when null).
 * `threads = 0` uses the global pool. Returns `CheckFailed` when the run
 * completes but a check fails.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `out_dir` may be null.
 */
enum HcStatus hc_run_config(const char *config_path,
                            const char *out_dir,
                            size_t threads,
                            uint64_t seed,
                            int use_seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYPERCONE_H */
