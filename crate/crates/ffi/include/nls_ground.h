#ifndef NLS_GROUND_H
#define NLS_GROUND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/*
 Result codes.
 */
typedef enum NgStatus {
  NG_STATUS_OK = 0,
  NG_STATUS_NULL_POINTER = 1,
  NG_STATUS_INVALID_ARGUMENT = 2,
  NG_STATUS_PARSE = 3,
  NG_STATUS_NOT_CONVERGED = 4,
  /*
   The requested quantity is undefined (for example the multiplier of a zero component).
   */
  NG_STATUS_NO_VALUE = 5,
  NG_STATUS_INTERNAL = 6,
} NgStatus;

/*
 Opaque solver result.
 */
typedef struct NgSolution NgSolution;

/*
 Opaque validated nonlinearity.
 */
typedef struct NgSpec NgSpec;

/*
 Solver parameters passed by value.
 */
typedef struct NgSolveParams {
  double r_max;
  size_t nodes;
  size_t starts;
  size_t max_iters;
  double tolerance;
  uint64_t seed;
} NgSolveParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copy the last error message of the calling thread into `buf` (NUL-terminated,
 truncated to `len`). Returns the full message length in bytes.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t ng_last_error_message(char *buf, size_t len);

/*
 Parse a JSON spec (`{"dimension", "components", "terms"}`).

 # Safety
 `json` must be a valid NUL-terminated string and `out` a valid pointer.
 The handle written to `out` must be released with [`ng_spec_free`].
 */
enum NgStatus ng_spec_from_json(const char *json, struct NgSpec **out);

/*
 Number of components of a spec, 0 for null.

 # Safety
 `spec` must be null or a live handle.
 */
size_t ng_spec_components(const struct NgSpec *spec);

/*
 Release a spec; null is ignored.

 # Safety
 `spec` must be null or a handle from [`ng_spec_from_json`] not yet freed.
 */
void ng_spec_free(struct NgSpec *spec);

/*
 Default solver parameters.
 */
struct NgSolveParams ng_solve_params_default(void);

/*
 Minimize under the mass bounds `rho[0..k]`. A run that stops without
 converging still produces a solution and returns [`NgStatus::NotConverged`].

 # Safety
 `spec` must be a live handle, `rho` must point to `k` doubles and `out` must be
 valid. The handle written to `out` must be released with [`ng_solution_free`].
 */
enum NgStatus ng_solve(const struct NgSpec *spec,
                       const double *rho,
                       size_t k,
                       struct NgSolveParams params,
                       struct NgSolution **out);

/*
 Ground-state energy, NaN for null.

 # Safety
 `sol` must be null or a live handle.
 */
double ng_solution_energy(const struct NgSolution *sol);

/*
 Whether the run met its tolerance.

 # Safety
 `sol` must be null or a live handle.
 */
bool ng_solution_converged(const struct NgSolution *sol);

/*
 Number of grid nodes, 0 for null.

 # Safety
 `sol` must be null or a live handle.
 */
size_t ng_solution_len(const struct NgSolution *sol);

/*
 `|u_i|₂²` of component `i`.

 # Safety
 `sol` must be a live handle and `out` a valid pointer.
 */
enum NgStatus ng_solution_mass(const struct NgSolution *sol, size_t i, double *out);

/*
 Lagrange multiplier of component `i`; [`NgStatus::NoValue`] for a zero component.

 # Safety
 `sol` must be a live handle and `out` a valid pointer.
 */
enum NgStatus ng_solution_lambda(const struct NgSolution *sol, size_t i, double *out);

/*
 Copy the grid nodes into `buf`, which must hold [`ng_solution_len`] doubles.

 # Safety
 `sol` must be a live handle and `buf` must point to `len` writable doubles.
 */
enum NgStatus ng_solution_nodes(const struct NgSolution *sol, double *buf, size_t len);

/*
 Copy the nodal values of component `i` into `buf`.

 # Safety
 `sol` must be a live handle and `buf` must point to `len` writable doubles.
 */
enum NgStatus ng_solution_component(const struct NgSolution *sol,
                                    size_t i,
                                    double *buf,
                                    size_t len);

/*
 Release a solution; null is ignored.

 # Safety
 `sol` must be null or a handle from [`ng_solve`] not yet freed.
 */
void ng_solution_free(struct NgSolution *sol);

/*
 Sharp Sobolev constant `S` in dimension `n ≥ 3`.

 # Safety
 `out` must be a valid pointer.
 */
enum NgStatus ng_sobolev_constant(size_t n, double *out);

/*
 Gagliardo–Nirenberg constant `C_{N,p}` for `2 < p ≤ 2*`.

 # Safety
 `out` must be a valid pointer.
 */
enum NgStatus ng_gn_constant(size_t n, double p, double *out);

/*
 Level `(1/N) S^{N/2} Σ θ_j^{1−N/2}` for positive `theta[0..k]`.

 # Safety
 `theta` must point to `k` doubles and `out` must be a valid pointer.
 */
enum NgStatus ng_threshold(size_t n, const double *theta, size_t k, double *out);

/*
 Closed form `(Σ θ_j^{−(N−2)/2})^{2/N} S`.

 # Safety
 `theta` must point to `k` doubles and `out` must be a valid pointer.
 */
enum NgStatus ng_bar_s(size_t n, const double *theta, size_t k, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NLS_GROUND_H */
