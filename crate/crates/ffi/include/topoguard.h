#ifndef TOPOGUARD_H
#define TOPOGUARD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum TgStatus {
  TG_STATUS_OK = 0,
  TG_STATUS_NULL_POINTER = 1,
  TG_STATUS_INVALID_LATTICE = 2,
  TG_STATUS_INVALID_PARAMETER = 3,
  TG_STATUS_INVALID_OPERATOR = 4,
  TG_STATUS_DIMENSION_EXCEEDED = 5,
  TG_STATUS_NOT_CONVERGED = 6,
  TG_STATUS_UNEXPECTED_DEGENERACY = 7,
  TG_STATUS_UNSTABLE_CONFIGURATION = 8,
  TG_STATUS_INTEGRATION_FAILURE = 9,
  TG_STATUS_OUT_OF_RANGE = 10,
  TG_STATUS_OTHER = 11,
  TG_STATUS_PANIC = 12,
} TgStatus;

/*
 A lattice Hamiltonian together with the model it was built from.
 */
typedef struct TgOperator TgOperator;

/*
 Low-lying levels of an operator.
 */
typedef struct TgSpectrum TgSpectrum;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next call into this library from the same thread.
 */
const char *tg_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *tg_version(void);

/*
 Builds the long-range (row/column all-to-all) Hamiltonian on an n×n lattice.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum TgStatus tg_operator_lri(size_t n, double jx, double jy, struct TgOperator **out);

/*
 Builds the nearest-neighbour comparison Hamiltonian with prefactor
 `normalization`; `periodic` selects wrapped boundaries.

 # Safety
 `out` must be a valid pointer to writable storage for one handle.
 */
enum TgStatus tg_operator_sri(size_t n,
                              double jx,
                              double jy,
                              bool periodic,
                              double normalization,
                              struct TgOperator **out);

/*
 Number of Pauli terms in the operator, or 0 for NULL.

 # Safety
 `op` must be NULL or a live handle from this library.
 */
size_t tg_operator_num_terms(const struct TgOperator *op);

/*
 Releases an operator. NULL is ignored.

 # Safety
 `op` must be NULL or a handle from this library not yet freed.
 */
void tg_operator_free(struct TgOperator *op);

/*
 Lowest level of every symmetry sector plus the first excited level.

 # Safety
 `op` must be a live operator handle and `out` writable.
 */
enum TgStatus tg_spectrum_compute(const struct TgOperator *op, struct TgSpectrum **out);

/*
 As `tg_spectrum_compute`, but fails with
 `TG_STATUS_UNEXPECTED_DEGENERACY` unless the ground level is two-fold.

 # Safety
 `op` must be a live operator handle and `out` writable.
 */
enum TgStatus tg_ground_doublet(const struct TgOperator *op, struct TgSpectrum **out);

/*
 Releases a spectrum. NULL is ignored.

 # Safety
 `s` must be NULL or a handle from this library not yet freed.
 */
void tg_spectrum_free(struct TgSpectrum *s);

/*
 Number of stored levels, or 0 for NULL.

 # Safety
 `s` must be NULL or a live spectrum handle.
 */
size_t tg_spectrum_len(const struct TgSpectrum *s);

/*
 Level `index` in ascending order.

 # Safety
 `s` must be a live spectrum handle and `out` writable.
 */
enum TgStatus tg_spectrum_eigenvalue(const struct TgSpectrum *s, size_t index, double *out);

/*
 Gap between the ground level and the next level.

 # Safety
 `s` must be a live spectrum handle and `out` writable.
 */
enum TgStatus tg_spectrum_gap(const struct TgSpectrum *s, double *out);

/*
 Multiplicity of the ground level.

 # Safety
 `s` must be a live spectrum handle and `out` writable.
 */
enum TgStatus tg_spectrum_ground_degeneracy(const struct TgSpectrum *s, size_t *out);

/*
 `Γ = α_N·Γ₀·(b_max/Δ)^(N−1)`.

 # Safety
 `out` must be writable.
 */
enum TgStatus tg_decoherence_rate(double gamma0,
                                  double alpha_n,
                                  double b_max,
                                  double delta_gap,
                                  uint32_t n,
                                  double *out);

/*
 Axial mode frequencies of an `n_ions` chain in units of the trap
 frequency, ascending. Writes `min(len, n_ions)` values.

 # Safety
 `out` must point to `len` writable doubles.
 */
enum TgStatus tg_chain_modes(size_t n_ions, double *out, size_t len);

/*
 Median ground-doublet splitting of the long-range model under `trials`
 random local fields of amplitude `b_max` (units of J).

 # Safety
 `out_median` must be writable.
 */
enum TgStatus tg_doublet_splitting(size_t n,
                                   double jx,
                                   double jy,
                                   double b_max,
                                   size_t trials,
                                   uint64_t seed,
                                   double *out_median);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOPOGUARD_H */
