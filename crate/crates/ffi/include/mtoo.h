#ifndef MTOO_H
#define MTOO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Bit set in the rule mask of [`mtoo_validate_geometry`].
 */
#define MTOO_RULE_G1 1

#define MTOO_RULE_G2 2

#define MTOO_RULE_G3 4

typedef enum MtooStatus {
  MTOO_STATUS_OK = 0,
  MTOO_STATUS_NULL_POINTER = 1,
  MTOO_STATUS_INVALID_ARGUMENT = 2,
  MTOO_STATUS_DIMENSION_MISMATCH = 3,
  MTOO_STATUS_UNKNOWN_PROFILE = 4,
  MTOO_STATUS_UNKNOWN_TECHNOLOGY = 5,
  MTOO_STATUS_INVALID_GEOMETRY = 6,
  MTOO_STATUS_NON_FINITE = 7,
  MTOO_STATUS_FORMAT = 8,
  MTOO_STATUS_IO = 9,
  MTOO_STATUS_PANIC = 10,
  MTOO_STATUS_OTHER = 11,
} MtooStatus;

/**
 * A trained VAE bundle together with the schemas it was checked against.
 */
typedef struct MtooBundle MtooBundle;

/**
 * The two technology schemas of one profile.
 */
typedef struct MtooSchemas MtooSchemas;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *mtoo_last_error_message(void);

/**
 * Schemas for `"desk"` or `"paper_shape"`.
 *
 * # Safety
 * `profile` must be a nul-terminated string and `out` writable.
 */
enum MtooStatus mtoo_schemas_new(const char *profile, struct MtooSchemas **out);

/**
 * # Safety
 * `schemas` must come from [`mtoo_schemas_new`] and not be used afterwards.
 */
void mtoo_schemas_free(struct MtooSchemas *schemas);

/**
 * Length of the combined vector (tag plus both blocks).
 *
 * # Safety
 * Pointers must be valid.
 */
enum MtooStatus mtoo_schemas_combined_dim(const struct MtooSchemas *schemas, size_t *out);

/**
 * Native parameter count of one technology (1 = ASM, 2 = PMSM).
 *
 * # Safety
 * Pointers must be valid.
 */
enum MtooStatus mtoo_schemas_native_dim(const struct MtooSchemas *schemas,
                                        int64_t technology_id,
                                        size_t *out);

/**
 * Geometry check of a native design. `out_valid` receives 1 or 0 and
 * `out_mask` the violated rules as `MTOO_RULE_*` bits.
 *
 * # Safety
 * `native` must hold `len` values; the outputs must be writable.
 */
enum MtooStatus mtoo_validate_geometry(const struct MtooSchemas *schemas,
                                       int64_t technology_id,
                                       const double *native,
                                       size_t len,
                                       int32_t *out_valid,
                                       uint32_t *out_mask);

/**
 * Oracle KPIs (cost, power in kW, torque in Nm) of a valid native design under
 * the default system parameters. `out_kpis` must hold 3 values.
 *
 * # Safety
 * `native` must hold `len` values and `out_kpis` three.
 */
enum MtooStatus mtoo_evaluate_kpis(const struct MtooSchemas *schemas,
                                   int64_t technology_id,
                                   const double *native,
                                   size_t len,
                                   double *out_kpis);

/**
 * Snaps a raw decoder output onto the combined design space.
 *
 * # Safety
 * `raw` holds `len` values, `out` holds `out_len`; both equal the combined dim.
 */
enum MtooStatus mtoo_transform_decoded(const struct MtooSchemas *schemas,
                                       const double *raw,
                                       size_t len,
                                       double *out,
                                       size_t out_len);

/**
 * Combined vector of a native design: tag, active block, zeros elsewhere.
 *
 * # Safety
 * `native` holds `len` values, `out` holds `out_len`.
 */
enum MtooStatus mtoo_encode_combined(const struct MtooSchemas *schemas,
                                     int64_t technology_id,
                                     const double *native,
                                     size_t len,
                                     double *out,
                                     size_t out_len);

/**
 * Loads a VAE bundle file and checks it against `schemas`.
 *
 * # Safety
 * `path` is a nul-terminated path; `out` writable.
 */
enum MtooStatus mtoo_bundle_load(const char *path,
                                 const struct MtooSchemas *schemas,
                                 struct MtooBundle **out);

/**
 * # Safety
 * `bundle` must come from [`mtoo_bundle_load`] and not be used afterwards.
 */
void mtoo_bundle_free(struct MtooBundle *bundle);

/**
 * # Safety
 * Pointers must be valid.
 */
enum MtooStatus mtoo_bundle_latent_dim(const struct MtooBundle *bundle, size_t *out);

/**
 * Posterior mean and standard deviation of a combined vector.
 *
 * # Safety
 * `x` holds `len` values; `out_mean` and `out_sigma` hold `latent_len` each.
 */
enum MtooStatus mtoo_bundle_encode(const struct MtooBundle *bundle,
                                   const double *x,
                                   size_t len,
                                   double *out_mean,
                                   double *out_sigma,
                                   size_t latent_len);

/**
 * Raw (untransformed) decoder output in native units.
 *
 * # Safety
 * `z` holds `len` values, `out` holds `out_len`.
 */
enum MtooStatus mtoo_bundle_decode(const struct MtooBundle *bundle,
                                   const double *z,
                                   size_t len,
                                   double *out,
                                   size_t out_len);

/**
 * Predicted KPIs at a latent point. `out_kpis` holds 3 values.
 *
 * # Safety
 * `z` holds `len` values.
 */
enum MtooStatus mtoo_bundle_predict_kpis(const struct MtooBundle *bundle,
                                         const double *z,
                                         size_t len,
                                         double *out_kpis);

/**
 * The optimizer's objective path: decode, transform, re-encode, predict.
 * Writes the KPIs (3 values) and the transformed combined design.
 *
 * # Safety
 * `z` holds `len` values, `out_kpis` three, `out_design` `design_len`.
 */
enum MtooStatus mtoo_bundle_latent_objective(const struct MtooBundle *bundle,
                                             const double *z,
                                             size_t len,
                                             double *out_kpis,
                                             double *out_design,
                                             size_t design_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTOO_H */
