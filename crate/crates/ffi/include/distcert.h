#ifndef DISTCERT_H
#define DISTCERT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DcStatus {
  DC_STATUS_OK = 0,
  DC_STATUS_NULL_POINTER = 1,
  DC_STATUS_INVALID_UTF8 = 2,
  DC_STATUS_INVALID_ARGUMENT = 3,
  DC_STATUS_UNKNOWN_ALGORITHM = 4,
  DC_STATUS_UNCERTIFIABLE = 5,
  DC_STATUS_INFEASIBLE = 6,
  DC_STATUS_SOLVER_FAILURE = 7,
  DC_STATUS_JSON = 8,
  DC_STATUS_PANIC = 9,
  DC_STATUS_OTHER = 10,
} DcStatus;

typedef struct DcCertificate DcCertificate;

typedef struct DcRealization DcRealization;

typedef struct DcSvlDesign DcSvlDesign;

typedef struct DcSvlParams {
  double alpha;
  double beta;
  double gamma;
  double delta;
  double rho;
} DcSvlParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. Owned by the library.
 */
const char *dc_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void dc_string_free(char *s);

/**
 * Builds a catalog algorithm by name (`"EXTRA"`, `"NIDS"`, ...). SVL uses `dc_svl_design_realization`.
 *
 * # Safety
 * `name` must be a nul-terminated string and `out` a valid pointer.
 */
enum DcStatus dc_realization_catalog(const char *name,
                                     double alpha,
                                     double mu,
                                     double m,
                                     double l,
                                     struct DcRealization **out);

/**
 * Parses a realization from its JSON form.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum DcStatus dc_realization_from_json(const char *json, struct DcRealization **out);

/**
 * # Safety
 * `h` must come from this library and not be freed twice.
 */
void dc_realization_free(struct DcRealization *h);

/**
 * Smallest certified rate for `r` on the class with strong convexity `m`,
 * smoothness `l` and spectral gap bound `sigma`, up to bisection tolerance `tol`.
 *
 * # Safety
 * `r` must be a live handle; `out_rho` a valid pointer; `out_cert` null or valid.
 */
enum DcStatus dc_certify(const struct DcRealization *r,
                         double m,
                         double l,
                         double sigma,
                         double tol,
                         double *out_rho,
                         struct DcCertificate **out_cert);

/**
 * # Safety
 * `c` must be a live handle.
 */
double dc_certificate_rho(const struct DcCertificate *c);

/**
 * Serializes the certificate matrices. Release the result with `dc_string_free`.
 *
 * # Safety
 * `c` must be a live handle and `out` a valid pointer.
 */
enum DcStatus dc_certificate_to_json(const struct DcCertificate *c, char **out);

/**
 * # Safety
 * `h` must come from this library and not be freed twice.
 */
void dc_certificate_free(struct DcCertificate *h);

/**
 * Designs SVL parameters for condition number `kappa` and gap bound `sigma`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DcStatus dc_svl_design(double kappa, double sigma, double eps, struct DcSvlDesign **out);

/**
 * # Safety
 * `d` must be a live handle and `out` a valid pointer.
 */
enum DcStatus dc_svl_design_params(const struct DcSvlDesign *d, struct DcSvlParams *out);

/**
 * Realization of a designed SVL instance, for use with `dc_certify`.
 *
 * # Safety
 * `d` must be a live handle and `out` a valid pointer.
 */
enum DcStatus dc_svl_design_realization(const struct DcSvlDesign *d, struct DcRealization **out);

/**
 * # Safety
 * `h` must come from this library and not be freed twice.
 */
void dc_svl_design_free(struct DcSvlDesign *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTCERT_H */
