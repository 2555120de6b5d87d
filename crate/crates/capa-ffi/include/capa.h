#ifndef CAPA_H
#define CAPA_H

/* Generated by cbindgen from capa-ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CapaStatus {
  CAPA_STATUS_OK = 0,
  CAPA_STATUS_NULL_POINTER = 1,
  CAPA_STATUS_DOMAIN = 2,
  CAPA_STATUS_CONFIG = 3,
  CAPA_STATUS_RANK_DEFICIENT = 4,
  CAPA_STATUS_NUMERICAL = 5,
  CAPA_STATUS_RESONANCE = 6,
  CAPA_STATUS_PANIC = 7,
} CapaStatus;

/**
 * A rectangular planar aperture in 3-D space.
 */
typedef struct CapaAperture CapaAperture;

/**
 * Carrier frequency and derived constants.
 */
typedef struct CapaCarrier CapaCarrier;

/**
 * Singular spectrum of a line-of-sight link.
 */
typedef struct CapaModes CapaModes;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *capa_version(void);

/**
 * Message of the last failed call on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *capa_last_error(void);

enum CapaStatus capa_carrier_new(double frequency_hz, struct CapaCarrier **out);

void capa_carrier_free(struct CapaCarrier *carrier);

/**
 * Free-space wavelength in metres.
 */
enum CapaStatus capa_carrier_wavelength(const struct CapaCarrier *carrier, double *out);

/**
 * Aperture centred at `center_m[3]`, rotated by z-y-x Euler angles in
 * radians, with side lengths `len_x_m` and `len_z_m`.
 */
enum CapaStatus capa_aperture_new(const double *center_m,
                                  const double *euler_rad,
                                  double len_x_m,
                                  double len_z_m,
                                  struct CapaAperture **out);

void capa_aperture_free(struct CapaAperture *aperture);

enum CapaStatus capa_aperture_area(const struct CapaAperture *aperture, double *out);

/**
 * Landau degrees-of-freedom estimate at link distance `distance_m`,
 * using the receiver's orientation for the projection factor.
 */
enum CapaStatus capa_landau_dof(const struct CapaAperture *tx,
                                const struct CapaAperture *rx,
                                double distance_m,
                                const struct CapaCarrier *carrier,
                                double *out);

/**
 * Leading singular spectrum of the LoS link with the automatically chosen
 * discretization; modes down to `threshold`·σ₁² are resolved.
 */
enum CapaStatus capa_los_modes_new(const struct CapaAperture *tx,
                                   const struct CapaAperture *rx,
                                   const struct CapaCarrier *carrier,
                                   double threshold,
                                   uint64_t seed,
                                   struct CapaModes **out);

void capa_modes_free(struct CapaModes *modes);

enum CapaStatus capa_modes_len(const struct CapaModes *modes, size_t *out);

/**
 * Copies up to `capacity` singular values (descending) into `values` and
 * stores the number copied in `written`.
 */
enum CapaStatus capa_modes_singular_values(const struct CapaModes *modes,
                                           double *values,
                                           size_t capacity,
                                           size_t *written);

/**
 * Modes with σ_n²/σ_1² at or above `threshold`.
 */
enum CapaStatus capa_modes_dof(const struct CapaModes *modes, double threshold, size_t *out);

/**
 * Water-filling capacity in bits per channel use.
 */
enum CapaStatus capa_modes_waterfill_capacity(const struct CapaModes *modes,
                                              double power,
                                              double noise,
                                              double *out);

/**
 * Kolmogorov information capacity in bits at resolution `epsilon`.
 */
enum CapaStatus capa_kolmogorov_capacity(const struct CapaModes *modes,
                                         double power,
                                         double epsilon,
                                         double *out);

/**
 * Kolmogorov capacity of an explicit descending singular spectrum.
 */
enum CapaStatus capa_kolmogorov_capacity_sigmas(const double *sigmas,
                                                size_t len,
                                                double power,
                                                double epsilon,
                                                double *out);

/**
 * Gauss-Legendre nodes and weights on [-1, 1]; both buffers hold `order` values.
 */
enum CapaStatus capa_gl_rule(size_t order, double *nodes, double *weights);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAPA_H */
