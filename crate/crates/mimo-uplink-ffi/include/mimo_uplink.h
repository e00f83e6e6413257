/* C interface to the mimo-uplink library. */

#ifndef MIMO_UPLINK_H
#define MIMO_UPLINK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Power-control scheme selector.
typedef enum MuPowerControl {
  MU_PC_NONE = 0,
  MU_PC_NAIVE = 1,
  MU_PC_ADAPTIVE = 2,
} MuPowerControl;

// Status codes returned by every fallible entry point.
typedef enum MuStatus {
  MU_OK = 0,
  MU_INVALID_PARAMETER = 1,
  MU_INFEASIBLE = 2,
  MU_RUNTIME_ERROR = 3,
  MU_NULL_POINTER = 4,
} MuStatus;

// Opaque receive-chain handle.
typedef struct MuChain MuChain;

// Opaque link scenario handle.
typedef struct MuScenario MuScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copy the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len` bytes). Returns the full message
// length in bytes, excluding the terminator.
//
// # Safety
// `buf` must point to `len` writable bytes, or be null (query mode).
size_t mu_last_error_message(char *buf, size_t len);

// Create an identity (distortion-free) chain.
struct MuChain *mu_chain_identity_new(void);

// Create the standard chain: third-order passband amplifier, third-order
// baseband amplifier (compression points in dB referred to the chain
// input power), ideal AGC, and a `bits`-bit uniform ADC per real
// dimension.
//
// # Safety
// `out` must be a valid pointer to a `*mut MuChain`.
enum MuStatus mu_chain_standard_new(double pb_p1db_db,
                                    double bb_p1db_db,
                                    uint32_t bits,
                                    struct MuChain **out);

// Release a chain handle. Null is a no-op.
//
// # Safety
// `chain` must be a pointer returned by a `mu_chain_*_new` constructor
// that has not already been freed.
void mu_chain_free(struct MuChain *chain);

// Bussgang linearization of the chain at the given input power: gain
// magnitude `a`, distortion power `sigma_g2`, and intrinsic SNR
// `gamma_g_db` (+inf for a distortion-free chain), by Monte Carlo with
// `n_samples` samples. Deterministic in `seed`.
//
// # Safety
// `chain` must be a live chain handle; out-pointers must be valid or
// null (skipped).
enum MuStatus mu_chain_bussgang(const struct MuChain *chain,
                                double input_power,
                                size_t n_samples,
                                uint64_t seed,
                                double *a,
                                double *sigma_g2,
                                double *gamma_g_db);

// Cascade intrinsic SNR (dB) at the normalized operating point.
//
// # Safety
// `chain` must be a live chain handle and `gamma_g_db` a valid pointer.
enum MuStatus mu_chain_gamma_db(const struct MuChain *chain,
                                size_t n_samples,
                                uint64_t seed,
                                double *gamma_g_db);

// Create a link scenario: `n_antennas`-element half-wavelength array at
// `carrier_ghz`, `k_users` mobiles dropped uniformly in area between
// `r_min_m` and `r_max_m`, edge SNR `snr_edge_db`, availability target
// `availability` (e.g. 0.95).
//
// # Safety
// `out` must be a valid pointer to a `*mut MuScenario`.
enum MuStatus mu_scenario_new(size_t n_antennas,
                              double carrier_ghz,
                              size_t k_users,
                              double r_min_m,
                              double r_max_m,
                              enum MuPowerControl power_control,
                              double snr_edge_db,
                              double availability,
                              struct MuScenario **out);

// Release a scenario handle. Null is a no-op.
//
// # Safety
// `scenario` must be a pointer returned by `mu_scenario_new` that has
// not already been freed.
void mu_scenario_free(struct MuScenario *scenario);

// Link-level BER Monte Carlo through the chain with LMMSE reception:
// writes the availability-quantile BER across `n_drops` user placements
// of `n_symbols` QPSK symbols each. `gamma_g_db` is the chain's cascade
// intrinsic SNR (use `mu_chain_gamma_db`, or +inf for the identity
// chain). Deterministic in `seed`, independent of worker count.
//
// # Safety
// `scenario` and `chain` must be live handles; `quantile_ber` must be a
// valid pointer.
enum MuStatus mu_simulate_quantile_ber(const struct MuScenario *scenario,
                                       const struct MuChain *chain,
                                       double gamma_g_db,
                                       size_t n_symbols,
                                       size_t n_drops,
                                       uint64_t seed,
                                       double *quantile_ber);

// Closed-form power-control factor alpha_p (dB) for uniform-in-area
// users without power control.
//
// # Safety
// `alpha_p_db` must be a valid pointer.
enum MuStatus mu_alpha_no_pc_db(double r_min_m, double r_max_m, double *alpha_p_db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MIMO_UPLINK_H */
