//! C ABI for the mimo-uplink library.
//!
//! Conventions:
//! - Every fallible function returns a `MuStatus`; outputs go through
//!   out-pointers that are written only on `MU_OK`.
//! - `MuChain` and `MuScenario` are opaque handles created by `*_new`
//!   constructors and released with the matching `*_free`. Passing null
//!   to a `*_free` is a no-op; passing null anywhere else yields
//!   `MU_NULL_POINTER`.
//! - The last error message of the calling thread is available via
//!   `mu_last_error_message`.
//! - dB in, dB out; handles are immutable after construction and safe to
//!   share across threads.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use mimo_uplink::bussgang::bussgang_mc;
use mimo_uplink::channel::ArrayGeometry;
use mimo_uplink::error::Error;
use mimo_uplink::framework::cascade_gamma_db;
use mimo_uplink::math::db_to_lin;
use mimo_uplink::nonlinearity::NonlinearChain;
use mimo_uplink::powercontrol::{analytic_alpha_no_pc, PcScheme, PowerControlConfig};
use mimo_uplink::receiver::{ber_monte_carlo, LinkScenario};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuStatus {
    MuOk = 0,
    MuInvalidParameter = 1,
    MuInfeasible = 2,
    MuRuntimeError = 3,
    MuNullPointer = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MuStatus {
    match e {
        Error::InvalidParameter(_) | Error::Config(_) => MuStatus::MuInvalidParameter,
        Error::PlacementInfeasible(_) | Error::SearchFailed(_) => MuStatus::MuInfeasible,
        Error::Io(_) => MuStatus::MuRuntimeError,
    }
}

fn guard<F: FnOnce() -> MuStatus>(f: F) -> MuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            MuStatus::MuRuntimeError
        }
    }
}

/// Copy the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len` bytes). Returns the full message
/// length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn mu_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Opaque receive-chain handle.
pub struct MuChain {
    inner: NonlinearChain,
}

/// Create an identity (distortion-free) chain.
#[no_mangle]
pub extern "C" fn mu_chain_identity_new() -> *mut MuChain {
    Box::into_raw(Box::new(MuChain { inner: NonlinearChain::identity() }))
}

/// Create the standard chain: third-order passband amplifier, third-order
/// baseband amplifier (compression points in dB referred to the chain
/// input power), ideal AGC, and a `bits`-bit uniform ADC per real
/// dimension.
///
/// # Safety
/// `out` must be a valid pointer to a `*mut MuChain`.
#[no_mangle]
pub unsafe extern "C" fn mu_chain_standard_new(
    pb_p1db_db: f64,
    bb_p1db_db: f64,
    bits: u32,
    out: *mut *mut MuChain,
) -> MuStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return MuStatus::MuNullPointer;
    }
    guard(|| match NonlinearChain::standard(pb_p1db_db, bb_p1db_db, bits) {
        Ok(c) => {
            *out = Box::into_raw(Box::new(MuChain { inner: c }));
            MuStatus::MuOk
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    })
}

/// Release a chain handle. Null is a no-op.
///
/// # Safety
/// `chain` must be a pointer returned by a `mu_chain_*_new` constructor
/// that has not already been freed.
#[no_mangle]
pub unsafe extern "C" fn mu_chain_free(chain: *mut MuChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Bussgang linearization of the chain at the given input power: gain
/// magnitude `a`, distortion power `sigma_g2`, and intrinsic SNR
/// `gamma_g_db` (+inf for a distortion-free chain), by Monte Carlo with
/// `n_samples` samples. Deterministic in `seed`.
///
/// # Safety
/// `chain` must be a live chain handle; out-pointers must be valid or
/// null (skipped).
#[no_mangle]
pub unsafe extern "C" fn mu_chain_bussgang(
    chain: *const MuChain,
    input_power: f64,
    n_samples: usize,
    seed: u64,
    a: *mut f64,
    sigma_g2: *mut f64,
    gamma_g_db: *mut f64,
) -> MuStatus {
    if chain.is_null() {
        set_error("chain handle is null");
        return MuStatus::MuNullPointer;
    }
    guard(|| {
        let c = &(*chain).inner;
        let run = || -> Result<(f64, f64, f64), Error> {
            if c.is_identity() {
                return Ok((1.0, 0.0, f64::INFINITY));
            }
            let eval = c.evaluator(input_power)?;
            let p = bussgang_mc(&eval, input_power, n_samples, seed)?;
            Ok((p.a.norm(), p.sigma_g2, p.gamma_db()))
        };
        match run() {
            Ok((av, sv, gv)) => {
                if !a.is_null() {
                    *a = av;
                }
                if !sigma_g2.is_null() {
                    *sigma_g2 = sv;
                }
                if !gamma_g_db.is_null() {
                    *gamma_g_db = gv;
                }
                MuStatus::MuOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Cascade intrinsic SNR (dB) at the normalized operating point.
///
/// # Safety
/// `chain` must be a live chain handle and `gamma_g_db` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mu_chain_gamma_db(
    chain: *const MuChain,
    n_samples: usize,
    seed: u64,
    gamma_g_db: *mut f64,
) -> MuStatus {
    if chain.is_null() || gamma_g_db.is_null() {
        set_error("null pointer");
        return MuStatus::MuNullPointer;
    }
    guard(|| {
        let c = &(*chain).inner;
        if c.is_identity() {
            *gamma_g_db = f64::INFINITY;
            return MuStatus::MuOk;
        }
        match cascade_gamma_db(c, n_samples, seed) {
            Ok(g) => {
                *gamma_g_db = g;
                MuStatus::MuOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Power-control scheme selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MuPowerControl {
    MuPcNone = 0,
    MuPcNaive = 1,
    MuPcAdaptive = 2,
}

/// Opaque link scenario handle.
pub struct MuScenario {
    inner: LinkScenario,
}

/// Create a link scenario: `n_antennas`-element half-wavelength array at
/// `carrier_ghz`, `k_users` mobiles dropped uniformly in area between
/// `r_min_m` and `r_max_m`, edge SNR `snr_edge_db`, availability target
/// `availability` (e.g. 0.95).
///
/// # Safety
/// `out` must be a valid pointer to a `*mut MuScenario`.
#[no_mangle]
pub unsafe extern "C" fn mu_scenario_new(
    n_antennas: usize,
    carrier_ghz: f64,
    k_users: usize,
    r_min_m: f64,
    r_max_m: f64,
    power_control: MuPowerControl,
    snr_edge_db: f64,
    availability: f64,
    out: *mut *mut MuScenario,
) -> MuStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return MuStatus::MuNullPointer;
    }
    guard(|| {
        let build = || -> Result<LinkScenario, Error> {
            if k_users == 0 {
                return Err(Error::InvalidParameter("k_users must be >= 1".into()));
            }
            if !(0.0 < r_min_m && r_min_m < r_max_m) {
                return Err(Error::InvalidParameter("need 0 < r_min_m < r_max_m".into()));
            }
            if !(0.0..1.0).contains(&availability) {
                return Err(Error::InvalidParameter("availability must be in [0, 1)".into()));
            }
            let geometry = ArrayGeometry::half_wavelength(n_antennas, carrier_ghz)?;
            let min_separation = geometry.default_min_separation();
            let scheme = match power_control {
                MuPowerControl::MuPcNone => PcScheme::None,
                MuPowerControl::MuPcNaive => PcScheme::Naive,
                MuPowerControl::MuPcAdaptive => PcScheme::Adaptive,
            };
            Ok(LinkScenario {
                geometry,
                k_users,
                r_min: r_min_m,
                r_max: r_max_m,
                min_separation,
                power_control: PowerControlConfig::new(scheme),
                snr_edge: db_to_lin(snr_edge_db),
                availability,
            })
        };
        match build() {
            Ok(s) => {
                *out = Box::into_raw(Box::new(MuScenario { inner: s }));
                MuStatus::MuOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a scenario handle. Null is a no-op.
///
/// # Safety
/// `scenario` must be a pointer returned by `mu_scenario_new` that has
/// not already been freed.
#[no_mangle]
pub unsafe extern "C" fn mu_scenario_free(scenario: *mut MuScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Link-level BER Monte Carlo through the chain with LMMSE reception:
/// writes the availability-quantile BER across `n_drops` user placements
/// of `n_symbols` QPSK symbols each. `gamma_g_db` is the chain's cascade
/// intrinsic SNR (use `mu_chain_gamma_db`, or +inf for the identity
/// chain). Deterministic in `seed`, independent of worker count.
///
/// # Safety
/// `scenario` and `chain` must be live handles; `quantile_ber` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mu_simulate_quantile_ber(
    scenario: *const MuScenario,
    chain: *const MuChain,
    gamma_g_db: f64,
    n_symbols: usize,
    n_drops: usize,
    seed: u64,
    quantile_ber: *mut f64,
) -> MuStatus {
    if scenario.is_null() || chain.is_null() || quantile_ber.is_null() {
        set_error("null pointer");
        return MuStatus::MuNullPointer;
    }
    guard(|| {
        let gamma = if gamma_g_db.is_infinite() { f64::INFINITY } else { db_to_lin(gamma_g_db) };
        match ber_monte_carlo(
            &(*scenario).inner,
            &(*chain).inner,
            gamma,
            n_symbols,
            n_drops,
            seed,
        ) {
            Ok(r) => {
                *quantile_ber = r.quantile_ber;
                MuStatus::MuOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Closed-form power-control factor alpha_p (dB) for uniform-in-area
/// users without power control.
///
/// # Safety
/// `alpha_p_db` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mu_alpha_no_pc_db(
    r_min_m: f64,
    r_max_m: f64,
    alpha_p_db: *mut f64,
) -> MuStatus {
    if alpha_p_db.is_null() {
        set_error("null pointer");
        return MuStatus::MuNullPointer;
    }
    match analytic_alpha_no_pc(r_min_m, r_max_m) {
        Ok(a) => {
            *alpha_p_db = mimo_uplink::math::lin_to_db(a);
            MuStatus::MuOk
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}
