//! Link-level simulator and analytical design framework for all-digital
//! massive MIMO uplinks with per-antenna nonlinearities.
//!
//! The crate models the receive chain (saturated third-order amplifiers,
//! limiter, AGC, low-resolution ADC), characterizes any nonlinearity by its
//! Bussgang linearization and intrinsic SNR, simulates a LoS multiuser
//! uplink with LMMSE reception and power control, and maps system-level
//! QoS targets to hardware specifications (P1dB values and ADC bit width).

pub mod bussgang;
pub mod channel;
pub mod config;
pub mod error;
pub mod framework;
pub mod math;
pub mod nonlinearity;
pub mod powercontrol;
pub mod receiver;
pub mod rng;

pub use error::{Error, Result};
