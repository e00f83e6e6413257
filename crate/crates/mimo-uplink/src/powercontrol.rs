//! Uplink power-control schemes (none, naive equalization, adaptive
//! SINR-target reduction) and the power-control factor alpha_p.

use serde::{Deserialize, Serialize};

use crate::channel::{build_channel, ArrayGeometry, UserDrop};
use crate::error::{Error, Result};
use crate::math::{db_to_lin, lin_to_db};
use crate::receiver::lmmse_sinr_all;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcScheme {
    None,
    Naive,
    Adaptive,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PowerControlConfig {
    pub scheme: PcScheme,
    /// Adaptive target SINR at the LMMSE output, dB.
    pub sinr_th_db: f64,
    pub n_iter: usize,
    pub convergence_tol_db: f64,
    /// Compute the in-loop SINR against the Bussgang effective noise
    /// (default) rather than thermal noise alone.
    pub use_effective_noise: bool,
}

impl PowerControlConfig {
    pub fn new(scheme: PcScheme) -> Self {
        Self {
            scheme,
            sinr_th_db: 9.7,
            n_iter: 20,
            convergence_tol_db: 0.01,
            use_effective_noise: true,
        }
    }
}

/// Naive scheme: every user scales down to the received power of a user
/// at R_max, so all received amplitudes equal the edge amplitude.
pub fn apply_naive(drop: &mut UserDrop) {
    let r_max = drop.r_max;
    for u in &mut drop.users {
        let s = (u.range_m / r_max).powi(2);
        u.power_scale = s.min(1.0);
    }
}

/// Per-iteration record of the adaptive scheme.
#[derive(Debug, Clone)]
pub struct AdaptiveTrace {
    /// Largest power reduction applied in each iteration (dB).
    pub max_change_db: Vec<f64>,
    pub converged: bool,
}

/// Adaptive scheme: in each iteration every user whose LMMSE output SINR
/// exceeds the target reduces its power (in dB) by the excess. Powers
/// never increase.
pub fn apply_adaptive(
    drop: &mut UserDrop,
    geometry: &ArrayGeometry,
    sigma_n2: f64,
    chain_gamma: f64,
    config: &PowerControlConfig,
) -> Result<AdaptiveTrace> {
    if config.n_iter == 0 {
        return Err(Error::InvalidParameter("n_iter must be >= 1".into()));
    }
    let mut trace = AdaptiveTrace { max_change_db: Vec::new(), converged: false };
    for _ in 0..config.n_iter {
        let noise_var = if config.use_effective_noise && chain_gamma.is_finite() {
            let sigma_y2 = drop.total_received_power() + sigma_n2;
            sigma_n2 + sigma_y2 / chain_gamma
        } else {
            sigma_n2
        };
        let h = build_channel(drop, geometry).h;
        let sinrs = lmmse_sinr_all(&h, noise_var)?;
        let mut max_change = 0.0f64;
        for (u, &sinr) in drop.users.iter_mut().zip(&sinrs) {
            let excess_db = (lin_to_db(sinr) - config.sinr_th_db).max(0.0);
            if excess_db > 0.0 {
                u.power_scale *= db_to_lin(-excess_db);
                max_change = max_change.max(excess_db);
            }
        }
        trace.max_change_db.push(max_change);
        if max_change < config.convergence_tol_db {
            trace.converged = true;
            break;
        }
    }
    Ok(trace)
}

/// Apply the configured scheme to a drop.
pub fn apply(
    config: &PowerControlConfig,
    drop: &mut UserDrop,
    geometry: &ArrayGeometry,
    sigma_n2: f64,
    chain_gamma: f64,
) -> Result<Option<AdaptiveTrace>> {
    match config.scheme {
        PcScheme::None => Ok(None),
        PcScheme::Naive => {
            apply_naive(drop);
            Ok(None)
        }
        PcScheme::Adaptive => {
            Ok(Some(apply_adaptive(drop, geometry, sigma_n2, chain_gamma, config)?))
        }
    }
}

/// Power-control factor alpha_p = A_edge^2 / A_rms^2, with the edge
/// amplitude taken at R_max (full power) and A_rms^2 the post-control
/// mean received power across the drop's users.
pub fn power_control_factor(drop: &UserDrop, geometry: &ArrayGeometry) -> f64 {
    let a_edge = geometry.wavelength / (4.0 * std::f64::consts::PI * drop.r_max);
    a_edge * a_edge / drop.mean_received_power()
}

/// Closed-form alpha_p for uniform-in-area users without power control:
/// (1 - rmin^2/rmax^2) / (2 ln(rmax/rmin)).
pub fn analytic_alpha_no_pc(r_min: f64, r_max: f64) -> Result<f64> {
    if !(0.0 < r_min && r_min < r_max) {
        return Err(Error::InvalidParameter("need 0 < r_min < r_max".into()));
    }
    let ratio2 = (r_min / r_max).powi(2);
    Ok((1.0 - ratio2) / (2.0 * (r_max / r_min).ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::drop_users;
    use approx::assert_relative_eq;

    fn geom(n: usize) -> ArrayGeometry {
        ArrayGeometry::half_wavelength(n, 140.0).unwrap()
    }

    #[test]
    fn naive_equalizes_received_power() {
        let g = geom(64);
        let mut d = drop_users(&g, 8, 5.0, 100.0, g.default_min_separation(), 1).unwrap();
        apply_naive(&mut d);
        let a_edge = g.wavelength / (4.0 * std::f64::consts::PI * 100.0);
        for u in &d.users {
            assert!(u.power_scale <= 1.0);
            assert_relative_eq!(u.amplitude * u.amplitude * u.power_scale, a_edge * a_edge, max_relative = 1e-12);
        }
        // exact equalization implies alpha_p = 1
        assert_relative_eq!(power_control_factor(&d, &g), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn naive_quarter_power_at_half_range() {
        let g = geom(8);
        let mut d = drop_users(&g, 1, 5.0, 100.0, 0.0, 3).unwrap();
        d.users[0].range_m = 50.0;
        apply_naive(&mut d);
        assert_relative_eq!(d.users[0].power_scale, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn alpha_closed_form() {
        let a = analytic_alpha_no_pc(5.0, 100.0).unwrap();
        assert_relative_eq!(a, 0.1665, epsilon = 2e-4);
        assert_relative_eq!(lin_to_db(a), -7.79, epsilon = 0.02);
        // r_min -> r_max limit tends to 1
        assert_relative_eq!(analytic_alpha_no_pc(99.999, 100.0).unwrap(), 1.0, epsilon = 1e-4);
        assert!(analytic_alpha_no_pc(100.0, 5.0).is_err());
    }

    #[test]
    fn alpha_matches_mc_ensemble() {
        let g = geom(16);
        let (rmin, rmax) = (10.0, 100.0);
        let mut acc = 0.0;
        let drops = 50_000;
        for s in 0..drops {
            let d = drop_users(&g, 4, rmin, rmax, 0.0, s as u64).unwrap();
            acc += d.mean_received_power();
        }
        let a_edge = g.wavelength / (4.0 * std::f64::consts::PI * rmax);
        let alpha_mc = a_edge * a_edge / (acc / drops as f64);
        let alpha = analytic_alpha_no_pc(rmin, rmax).unwrap();
        assert!((lin_to_db(alpha_mc) - lin_to_db(alpha)).abs() < 0.05);
    }

    #[test]
    fn adaptive_single_user_one_shot() {
        let g = geom(64);
        let mut d = drop_users(&g, 1, 5.0, 100.0, 0.0, 5).unwrap();
        let h = build_channel(&d, &g).h;
        // pick noise so the initial SINR is 20 dB, 10 dB above target
        let sigma_n2 = h.column(0).norm_squared() / db_to_lin(20.0);
        let mut cfg = PowerControlConfig::new(PcScheme::Adaptive);
        cfg.sinr_th_db = 10.0;
        let trace = apply_adaptive(&mut d, &g, sigma_n2, f64::INFINITY, &cfg).unwrap();
        assert!(trace.converged);
        assert_relative_eq!(trace.max_change_db[0], 10.0, epsilon = 1e-9);
        assert_relative_eq!(d.users[0].power_scale, 0.1, max_relative = 1e-9);
        let h = build_channel(&d, &g).h;
        let sinr = lmmse_sinr_all(&h, sigma_n2).unwrap()[0];
        assert_relative_eq!(lin_to_db(sinr), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn adaptive_monotone_and_respects_target() {
        let g = geom(64);
        let mut d = drop_users(&g, 16, 5.0, 100.0, g.default_min_separation(), 8).unwrap();
        let a_edge = g.wavelength / (4.0 * std::f64::consts::PI * 100.0);
        let sigma_n2 = 64.0 * a_edge * a_edge / db_to_lin(14.0);
        let before: Vec<f64> = d.users.iter().map(|u| u.power_scale).collect();
        let cfg = PowerControlConfig::new(PcScheme::Adaptive);
        let trace = apply_adaptive(&mut d, &g, sigma_n2, f64::INFINITY, &cfg).unwrap();
        assert!(trace.converged);
        for (u, b) in d.users.iter().zip(&before) {
            assert!(u.power_scale <= *b + 1e-15);
            assert!(u.power_scale <= 1.0);
        }
        let h = build_channel(&d, &g).h;
        let sinrs = lmmse_sinr_all(&h, sigma_n2).unwrap();
        for (u, &s) in d.users.iter().zip(&sinrs) {
            let untouched = (u.power_scale - 1.0).abs() < 1e-12;
            assert!(
                lin_to_db(s) <= cfg.sinr_th_db + cfg.convergence_tol_db + 1e-6 || untouched,
                "user exceeds target after convergence: {} dB",
                lin_to_db(s)
            );
        }
    }

    #[test]
    fn adaptive_orthogonal_users_decouple() {
        let g = geom(32);
        let mut d = drop_users(&g, 4, 5.0, 100.0, 0.0, 9).unwrap();
        // exact DFT grid directions, equal ranges
        for (i, u) in d.users.iter_mut().enumerate() {
            u.omega = 2.0 * std::f64::consts::PI * (i as f64 + 1.0) / 32.0;
            u.range_m = 50.0;
            u.amplitude = g.wavelength / (4.0 * std::f64::consts::PI * 50.0);
        }
        let snr_db = 20.0;
        let sigma_n2 = 32.0 * d.users[0].amplitude.powi(2) / db_to_lin(snr_db);
        let mut cfg = PowerControlConfig::new(PcScheme::Adaptive);
        cfg.sinr_th_db = 10.0;
        let trace = apply_adaptive(&mut d, &g, sigma_n2, f64::INFINITY, &cfg).unwrap();
        // no interference: single correction reaches the target
        assert!(trace.converged);
        assert_eq!(trace.max_change_db.len(), 2);
        assert!(trace.max_change_db[1] < cfg.convergence_tol_db);
        for u in &d.users {
            assert_relative_eq!(lin_to_db(u.power_scale), -10.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn adaptive_alpha_tracks_edge_excess() {
        // N=256 half-wavelength array, uniform drops. When the edge SNR
        // exceeds the target every user backs off to the target, so the
        // post-control received power is sigma_n2 * target / N for all
        // users and alpha_p -> SNR_edge - target in dB.
        let g = geom(256);
        let a_edge = g.wavelength / (4.0 * std::f64::consts::PI * 100.0);
        let cfg = PowerControlConfig::new(PcScheme::Adaptive);
        let mean_alpha = |snr_edge_db: f64| {
            let sigma_n2 = 256.0 * a_edge * a_edge / db_to_lin(snr_edge_db);
            let mut acc = 0.0;
            for s in 0..6u64 {
                let mut d =
                    drop_users(&g, 32, 5.0, 100.0, g.default_min_separation(), 100 + s).unwrap();
                apply_adaptive(&mut d, &g, sigma_n2, f64::INFINITY, &cfg).unwrap();
                acc += lin_to_db(power_control_factor(&d, &g));
            }
            acc / 6.0
        };
        let excess = mean_alpha(12.0);
        assert!((excess - (12.0 - cfg.sinr_th_db)).abs() < 1.0, "alpha_p {excess} dB");
        // when the edge SNR sits below the target the far users keep full
        // power, pulling alpha_p between the no-control value and 0 dB
        let partial = mean_alpha(8.0);
        let no_pc = lin_to_db(analytic_alpha_no_pc(5.0, 100.0).unwrap());
        assert!(partial > no_pc && partial < 1.0, "alpha_p {partial} dB");
    }
}
