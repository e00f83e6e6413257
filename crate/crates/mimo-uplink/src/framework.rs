//! Analytical design framework: matched-filter bounds with self-noise,
//! ideal-system LMMSE efficiency, the SINR lower bound, contour solving
//! for (gamma_g, SNR_edge) and the hardware-spec grid search.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bussgang::bussgang_mc;
use crate::channel::{build_channel, drop_users, UserDrop};
use crate::error::{Error, Result};
use crate::math::{db_to_lin, lin_to_db, quantile};
use crate::nonlinearity::NonlinearChain;
use crate::powercontrol::{self};
use crate::receiver::{lmmse_sinr_all, LinkScenario};

/// Matched filter bound with self-noise only: gamma_g * A_k^2 / (beta A_rms^2).
pub fn mfb_selfnoise(gamma_g: f64, beta: f64, a_k2: f64, a_rms2: f64) -> f64 {
    gamma_g * a_k2 / (beta * a_rms2)
}

/// Matched filter bound combining self-noise and thermal noise:
/// 1 / (1/SNR_k(g) + ((1+gamma)/gamma) / SNR_k).
pub fn mfb_combined(snr_k_selfnoise: f64, snr_k_thermal: f64, gamma_g: f64) -> f64 {
    let gamma_factor = if gamma_g.is_infinite() { 1.0 } else { (1.0 + gamma_g) / gamma_g };
    let inv_self = if snr_k_selfnoise.is_infinite() { 0.0 } else { 1.0 / snr_k_selfnoise };
    1.0 / (inv_self + gamma_factor / snr_k_thermal)
}

/// SINR lower bound: SNR(g, sigma_n^2) * eta_ideal, linear units.
pub fn lmmse_lower_bound(snr_g_sigma: f64, eta_ideal: f64) -> f64 {
    snr_g_sigma * eta_ideal
}

/// How the ideal-system efficiency is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaMethod {
    /// Bisect SNR_edge until the (1 - availability) quantile of per-user
    /// ideal SINR meets the target, then return target / SNR_edge.
    SinrQuantile,
    /// Fixed point of the (1 - availability) quantile of per-user LMMSE
    /// efficiency, evaluated at SNR_edge = target / eta.
    EfficiencyQuantile,
}

#[derive(Debug, Clone, Copy)]
pub struct EtaIdeal {
    /// Efficiency as a linear ratio <= 1.
    pub eta: f64,
    /// The SNR_edge (linear) at which the availability criterion meets
    /// the target in the ideal system.
    pub snr_edge: f64,
}

fn pooled_ideal_sinr(
    scenario: &LinkScenario,
    drops: &[UserDrop],
    snr_edge: f64,
) -> Result<Vec<f64>> {
    let a_edge = scenario.edge_amplitude();
    let sigma_n2 = scenario.geometry.n_antennas as f64 * a_edge * a_edge / snr_edge;
    let sinrs: Vec<Result<Vec<f64>>> = drops
        .par_iter()
        .map(|d| {
            let mut d = d.clone();
            powercontrol::apply(
                &scenario.power_control,
                &mut d,
                &scenario.geometry,
                sigma_n2,
                f64::INFINITY,
            )?;
            let h = build_channel(&d, &scenario.geometry).h;
            lmmse_sinr_all(&h, sigma_n2)
        })
        .collect();
    let mut pooled = Vec::new();
    for s in sinrs {
        pooled.extend(s?);
    }
    Ok(pooled)
}

/// Estimate the ideal-system LMMSE efficiency for the edge criterion by
/// Monte Carlo over user drops (no nonlinearities, gamma_g = infinity).
pub fn estimate_eta_ideal(
    scenario: &LinkScenario,
    sinr_target: f64,
    n_drops: usize,
    seed: u64,
    method: EtaMethod,
) -> Result<EtaIdeal> {
    let drops: Vec<UserDrop> = (0..n_drops)
        .map(|d| {
            drop_users(
                &scenario.geometry,
                scenario.k_users,
                scenario.r_min,
                scenario.r_max,
                scenario.min_separation,
                seed ^ ((d as u64).wrapping_mul(0x2545f4914f6cdd1d) | 1),
            )
        })
        .collect::<Result<_>>()?;
    let level = 1.0 - scenario.availability;
    match method {
        EtaMethod::SinrQuantile => {
            let target_db = lin_to_db(sinr_target);
            let mut lo = target_db - 1.0;
            let mut hi = target_db + 40.0;
            let crit = |snr_edge_db: f64| -> Result<f64> {
                let pooled = pooled_ideal_sinr(scenario, &drops, db_to_lin(snr_edge_db))?;
                Ok(quantile(&pooled, level))
            };
            if crit(hi)? < sinr_target {
                return Err(Error::SearchFailed(format!(
                    "availability target unreachable below SNR_edge = {hi:.1} dB"
                )));
            }
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if crit(mid)? >= sinr_target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let snr_edge = db_to_lin(0.5 * (lo + hi));
            Ok(EtaIdeal { eta: (sinr_target / snr_edge).min(1.0), snr_edge })
        }
        EtaMethod::EfficiencyQuantile => {
            let mut eta = 1.0f64;
            for _ in 0..12 {
                let snr_edge = sinr_target / eta;
                let a_edge = scenario.edge_amplitude();
                let sigma_n2 = scenario.geometry.n_antennas as f64 * a_edge * a_edge / snr_edge;
                let effs: Vec<Result<Vec<f64>>> = drops
                    .par_iter()
                    .map(|d| {
                        let mut d = d.clone();
                        powercontrol::apply(
                            &scenario.power_control,
                            &mut d,
                            &scenario.geometry,
                            sigma_n2,
                            f64::INFINITY,
                        )?;
                        let h = build_channel(&d, &scenario.geometry).h;
                        let sinrs = lmmse_sinr_all(&h, sigma_n2)?;
                        Ok(sinrs
                            .iter()
                            .enumerate()
                            .map(|(k, s)| s / (h.column(k).norm_squared() / sigma_n2))
                            .collect())
                    })
                    .collect();
                let mut pooled = Vec::new();
                for e in effs {
                    pooled.extend(e?);
                }
                let next = quantile(&pooled, level).min(1.0);
                if (lin_to_db(next) - lin_to_db(eta)).abs() < 0.01 {
                    eta = next;
                    break;
                }
                eta = next;
            }
            Ok(EtaIdeal { eta, snr_edge: sinr_target / eta })
        }
    }
}

/// One point of the (gamma_g, SNR_edge) trade-off contour.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ContourPoint {
    pub gamma_g: f64,
    /// Required edge SNR (linear); None when this gamma_g is infeasible.
    pub snr_edge: Option<f64>,
}

/// Solve the design contour: for each gamma on the grid, the SNR_edge at
/// which the LMMSE lower bound meets the SINR target,
/// SNR_edge = ((1+gamma)/gamma) / (eta/target - beta/(gamma alpha_p)).
pub fn solve_contour(
    sinr_target: f64,
    eta_ideal: f64,
    beta: f64,
    alpha_p: f64,
    gamma_grid: &[f64],
) -> Result<Vec<ContourPoint>> {
    let gamma_min = beta * sinr_target / (eta_ideal * alpha_p);
    let pts: Vec<ContourPoint> = gamma_grid
        .iter()
        .map(|&g| {
            let denom = eta_ideal / sinr_target - beta / (g * alpha_p);
            let snr_edge = (denom > 0.0).then(|| (1.0 + g) / g / denom);
            ContourPoint { gamma_g: g, snr_edge }
        })
        .collect();
    if pts.iter().all(|p| p.snr_edge.is_none()) {
        return Err(Error::SearchFailed(format!(
            "no feasible gamma_g on grid; need gamma_g > {:.2} dB",
            lin_to_db(gamma_min)
        )));
    }
    Ok(pts)
}

/// A hardware prescription and the intrinsic SNR it achieves.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DesignPoint {
    pub bits: u32,
    pub p1db_pb_db: f64,
    pub p1db_bb_db: f64,
    pub gamma_g_db: f64,
    pub snr_edge_required_db: Option<f64>,
}

/// Cascade intrinsic SNR of a standard chain at the normalized operating
/// point (unit input power), by Monte Carlo.
pub fn cascade_gamma_db(chain: &NonlinearChain, n_samples: usize, seed: u64) -> Result<f64> {
    let eval = chain.evaluator(1.0)?;
    Ok(bussgang_mc(&eval, 1.0, n_samples, seed)?.gamma_db())
}

/// Grid search over (bits, passband P1dB, baseband P1dB) for chains whose
/// cascade gamma_g meets the target. Exploits monotonicity of gamma in
/// each compression point: for every (bits, bb) the minimal feasible pb
/// is found by bisection over the grid. Returns the Pareto-minimal set
/// (fewer bits preferred first, then lower compression points).
pub fn search_hw_spec(
    gamma_target_db: f64,
    bits_grid: &[u32],
    pb_grid_db: &[f64],
    bb_grid_db: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<DesignPoint>> {
    if bits_grid.is_empty() || pb_grid_db.is_empty() || bb_grid_db.is_empty() {
        return Err(Error::InvalidParameter("empty search grid".into()));
    }
    let mut cache: HashMap<(u32, u64, u64), f64> = HashMap::new();
    let eval = |bits: u32, pb: f64, bb: f64, cache: &mut HashMap<(u32, u64, u64), f64>| -> Result<f64> {
        let key = (bits, pb.to_bits(), bb.to_bits());
        if let Some(&g) = cache.get(&key) {
            return Ok(g);
        }
        let chain = NonlinearChain::standard(pb, bb, bits)?;
        let g = cascade_gamma_db(&chain, n_samples, seed)?;
        cache.insert(key, g);
        Ok(g)
    };
    let mut candidates: Vec<DesignPoint> = Vec::new();
    let mut best_gamma = f64::NEG_INFINITY;
    for &bits in bits_grid {
        for &bb in bb_grid_db {
            // gamma is non-decreasing in pb on the grid
            let top = eval(bits, *pb_grid_db.last().unwrap(), bb, &mut cache)?;
            best_gamma = best_gamma.max(top);
            if top < gamma_target_db {
                continue;
            }
            let mut lo = 0usize;
            let mut hi = pb_grid_db.len() - 1;
            if eval(bits, pb_grid_db[0], bb, &mut cache)? >= gamma_target_db {
                hi = 0;
            }
            while lo < hi {
                let mid = (lo + hi) / 2;
                if eval(bits, pb_grid_db[mid], bb, &mut cache)? >= gamma_target_db {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            let pb = pb_grid_db[hi];
            candidates.push(DesignPoint {
                bits,
                p1db_pb_db: pb,
                p1db_bb_db: bb,
                gamma_g_db: eval(bits, pb, bb, &mut cache)?,
                snr_edge_required_db: None,
            });
        }
    }
    if candidates.is_empty() {
        return Err(Error::SearchFailed(format!(
            "gamma target {gamma_target_db:.1} dB unattainable on grid; best achieved {best_gamma:.1} dB"
        )));
    }
    // Pareto prune: drop any point beaten or matched on all three costs
    let mut pareto: Vec<DesignPoint> = Vec::new();
    for c in &candidates {
        let dominated = candidates.iter().any(|o| {
            (o.bits <= c.bits && o.p1db_pb_db <= c.p1db_pb_db && o.p1db_bb_db <= c.p1db_bb_db)
                && (o.bits < c.bits || o.p1db_pb_db < c.p1db_pb_db || o.p1db_bb_db < c.p1db_bb_db)
        });
        if !dominated {
            pareto.push(*c);
        }
    }
    pareto.sort_by(|a, b| {
        (a.bits, a.p1db_pb_db + a.p1db_bb_db)
            .partial_cmp(&(b.bits, b.p1db_pb_db + b.p1db_bb_db))
            .unwrap()
    });
    Ok(pareto)
}

/// Convert a P1dB referred to the input power (dB) to an absolute level
/// given the average input power in dBm.
pub fn absolute_p1db(normalized_db: f64, input_power_dbm: f64) -> f64 {
    normalized_db + input_power_dbm
}
