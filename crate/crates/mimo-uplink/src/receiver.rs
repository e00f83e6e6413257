//! LMMSE reception, per-user output SINR, QPSK modulation/detection and
//! link-level BER Monte Carlo with outage statistics.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{build_channel, drop_users, received_block, ArrayGeometry};
use crate::error::{Error, Result};
use crate::math::quantile;
use crate::nonlinearity::{ChainEvaluator, MemorylessNonlinearity, NonlinearChain};
use crate::powercontrol::{self, PowerControlConfig};
use crate::rng::substream;

/// LMMSE weight matrix W = (H^H H + noise_var I)^{-1} H^H, obtained by a
/// Cholesky solve of the K x K normal equations.
#[derive(Debug, Clone)]
pub struct LmmseReceiver {
    pub w: DMatrix<Complex64>,
    pub noise_var: f64,
}

fn gram_plus_noise(h: &DMatrix<Complex64>, noise_var: f64) -> DMatrix<Complex64> {
    let k = h.ncols();
    let mut b = h.adjoint() * h;
    for i in 0..k {
        b[(i, i)] += Complex64::new(noise_var, 0.0);
    }
    b
}

fn cholesky(b: DMatrix<Complex64>) -> Result<Cholesky<Complex64, Dyn>> {
    Cholesky::new(b).ok_or_else(|| Error::InvalidParameter("normal equations not positive definite".into()))
}

/// Build the LMMSE receiver. `noise_var` must be positive (it regularizes
/// the solve).
pub fn lmmse_build(h: &DMatrix<Complex64>, noise_var: f64) -> Result<LmmseReceiver> {
    if noise_var <= 0.0 {
        return Err(Error::InvalidParameter("noise_var must be positive".into()));
    }
    let chol = cholesky(gram_plus_noise(h, noise_var))?;
    let w = chol.solve(&h.adjoint());
    Ok(LmmseReceiver { w, noise_var })
}

impl LmmseReceiver {
    /// x_hat = W y for a block of received vectors (N x B).
    pub fn estimate(&self, y: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        &self.w * y
    }
}

/// Output SINR of every user, from the K x K normal equations: with
/// G = H^H H and B = G + noise_var I, rho_k = (G_kk - g_k^H B^{-1} g_k) /
/// noise_var and SINR_k = rho_k / (1 - rho_k).
pub fn lmmse_sinr_all(h: &DMatrix<Complex64>, noise_var: f64) -> Result<Vec<f64>> {
    if noise_var <= 0.0 {
        return Err(Error::InvalidParameter("noise_var must be positive".into()));
    }
    let g = h.adjoint() * h;
    let mut b = g.clone();
    for i in 0..b.nrows() {
        b[(i, i)] += Complex64::new(noise_var, 0.0);
    }
    let chol = cholesky(b)?;
    let binv_g = chol.solve(&g);
    let k = g.nrows();
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        let quad: Complex64 = g
            .column(j)
            .iter()
            .zip(binv_g.column(j).iter())
            .map(|(gi, ui)| gi.conj() * ui)
            .sum();
        let rho = ((g[(j, j)].re - quad.re) / noise_var).clamp(0.0, 1.0 - 1e-15);
        out.push(rho / (1.0 - rho));
    }
    Ok(out)
}

/// Output SINR of user k.
pub fn lmmse_sinr(h: &DMatrix<Complex64>, noise_var: f64, k: usize) -> Result<f64> {
    Ok(lmmse_sinr_all(h, noise_var)?[k])
}

/// Brute-force SINR_k = h_k^H (sum_{j!=k} h_j h_j^H + noise_var I)^{-1} h_k
/// via an N x N solve. Test oracle for `lmmse_sinr`.
pub fn lmmse_sinr_direct(h: &DMatrix<Complex64>, noise_var: f64, k: usize) -> Result<f64> {
    let n = h.nrows();
    let mut cov = DMatrix::<Complex64>::zeros(n, n);
    for j in 0..h.ncols() {
        if j == k {
            continue;
        }
        let col = h.column(j);
        for r in 0..n {
            for c in 0..n {
                cov[(r, c)] += col[r] * col[c].conj();
            }
        }
    }
    for i in 0..n {
        cov[(i, i)] += Complex64::new(noise_var, 0.0);
    }
    let chol = cholesky(cov)?;
    let hk: DVector<Complex64> = h.column(k).into_owned();
    let solved = chol.solve(&hk);
    Ok(hk.dotc(&solved).re)
}

/// LMMSE efficiency SINR_k / SNR_k, where SNR_k = ||h_k||^2 / noise_var.
pub fn efficiency(h: &DMatrix<Complex64>, noise_var: f64, k: usize) -> Result<f64> {
    let sinr = lmmse_sinr(h, noise_var, k)?;
    let snr = h.column(k).norm_squared() / noise_var;
    Ok(sinr / snr)
}

/// Gray-mapped QPSK: bit 0 maps to +1 on its rail, so bits (0,0) give
/// (1+j)/sqrt(2). Unit symbol energy.
pub fn qpsk_symbol(bit_i: bool, bit_q: bool) -> Complex64 {
    let re = if bit_i { -1.0 } else { 1.0 };
    let im = if bit_q { -1.0 } else { 1.0 };
    Complex64::new(re, im) / std::f64::consts::SQRT_2
}

/// Per-dimension sign detection.
pub fn qpsk_detect(z: Complex64) -> (bool, bool) {
    (z.re < 0.0, z.im < 0.0)
}

/// Modulate a bit stream (pairs of bits per symbol).
pub fn qpsk_modulate(bits: &[bool]) -> Vec<Complex64> {
    bits.chunks(2)
        .map(|p| qpsk_symbol(p[0], *p.get(1).unwrap_or(&false)))
        .collect()
}

/// Pooled per-user BER statistics across drops.
#[derive(Debug, Clone)]
pub struct OutageReport {
    /// One BER per (drop, user), drop-major order.
    pub per_user_ber: Vec<f64>,
    /// Analytic per-user output SINR (effective noise), same order.
    pub per_user_sinr: Vec<f64>,
    /// Empirical per-user output SINR measured at the receiver output.
    pub per_user_sinr_sim: Vec<f64>,
    /// BER attained by `availability` of the users.
    pub quantile_ber: f64,
    pub availability: f64,
    pub n_symbols: usize,
    pub n_drops: usize,
}

/// Everything that defines one simulated cell.
#[derive(Debug, Clone)]
pub struct LinkScenario {
    pub geometry: ArrayGeometry,
    pub k_users: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub min_separation: f64,
    pub power_control: PowerControlConfig,
    /// SNR of the edge user (linear): N A_edge^2 / sigma_n^2.
    pub snr_edge: f64,
    pub availability: f64,
}

impl LinkScenario {
    pub fn edge_amplitude(&self) -> f64 {
        self.geometry.wavelength / (4.0 * std::f64::consts::PI * self.r_max)
    }

    pub fn sigma_n2(&self) -> f64 {
        let a_edge = self.edge_amplitude();
        self.geometry.n_antennas as f64 * a_edge * a_edge / self.snr_edge
    }
}

struct DropResult {
    ber: Vec<f64>,
    sinr: Vec<f64>,
    sinr_sim: Vec<f64>,
}

const BLOCK: usize = 2048;

fn simulate_drop(
    scenario: &LinkScenario,
    chain: &NonlinearChain,
    chain_gamma: f64,
    n_symbols: usize,
    seed: u64,
    drop_id: u64,
) -> Result<DropResult> {
    let sigma_n2 = scenario.sigma_n2();
    let mut drop = drop_users(
        &scenario.geometry,
        scenario.k_users,
        scenario.r_min,
        scenario.r_max,
        scenario.min_separation,
        seed ^ (drop_id.wrapping_mul(0x9e3779b97f4a7c15) | 1),
    )?;
    powercontrol::apply(
        &scenario.power_control,
        &mut drop,
        &scenario.geometry,
        sigma_n2,
        chain_gamma,
    )?;
    let h = build_channel(&drop, &scenario.geometry).h;
    let sigma_y2 = drop.total_received_power() + sigma_n2;
    let nu_g2 = if chain_gamma.is_infinite() { 0.0 } else { sigma_y2 / chain_gamma };
    let noise_var = sigma_n2 + nu_g2;
    let receiver = lmmse_build(&h, noise_var)?;
    let sinr = lmmse_sinr_all(&h, noise_var)?;
    let eval = chain.evaluator(sigma_y2)?;

    let k = scenario.k_users;
    let mut bit_errors = vec![0u64; k];
    let mut kappa = vec![Complex64::new(0.0, 0.0); k];
    let mut out_pow = vec![0.0f64; k];
    let mut done = 0usize;
    let mut block_id = 0u64;
    while done < n_symbols {
        let b = BLOCK.min(n_symbols - done);
        let mut rng = substream(seed, drop_id, block_id);
        let mut bits = DMatrix::from_element(k, b, (false, false));
        let x = DMatrix::from_fn(k, b, |r, c| {
            let bi = rng.gen::<bool>();
            let bq = rng.gen::<bool>();
            bits[(r, c)] = (bi, bq);
            qpsk_symbol(bi, bq)
        });
        let mut y = received_block(&h, &x, sigma_n2, &mut rng);
        if !chain.is_identity() {
            for v in y.iter_mut() {
                *v = eval.apply(*v);
            }
        }
        let xhat = receiver.estimate(&y);
        for c in 0..b {
            for r in 0..k {
                let (bi, bq) = qpsk_detect(xhat[(r, c)]);
                let (ti, tq) = bits[(r, c)];
                bit_errors[r] += (bi != ti) as u64 + (bq != tq) as u64;
                kappa[r] += xhat[(r, c)] * x[(r, c)].conj();
                out_pow[r] += xhat[(r, c)].norm_sqr();
            }
        }
        done += b;
        block_id += 1;
    }
    let nf = n_symbols as f64;
    let ber: Vec<f64> = bit_errors.iter().map(|&e| e as f64 / (2.0 * nf)).collect();
    let sinr_sim: Vec<f64> = (0..k)
        .map(|r| {
            // x has unit symbol energy, so kappa/n estimates the signal gain
            let g = kappa[r] / nf;
            let sig = g.norm_sqr();
            let resid = (out_pow[r] / nf - sig).max(1e-300);
            sig / resid
        })
        .collect();
    Ok(DropResult { ber, sinr, sinr_sim })
}

/// Link-level BER Monte Carlo: over `n_drops` user placements, run the
/// received signal through the nonlinear chain and an LMMSE receiver
/// built with the Bussgang effective noise, then pool per-user BERs.
///
/// `chain_gamma` is the cascade intrinsic SNR of `chain` (infinity for an
/// ideal chain). Deterministic given the seed, independent of worker
/// count.
pub fn ber_monte_carlo(
    scenario: &LinkScenario,
    chain: &NonlinearChain,
    chain_gamma: f64,
    n_symbols: usize,
    n_drops: usize,
    seed: u64,
) -> Result<OutageReport> {
    if n_drops == 0 {
        return Err(Error::InvalidParameter("need at least one drop".into()));
    }
    let results: Vec<Result<DropResult>> = (0..n_drops)
        .into_par_iter()
        .map(|d| simulate_drop(scenario, chain, chain_gamma, n_symbols, seed, d as u64))
        .collect();
    let mut per_user_ber = Vec::with_capacity(n_drops * scenario.k_users);
    let mut per_user_sinr = Vec::with_capacity(n_drops * scenario.k_users);
    let mut per_user_sinr_sim = Vec::with_capacity(n_drops * scenario.k_users);
    for r in results {
        let r = r?;
        per_user_ber.extend(r.ber);
        per_user_sinr.extend(r.sinr);
        per_user_sinr_sim.extend(r.sinr_sim);
    }
    let quantile_ber = quantile(&per_user_ber, scenario.availability);
    Ok(OutageReport {
        per_user_ber,
        per_user_sinr,
        per_user_sinr_sim,
        quantile_ber,
        availability: scenario.availability,
        n_symbols,
        n_drops,
    })
}

/// SISO AWGN QPSK BER at the given Es/N0 (linear), for calibration runs.
pub fn awgn_qpsk_ber(es_n0: f64, n_symbols: usize, seed: u64) -> f64 {
    let chunks = n_symbols.div_ceil(1 << 16);
    let errs: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = crate::rng::stream(seed, c as u64);
            let len = (1usize << 16).min(n_symbols - c * (1 << 16));
            let s = (0.5 / es_n0).sqrt();
            let mut e = 0u64;
            for _ in 0..len {
                let bi = rng.gen::<bool>();
                let bq = rng.gen::<bool>();
                let x = qpsk_symbol(bi, bq);
                let y = x + Complex64::new(s * crate::rng::real_gaussian(&mut rng), s * crate::rng::real_gaussian(&mut rng));
                let (di, dq) = qpsk_detect(y);
                e += (di != bi) as u64 + (dq != bq) as u64;
            }
            e
        })
        .sum();
    errs as f64 / (2.0 * n_symbols as f64)
}

/// Apply a chain evaluator elementwise to a matrix (diagnostic path).
pub fn apply_chain_block(eval: &ChainEvaluator, y: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    y.map(|v| eval.apply(v))
}
