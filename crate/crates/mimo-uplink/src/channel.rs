//! LoS multiuser geometry and channel construction for a 1-D uniform
//! linear array, with the spatial-separation constraint and Gaussianity
//! diagnostics for the per-antenna received signal.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::normal_cdf;
use crate::rng::stream;

/// Speed of light in m/s.
/// Speed of light in m/s.
pub const C: f64 = 299_792_458.0;

/// 1-D uniform linear array.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_antennas: usize,
    /// Inter-element spacing in wavelengths (half-wavelength by default).
    pub spacing_wavelengths: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(n_antennas: usize, spacing_wavelengths: f64, wavelength: f64) -> Result<Self> {
        if n_antennas == 0 || spacing_wavelengths <= 0.0 || wavelength <= 0.0 {
            return Err(Error::InvalidParameter("invalid array geometry".into()));
        }
        Ok(Self { n_antennas, spacing_wavelengths, wavelength })
    }

    /// Half-wavelength array at the given carrier frequency (GHz).
    pub fn half_wavelength(n_antennas: usize, carrier_ghz: f64) -> Result<Self> {
        Self::new(n_antennas, 0.5, C / (carrier_ghz * 1e9))
    }

    /// Spatial frequency for a direction of arrival (radians).
    pub fn spatial_frequency(&self, theta: f64) -> f64 {
        2.0 * std::f64::consts::PI * self.spacing_wavelengths * theta.sin()
    }

    /// Half the 3 dB beamwidth in spatial frequency: 2.783 / N.
    pub fn default_min_separation(&self) -> f64 {
        2.783 / self.n_antennas as f64
    }
}

/// One mobile of a drop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct User {
    /// Radial distance in meters.
    pub range_m: f64,
    /// Direction of arrival in radians.
    pub theta: f64,
    /// Spatial frequency.
    pub omega: f64,
    /// Carrier phase in radians.
    pub phase: f64,
    /// Friis received amplitude lambda / (4 pi R).
    pub amplitude: f64,
    /// Linear transmit power scale from power control (1 = full power).
    pub power_scale: f64,
}

/// A placement of K users in the annular sector cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserDrop {
    pub users: Vec<User>,
    pub r_min: f64,
    pub r_max: f64,
    pub min_separation: f64,
}

impl UserDrop {
    /// Mean received power A_k^2 * p_k across users.
    pub fn mean_received_power(&self) -> f64 {
        self.users.iter().map(|u| u.amplitude * u.amplitude * u.power_scale).sum::<f64>()
            / self.users.len() as f64
    }

    /// Sum of received powers (the K A_rms^2 term of the per-antenna power).
    pub fn total_received_power(&self) -> f64 {
        self.users.iter().map(|u| u.amplitude * u.amplitude * u.power_scale).sum()
    }
}

const FIELD_OF_VIEW: f64 = std::f64::consts::FRAC_PI_3;
const MAX_REJECTIONS: usize = 100_000;

/// Drop K users uniformly in area over the annular sector, with rejection
/// resampling of any user violating the pairwise spatial-frequency
/// separation. Deterministic given the seed.
pub fn drop_users(
    geometry: &ArrayGeometry,
    k: usize,
    r_min: f64,
    r_max: f64,
    min_separation: f64,
    seed: u64,
) -> Result<UserDrop> {
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one user".into()));
    }
    if !(0.0 < r_min && r_min < r_max) {
        return Err(Error::InvalidParameter("need 0 < r_min < r_max".into()));
    }
    let omega_range = 2.0 * geometry.spatial_frequency(FIELD_OF_VIEW);
    if k as f64 * min_separation >= omega_range {
        return Err(Error::PlacementInfeasible(format!(
            "{k} users with separation {min_separation:.4} cannot fit in an \
             omega range of {omega_range:.4}"
        )));
    }
    let mut rng = stream(seed, 0);
    let mut users: Vec<User> = Vec::with_capacity(k);
    let mut rejections = 0usize;
    while users.len() < k {
        let r2 = rng.gen_range(r_min * r_min..r_max * r_max);
        let range_m = r2.sqrt();
        let theta = rng.gen_range(-FIELD_OF_VIEW..FIELD_OF_VIEW);
        let omega = geometry.spatial_frequency(theta);
        if users.iter().any(|u| (u.omega - omega).abs() < min_separation) {
            rejections += 1;
            if rejections > MAX_REJECTIONS {
                return Err(Error::PlacementInfeasible(format!(
                    "separation constraint {min_separation:.4} still violated \
                     after {MAX_REJECTIONS} resamples"
                )));
            }
            continue;
        }
        let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        users.push(User {
            range_m,
            theta,
            omega,
            phase,
            amplitude: geometry.wavelength / (4.0 * std::f64::consts::PI * range_m),
            power_scale: 1.0,
        });
    }
    Ok(UserDrop { users, r_min, r_max, min_separation })
}

/// N x K LoS channel matrix built from a drop.
#[derive(Debug, Clone)]
pub struct ChannelMatrix {
    pub h: DMatrix<Complex64>,
}

/// Column k is A_k sqrt(p_k) e^{j phi_k} [1, e^{j Omega_k}, ...]^T.
pub fn build_channel(drop: &UserDrop, geometry: &ArrayGeometry) -> ChannelMatrix {
    let n = geometry.n_antennas;
    let k = drop.users.len();
    let mut h = DMatrix::zeros(n, k);
    for (col, u) in drop.users.iter().enumerate() {
        let scale = u.amplitude * u.power_scale.sqrt();
        for row in 0..n {
            let ph = u.phase + row as f64 * u.omega;
            h[(row, col)] = Complex64::new(scale * ph.cos(), scale * ph.sin());
        }
    }
    ChannelMatrix { h }
}

/// Normalized correlation |sin(N dOmega/2) / (N sin(dOmega/2))| between two
/// steering vectors separated by `delta_omega`.
pub fn spatial_crosscorr(delta_omega: f64, n: usize) -> f64 {
    let nf = n as f64;
    let half = delta_omega / 2.0;
    if half.sin().abs() < 1e-15 {
        return 1.0;
    }
    ((nf * half).sin() / (nf * half.sin())).abs()
}

/// One received block y = H x + n with i.i.d. CN(0, sigma_n2) noise.
/// `x` is K x B; the result is N x B.
pub fn received_block<R: Rng>(
    h: &DMatrix<Complex64>,
    x: &DMatrix<Complex64>,
    sigma_n2: f64,
    rng: &mut R,
) -> DMatrix<Complex64> {
    let mut y = h * x;
    if sigma_n2 > 0.0 {
        let s = (sigma_n2 / 2.0).sqrt();
        for v in y.iter_mut() {
            *v += Complex64::new(s * crate::rng::real_gaussian(rng), s * crate::rng::real_gaussian(rng));
        }
    }
    y
}

/// Histogram KL divergence (nats) of standardized samples against the
/// standard normal, with add-one smoothing. Bins span +-5 sigma with
/// open-ended edge bins.
pub fn gaussianity_kl(samples: &[f64], bins: usize) -> Result<f64> {
    if samples.len() < 10_000 {
        return Err(Error::InvalidParameter("gaussianity_kl needs >= 1e4 samples".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let lo = -5.0;
    let width = 10.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let z = (x - mean) / std;
        let idx = (((z - lo) / width).floor() as i64).clamp(0, bins as i64 - 1) as usize;
        counts[idx] += 1;
    }
    let mut kl = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        let p = (c as f64 + 1.0) / (n + bins as f64);
        let a = lo + i as f64 * width;
        let b = a + width;
        let q = if i == 0 {
            normal_cdf(b)
        } else if i == bins - 1 {
            1.0 - normal_cdf(a)
        } else {
            normal_cdf(b) - normal_cdf(a)
        };
        kl += p * (p / q).ln();
    }
    Ok(kl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn geom(n: usize) -> ArrayGeometry {
        ArrayGeometry::half_wavelength(n, 140.0).unwrap()
    }

    #[test]
    fn single_user_drop() {
        let g = geom(16);
        let d = drop_users(&g, 1, 5.0, 100.0, g.default_min_separation(), 1).unwrap();
        assert_eq!(d.users.len(), 1);
        let u = &d.users[0];
        assert!(u.range_m >= 5.0 && u.range_m <= 100.0);
        assert!(u.theta.abs() <= std::f64::consts::FRAC_PI_3);
        assert_relative_eq!(u.omega, g.spatial_frequency(u.theta), epsilon = 1e-15);
        assert_relative_eq!(
            u.amplitude,
            g.wavelength / (4.0 * std::f64::consts::PI * u.range_m),
            epsilon = 1e-15
        );
    }

    #[test]
    fn separation_enforced_at_density() {
        let g = geom(256);
        let sep = g.default_min_separation();
        let d = drop_users(&g, 128, 5.0, 100.0, sep, 42).unwrap();
        for i in 0..128 {
            for j in 0..i {
                assert!((d.users[i].omega - d.users[j].omega).abs() >= sep);
            }
        }
    }

    #[test]
    fn drop_determinism() {
        let g = geom(64);
        let a = drop_users(&g, 16, 5.0, 100.0, g.default_min_separation(), 9).unwrap();
        let b = drop_users(&g, 16, 5.0, 100.0, g.default_min_separation(), 9).unwrap();
        for (x, y) in a.users.iter().zip(&b.users) {
            assert_eq!(x.range_m.to_bits(), y.range_m.to_bits());
            assert_eq!(x.omega.to_bits(), y.omega.to_bits());
        }
    }

    #[test]
    fn packing_infeasible_rejected() {
        let g = geom(8);
        assert!(drop_users(&g, 200, 5.0, 100.0, 0.1, 1).is_err());
    }

    #[test]
    fn mean_square_amplitude_matches_closed_form() {
        // E[A^2] = (lambda/4pi)^2 * 2 ln(rmax/rmin) / (rmax^2 - rmin^2)
        let g = geom(16);
        let (rmin, rmax) = (5.0, 100.0);
        let mut acc = 0.0;
        let drops = 20_000;
        for s in 0..drops {
            let d = drop_users(&g, 4, rmin, rmax, 0.0, s as u64).unwrap();
            acc += d.mean_received_power();
        }
        let emp = acc / drops as f64;
        let lam = g.wavelength / (4.0 * std::f64::consts::PI);
        let analytic = lam * lam * 2.0 * (rmax / rmin as f64).ln() / (rmax * rmax - rmin * rmin);
        assert!((emp / analytic - 1.0).abs() < 0.01, "emp {emp} analytic {analytic}");
    }

    #[test]
    fn radial_law_uniform_in_area() {
        // KS statistic of R^2 against uniform on [rmin^2, rmax^2]
        let g = geom(16);
        let (rmin, rmax) = (5.0, 100.0);
        let mut r2: Vec<f64> = Vec::new();
        for s in 0..2500 {
            let d = drop_users(&g, 4, rmin, rmax, 0.0, s as u64).unwrap();
            r2.extend(d.users.iter().map(|u| u.range_m * u.range_m));
        }
        r2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = r2.len() as f64;
        let span = rmax * rmax - rmin * rmin;
        let ks = r2
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cdf = (v - rmin * rmin) / span;
                let e1 = ((i + 1) as f64 / n - cdf).abs();
                let e0 = (i as f64 / n - cdf).abs();
                e1.max(e0)
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / n.sqrt(), "ks {ks}");
    }

    #[test]
    fn channel_construction() {
        let g = geom(64);
        let mut d = drop_users(&g, 4, 5.0, 100.0, g.default_min_separation(), 3).unwrap();
        d.users[1].power_scale = 0.25;
        let h = build_channel(&d, &g).h;
        for (k, u) in d.users.iter().enumerate() {
            let norm2: f64 = h.column(k).iter().map(|z| z.norm_sqr()).sum();
            let expected = 64.0 * u.amplitude * u.amplitude * u.power_scale;
            assert_relative_eq!(norm2, expected, max_relative = 1e-12);
            // steering entries are unimodular after removing the common factor
            let scale = u.amplitude * u.power_scale.sqrt();
            for z in h.column(k).iter() {
                assert_relative_eq!(z.norm() / scale, 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn broadside_and_n1() {
        let g = geom(1);
        let d = drop_users(&g, 1, 5.0, 100.0, 0.0, 4).unwrap();
        let h = build_channel(&d, &g).h;
        let u = &d.users[0];
        assert_relative_eq!(h[(0, 0)].norm(), u.amplitude, epsilon = 1e-14);
        assert_relative_eq!(h[(0, 0)].arg(), u.phase - if u.phase > std::f64::consts::PI { 2.0 * std::f64::consts::PI } else { 0.0 }, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_dft_directions() {
        let g = geom(32);
        let mut d = drop_users(&g, 2, 5.0, 100.0, 0.0, 6).unwrap();
        // force equal amplitude and an exact 2 pi / N spacing
        d.users[0].omega = 0.3;
        d.users[1].omega = 0.3 + 2.0 * std::f64::consts::PI / 32.0;
        d.users[1].range_m = d.users[0].range_m;
        d.users[1].amplitude = d.users[0].amplitude;
        let h = build_channel(&d, &g).h;
        let dot: Complex64 = h
            .column(0)
            .iter()
            .zip(h.column(1).iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        assert!(dot.norm() < 1e-12 * h.column(0).norm() * h.column(1).norm());
    }

    #[test]
    fn crosscorr_reference_points() {
        assert_relative_eq!(spatial_crosscorr(0.0, 64), 1.0, epsilon = 1e-15);
        assert!(spatial_crosscorr(2.0 * std::f64::consts::PI / 64.0, 64) < 1e-12);
        let half_power = spatial_crosscorr(2.783 / 64.0, 64);
        assert_relative_eq!(half_power, std::f64::consts::FRAC_1_SQRT_2, epsilon = 2e-3);
    }

    #[test]
    fn crosscorr_matches_channel_inner_product() {
        let g = geom(48);
        for &delta in &[0.01, 0.05, 0.2, 0.7] {
            let mut d = drop_users(&g, 2, 5.0, 100.0, 0.0, 8).unwrap();
            d.users[1].omega = d.users[0].omega + delta;
            d.users[1].amplitude = d.users[0].amplitude;
            d.users[1].power_scale = 1.0;
            d.users[0].power_scale = 1.0;
            let h = build_channel(&d, &g).h;
            let dot: Complex64 = h
                .column(0)
                .iter()
                .zip(h.column(1).iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            let corr = dot.norm() / (h.column(0).norm() * h.column(1).norm());
            assert_relative_eq!(corr, spatial_crosscorr(delta, 48), epsilon = 1e-10);
        }
    }

    #[test]
    fn received_power_matches_analytic() {
        let g = geom(32);
        let d = drop_users(&g, 8, 5.0, 100.0, g.default_min_separation(), 10).unwrap();
        let h = build_channel(&d, &g).h;
        let sigma_n2 = 1e-12;
        let mut rng = crate::rng::stream(99, 0);
        let blocks = 200;
        let b = 64;
        let mut acc = 0.0;
        let mut count = 0usize;
        for _ in 0..blocks {
            let x = DMatrix::from_fn(8, b, |_, _| {
                let re = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let im = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                Complex64::new(re, im) / std::f64::consts::SQRT_2
            });
            let y = received_block(&h, &x, sigma_n2, &mut rng);
            acc += y.iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += y.len();
        }
        let emp = acc / count as f64;
        let analytic = d.total_received_power() + sigma_n2;
        assert!((emp / analytic - 1.0).abs() < 0.02, "emp {emp} analytic {analytic}");
    }

    #[test]
    fn zero_inputs() {
        let g = geom(8);
        let d = drop_users(&g, 2, 5.0, 100.0, 0.0, 2).unwrap();
        let h = build_channel(&d, &g).h;
        let x = DMatrix::zeros(2, 4);
        let mut rng = crate::rng::stream(1, 0);
        let y = received_block(&h, &x, 0.0, &mut rng);
        assert!(y.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn kl_self_test_and_outliers() {
        let mut rng = crate::rng::stream(5, 0);
        let normal: Vec<f64> = (0..1_000_000).map(|_| crate::rng::real_gaussian(&mut rng)).collect();
        assert!(gaussianity_kl(&normal, 100).unwrap() < 0.005);
        // two-point marginal is far from Gaussian
        let twopoint: Vec<f64> = (0..100_000)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        assert!(gaussianity_kl(&twopoint, 100).unwrap() > 0.1);
    }
}
