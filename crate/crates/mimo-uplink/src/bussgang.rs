//! Bussgang linearization: linear gain, error variance and intrinsic SNR
//! of a memoryless nonlinearity with Gaussian input, computed analytically
//! by quadrature for radially symmetric stages or by Monte Carlo otherwise.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::integrate_split;
use crate::nonlinearity::{MemorylessNonlinearity, RadialNonlinearity};
use crate::rng::{complex_gaussian, stream, CHUNK};

/// Linearization parameters g(y) = a*y + e of a nonlinearity.
///
/// `gamma_g` carries an infinity sentinel when the error variance is
/// numerically zero; `gamma_infinite` flags it. Downstream formulas use
/// the sigma form and never divide by gamma blindly.
#[derive(Debug, Clone, Copy)]
pub struct BussgangParams {
    pub a: Complex64,
    pub sigma_g2: f64,
    pub gamma_g: f64,
    pub gamma_infinite: bool,
    /// Estimation sample count; 0 for the analytic path.
    pub n_samples: usize,
    pub input_power: f64,
    /// Monte Carlo standard error of |a| (0 for analytic).
    pub a_stderr: f64,
    /// Monte Carlo standard error of sigma_g2 (0 for analytic).
    pub sigma_stderr: f64,
}

impl BussgangParams {
    pub fn gamma_db(&self) -> f64 {
        if self.gamma_infinite {
            f64::INFINITY
        } else {
            10.0 * self.gamma_g.log10()
        }
    }

    fn from_moments(
        a: Complex64,
        sigma_g2: f64,
        n_samples: usize,
        input_power: f64,
        a_stderr: f64,
        sigma_stderr: f64,
    ) -> Self {
        // treat variance below numerical noise as an ideal (linear) stage
        let floor = 1e-14 * a.norm_sqr().max(1e-300) * input_power;
        let gamma_infinite = sigma_g2 <= floor;
        let gamma_g = if gamma_infinite {
            f64::INFINITY
        } else {
            a.norm_sqr() * input_power / sigma_g2
        };
        Self {
            a,
            sigma_g2: sigma_g2.max(0.0),
            gamma_g,
            gamma_infinite,
            n_samples,
            input_power,
            a_stderr,
            sigma_stderr,
        }
    }
}

#[derive(Clone, Copy)]
struct Moments {
    sum_w: Complex64, // g(y) y*
    sum_v: f64,       // |y|^2
    sum_u: f64,       // |g(y)|^2
    n: usize,
}

impl Moments {
    fn zero() -> Self {
        Moments {
            sum_w: Complex64::new(0.0, 0.0),
            sum_v: 0.0,
            sum_u: 0.0,
            n: 0,
        }
    }
}

fn collect_moments<G: MemorylessNonlinearity + ?Sized>(
    g: &G,
    input_power: f64,
    n_samples: usize,
    seed: u64,
) -> (Moments, Vec<Moments>) {
    let n_chunks = n_samples.div_ceil(CHUNK);
    let partials: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let len = CHUNK.min(n_samples - c * CHUNK);
            let mut m = Moments::zero();
            m.n = len;
            for _ in 0..len {
                let y = complex_gaussian(&mut rng, input_power);
                let z = g.apply(y);
                m.sum_w += z * y.conj();
                m.sum_v += y.norm_sqr();
                m.sum_u += z.norm_sqr();
            }
            m
        })
        .collect();
    // sequential reduction in chunk order keeps the result bit-identical
    // for any worker count
    let mut total = Moments::zero();
    for m in &partials {
        total.sum_w += m.sum_w;
        total.sum_v += m.sum_v;
        total.sum_u += m.sum_u;
        total.n += m.n;
    }
    (total, partials)
}

/// Monte Carlo Bussgang estimation over circularly symmetric complex
/// Gaussian input of the given power. Deterministic for a given seed,
/// independent of worker count.
pub fn bussgang_mc<G: MemorylessNonlinearity + ?Sized>(
    g: &G,
    input_power: f64,
    n_samples: usize,
    seed: u64,
) -> Result<BussgangParams> {
    if n_samples < 10_000 {
        return Err(Error::InvalidParameter("bussgang_mc needs >= 1e4 samples".into()));
    }
    let (m, chunks) = collect_moments(g, input_power, n_samples, seed);
    let nf = m.n as f64;
    let a = m.sum_w / m.sum_v;
    let mean_u = m.sum_u / nf;
    let mean_v = m.sum_v / nf;
    let sigma_g2 = mean_u - a.norm_sqr() * mean_v;
    // standard errors from the spread of per-chunk estimates; this keeps
    // the covariance between the moment estimators (a plain per-sample
    // variance of |g|^2 would be zero for e.g. the polar limiter even
    // though sigma_g2 still fluctuates through a and E|y|^2). The chunk
    // sigma_g2 estimate linearizes around the global a; its chunk average
    // equals the global sigma_g2 because a = mean_w / mean_v.
    let k = chunks.len() as f64;
    let (mut var_a, mut var_s) = (0.0, 0.0);
    if chunks.len() > 1 {
        for c in &chunks {
            let cn = c.n as f64;
            let a_c = (c.sum_w / cn).norm() / (c.sum_v / cn);
            let s_c =
                c.sum_u / cn - 2.0 * (a.conj() * c.sum_w / cn).re + a.norm_sqr() * c.sum_v / cn;
            var_a += (a_c - a.norm()).powi(2);
            var_s += (s_c - sigma_g2).powi(2);
        }
        var_a /= k - 1.0;
        var_s /= k - 1.0;
    }
    let a_stderr = (var_a / k).sqrt();
    let sigma_stderr = (var_s / k).sqrt();
    Ok(BussgangParams::from_moments(a, sigma_g2, m.n, input_power, a_stderr, sigma_stderr))
}

/// Orthogonality diagnostic: |mean((g(y) - a y) y*)| and the standard
/// error of that mean, with `a` supplied independently of these samples.
pub fn orthogonality_residual<G: MemorylessNonlinearity + ?Sized>(
    g: &G,
    a: Complex64,
    input_power: f64,
    n_samples: usize,
    seed: u64,
) -> (f64, f64) {
    let n_chunks = n_samples.div_ceil(CHUNK);
    let partials: Vec<(Complex64, f64, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let len = CHUNK.min(n_samples - c * CHUNK);
            let mut s = Complex64::new(0.0, 0.0);
            let mut s2 = 0.0;
            for _ in 0..len {
                let y = complex_gaussian(&mut rng, input_power);
                let t = (g.apply(y) - a * y) * y.conj();
                s += t;
                s2 += t.norm_sqr();
            }
            (s, s2, len)
        })
        .collect();
    let (mut s, mut s2, mut n) = (Complex64::new(0.0, 0.0), 0.0, 0usize);
    for (ps, ps2, pn) in partials {
        s += ps;
        s2 += ps2;
        n += pn;
    }
    let nf = n as f64;
    let mean = s / nf;
    let var = (s2 / nf - mean.norm_sqr()).max(0.0);
    (mean.norm(), (var / nf).sqrt())
}

/// Analytic Bussgang parameters for a radially symmetric nonlinearity by
/// 1-D quadrature over the Rayleigh envelope density.
pub fn bussgang_quadrature<G: RadialNonlinearity + ?Sized>(
    g: &G,
    input_power: f64,
) -> Result<BussgangParams> {
    if input_power <= 0.0 {
        return Err(Error::InvalidParameter("input power must be positive".into()));
    }
    let p = input_power;
    let pdf = move |r: f64| 2.0 * r / p * (-r * r / p).exp();
    let upper = 9.0 * p.sqrt();
    let breaks = g.breakpoints();
    let m1 = integrate_split(&|r: f64| g.envelope(r) * r * pdf(r), 0.0, upper, &breaks, 1e-10);
    let m2 = integrate_split(&|r: f64| g.envelope(r).powi(2) * pdf(r), 0.0, upper, &breaks, 1e-10);
    let a = m1 / p;
    let sigma_g2 = m2 - a * a * p;
    Ok(BussgangParams::from_moments(Complex64::new(a, 0.0), sigma_g2, 0, p, 0.0, 0.0))
}

/// Analytic Bussgang parameters for a nonlinearity applied independently
/// to each real dimension (I and Q see the same scalar function), by 1-D
/// quadrature over the per-dimension normal density. `g` maps a real
/// sample to a real sample; `breakpoints` lists its kinks in signal
/// units. The resulting gain is real and the parameters match those of
/// the equivalent real-passband characterization.
pub fn bussgang_quadrature_per_dim<G: Fn(f64) -> f64>(
    g: &G,
    input_power: f64,
    breakpoints: &[f64],
) -> Result<BussgangParams> {
    if input_power <= 0.0 {
        return Err(Error::InvalidParameter("input power must be positive".into()));
    }
    let p_dim = input_power / 2.0;
    let s = p_dim.sqrt();
    let pdf = move |x: f64| crate::math::normal_pdf(x / s) / s;
    let upper = 9.0 * s;
    let mut breaks: Vec<f64> = breakpoints.to_vec();
    breaks.extend(breakpoints.iter().map(|b| -b));
    let m1 = integrate_split(&|x: f64| g(x) * x * pdf(x), -upper, upper, &breaks, 1e-10);
    let m2 = integrate_split(&|x: f64| g(x) * g(x) * pdf(x), -upper, upper, &breaks, 1e-10);
    let a = m1 / p_dim;
    // both dimensions contribute independently
    let sigma_g2 = 2.0 * (m2 - a * a * p_dim);
    Ok(BussgangParams::from_moments(Complex64::new(a, 0.0), sigma_g2, 0, input_power, 0.0, 0.0))
}

/// Rescale raw parameters to the normalized (unit input power) convention:
/// a is unchanged, sigma_g2 divides by the input power. gamma_g is
/// invariant under this map.
pub fn normalize_params(raw: &BussgangParams, input_power: f64) -> Result<BussgangParams> {
    if input_power <= 0.0 {
        return Err(Error::InvalidParameter("input power must be positive".into()));
    }
    let mut out = *raw;
    out.sigma_g2 = raw.sigma_g2 / input_power;
    out.sigma_stderr = raw.sigma_stderr / input_power;
    out.input_power = 1.0;
    if !out.gamma_infinite {
        out.gamma_g = out.a.norm_sqr() / out.sigma_g2;
    }
    Ok(out)
}

/// Effective-noise abstraction of the linearized system: the nonlinearity
/// contributes self-noise nu_g^2 = sigma_y^2 / gamma_g on top of thermal
/// noise.
#[derive(Debug, Clone, Copy)]
pub struct LinearizedModel {
    pub sigma_y2: f64,
    pub gamma_g: f64,
    pub nu_g2: f64,
    pub sigma_n2: f64,
    pub effective_noise_var: f64,
}

pub fn build_linearized_model(sigma_y2: f64, gamma_g: f64, sigma_n2: f64) -> Result<LinearizedModel> {
    if sigma_y2 < 0.0 || sigma_n2 < 0.0 {
        return Err(Error::InvalidParameter("powers must be non-negative".into()));
    }
    if gamma_g <= 0.0 {
        return Err(Error::InvalidParameter("gamma_g must be positive".into()));
    }
    let nu_g2 = if gamma_g.is_infinite() { 0.0 } else { sigma_y2 / gamma_g };
    Ok(LinearizedModel {
        sigma_y2,
        gamma_g,
        nu_g2,
        sigma_n2,
        effective_noise_var: sigma_n2 + nu_g2,
    })
}

/// Covariance-preservation check: for jointly Gaussian (y, z) with
/// E[y z*] = rho and unit powers, |mean(g(y) z*) - a rho| should vanish.
/// Returns (residual, standard error). `a` comes from `bussgang_mc` on an
/// independent stream of the same seed.
pub fn check_covariance_preservation<G: MemorylessNonlinearity + ?Sized>(
    g: &G,
    rho: Complex64,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if rho.norm() > 1.0 {
        return Err(Error::InvalidParameter("|rho| must be <= 1".into()));
    }
    let a = bussgang_mc(g, 1.0, n_samples, seed ^ 0xc0fe)?.a;
    let cross = (1.0 - rho.norm_sqr()).sqrt();
    let n_chunks = n_samples.div_ceil(CHUNK);
    let partials: Vec<(Complex64, f64, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, c as u64);
            let len = CHUNK.min(n_samples - c * CHUNK);
            let mut s = Complex64::new(0.0, 0.0);
            let mut s2 = 0.0;
            for _ in 0..len {
                let y = complex_gaussian(&mut rng, 1.0);
                let w = complex_gaussian(&mut rng, 1.0);
                let z = rho.conj() * y + cross * w;
                let t = g.apply(y) * z.conj();
                s += t;
                s2 += t.norm_sqr();
            }
            (s, s2, len)
        })
        .collect();
    let (mut s, mut s2, mut n) = (Complex64::new(0.0, 0.0), 0.0, 0usize);
    for (ps, ps2, pn) in partials {
        s += ps;
        s2 += ps2;
        n += pn;
    }
    let nf = n as f64;
    let mean = s / nf;
    let var = (s2 / nf - mean.norm_sqr()).max(0.0);
    Ok(((mean - a * rho).norm(), (var / nf).sqrt()))
}

/// Per-antenna Bussgang parameters for a common nonlinearity driven at
/// different input powers: Diag([a_1..a_N]) plus error variances. Antennas
/// with bit-identical powers share one estimate, so equal powers yield
/// exactly equal diagonal entries.
pub fn vector_bussgang<G: MemorylessNonlinearity + ?Sized>(
    g: &G,
    per_antenna_powers: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<Complex64>, Vec<f64>)> {
    let mut unique: Vec<f64> = Vec::new();
    let mut index = Vec::with_capacity(per_antenna_powers.len());
    for &p in per_antenna_powers {
        if p <= 0.0 {
            return Err(Error::InvalidParameter("antenna powers must be positive".into()));
        }
        match unique.iter().position(|&u| u.to_bits() == p.to_bits()) {
            Some(i) => index.push(i),
            None => {
                unique.push(p);
                index.push(unique.len() - 1);
            }
        }
    }
    let params: Vec<BussgangParams> = unique
        .iter()
        .enumerate()
        .map(|(i, &p)| bussgang_mc(g, p, n_samples, seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let a = index.iter().map(|&i| params[i].a).collect();
    let s = index.iter().map(|&i| params[i].sigma_g2).collect();
    Ok((a, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::{
        design_uniform_quantizer, Identity, Limiter, NonlinearChain, PassbandThirdOrder,
        PolarLimiter, ThirdOrderSaturated, P1dbDomain,
    };
    use approx::assert_relative_eq;

    const SQRT_PI_2: f64 = 0.8862269254527580; // sqrt(pi)/2

    #[test]
    fn identity_is_exactly_linear() {
        let p = bussgang_mc(&Identity, 1.0, 100_000, 3).unwrap();
        assert_relative_eq!(p.a.re, 1.0, epsilon = 1e-12);
        assert!(p.gamma_infinite);
        assert!(p.gamma_g.is_infinite());
        let q = bussgang_quadrature(&Identity, 1.0).unwrap();
        assert_relative_eq!(q.a.re, 1.0, epsilon = 1e-8);
        assert!(q.gamma_infinite);
    }

    #[test]
    fn polar_limiter_closed_form() {
        // E|y| = sqrt(pi)/2 for unit-power complex Gaussian
        let q = bussgang_quadrature(&PolarLimiter, 1.0).unwrap();
        assert_relative_eq!(q.a.re, SQRT_PI_2, epsilon = 1e-8);
        assert_relative_eq!(q.sigma_g2, 1.0 - std::f64::consts::PI / 4.0, epsilon = 1e-8);
        assert_relative_eq!(q.gamma_g, SQRT_PI_2 * SQRT_PI_2 / (1.0 - std::f64::consts::PI / 4.0), epsilon = 1e-7);

        let mc = bussgang_mc(&PolarLimiter, 1.0, 1_000_000, 9).unwrap();
        assert!((mc.a.re - SQRT_PI_2).abs() < 4.0 * mc.a_stderr.max(1e-5));
        assert!(
            (mc.sigma_g2 - q.sigma_g2).abs() < 4.0 * mc.sigma_stderr.max(1e-5),
            "mc {} quad {} stderr {}",
            mc.sigma_g2,
            q.sigma_g2,
            mc.sigma_stderr
        );
    }

    #[test]
    fn limiter_6db_threshold_gives_20db_gamma() {
        // the limiter clips the real passband signal; at a threshold 6 dB
        // above the signal power its intrinsic SNR is about 20 dB
        let clip = crate::nonlinearity::RealClipper::normalized(crate::math::db_to_lin(6.0), 1.0)
            .unwrap();
        let q = bussgang_quadrature_per_dim(&|x| clip.apply_real(x), 1.0, &[clip.clip]).unwrap();
        assert!((q.gamma_db() - 20.0).abs() < 1.0, "gamma {} dB", q.gamma_db());
        let mc = bussgang_mc(&clip, 1.0, 1_000_000, 21).unwrap();
        assert!((mc.gamma_db() - q.gamma_db()).abs() < 0.1, "mc {} quad {}", mc.gamma_db(), q.gamma_db());
    }

    #[test]
    fn envelope_limiter_quadrature_matches_mc() {
        // the complex-envelope clamp is a lighter nonlinearity: at the
        // same 6 dB threshold its intrinsic SNR is markedly higher
        let lim = Limiter::normalized(crate::math::db_to_lin(6.0), 1.0).unwrap();
        let q = bussgang_quadrature(&lim, 1.0).unwrap();
        assert!((q.gamma_db() - 27.7).abs() < 0.1, "gamma {} dB", q.gamma_db());
        let mc = bussgang_mc(&lim, 1.0, 1_000_000, 23).unwrap();
        assert!((mc.a - q.a).norm() < 4.0 * mc.a_stderr.max(1e-5));
    }

    #[test]
    fn quadrature_matches_mc_for_third_order() {
        let p1db = crate::math::db_to_lin(10.0);
        let quad = bussgang_quadrature(&PassbandThirdOrder(p1db), 1.0).unwrap();
        let mc = bussgang_mc(
            &ThirdOrderSaturated::new(p1db, P1dbDomain::Passband).unwrap(),
            1.0,
            2_000_000,
            17,
        )
        .unwrap();
        assert!((mc.a.re - quad.a.re).abs() < 3.0 * mc.a_stderr);
        assert!((mc.sigma_g2 - quad.sigma_g2).abs() < 3.0 * mc.sigma_stderr);
    }

    #[test]
    fn mc_deterministic_across_worker_counts() {
        let lim = PolarLimiter;
        let a = bussgang_mc(&lim, 1.0, 200_000, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| bussgang_mc(&lim, 1.0, 200_000, 5).unwrap());
        assert_eq!(a.a, b.a);
        assert_eq!(a.sigma_g2.to_bits(), b.sigma_g2.to_bits());
    }

    #[test]
    fn normalization_identities() {
        let raw = BussgangParams::from_moments(Complex64::new(0.9, 0.0), 0.2, 0, 4.0, 0.0, 0.0);
        let norm = normalize_params(&raw, 4.0).unwrap();
        assert_relative_eq!(norm.sigma_g2, 0.05, epsilon = 1e-15);
        assert_eq!(norm.a, raw.a);
        assert_relative_eq!(norm.gamma_g, raw.gamma_g, epsilon = 1e-12);

        // gamma invariance across input powers for a scale-family stage
        let lim4 = Limiter::normalized(2.0, 4.0).unwrap();
        let lim1 = Limiter::normalized(2.0, 1.0).unwrap();
        let g4 = normalize_params(&bussgang_quadrature(&lim4, 4.0).unwrap(), 4.0).unwrap();
        let g1 = bussgang_quadrature(&lim1, 1.0).unwrap();
        assert_relative_eq!(g4.gamma_g, g1.gamma_g, epsilon = 1e-7);
    }

    #[test]
    fn linearized_model_examples() {
        let m = build_linearized_model(10.0, 100.0, 0.0).unwrap();
        assert_relative_eq!(m.effective_noise_var, 0.1, epsilon = 1e-15);
        let m = build_linearized_model(10.0, f64::INFINITY, 0.3).unwrap();
        assert_relative_eq!(m.effective_noise_var, 0.3, epsilon = 1e-15);
        assert!(build_linearized_model(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn covariance_preservation_polar_limiter() {
        for &rho in &[0.0, 0.5] {
            let (res, se) = check_covariance_preservation(
                &PolarLimiter,
                Complex64::new(rho, 0.0),
                400_000,
                21,
            )
            .unwrap();
            assert!(res < 4.0 * se.max(1e-4), "rho={rho} res={res} se={se}");
        }
    }

    #[test]
    fn vector_bussgang_corollary() {
        let (a, s) = vector_bussgang(&PolarLimiter, &[1.0, 1.0, 1.0], 50_000, 7).unwrap();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[0], a[2]);
        assert_eq!(s[0], s[1]);
        let (a, s) = vector_bussgang(&Identity, &[1.0, 2.0], 50_000, 7).unwrap();
        assert_relative_eq!(a[0].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(a[1].re, 1.0, epsilon = 1e-12);
        assert!(s.iter().all(|&x| x.abs() < 1e-12));
        // single antenna reduces to the scalar estimate
        let (a1, s1) = vector_bussgang(&PolarLimiter, &[1.0], 50_000, 13).unwrap();
        let scalar = bussgang_mc(&PolarLimiter, 1.0, 50_000, 13).unwrap();
        assert_eq!(a1[0], scalar.a);
        assert_eq!(s1[0].to_bits(), scalar.sigma_g2.to_bits());
    }

    #[test]
    fn cascade_gamma_monotone_in_bits() {
        let mut prev = -f64::INFINITY;
        for bits in 2..=5 {
            let chain = NonlinearChain {
                passband: None,
                bb_p1db_norm: None,
                quantizer: Some(design_uniform_quantizer(bits).unwrap()),
            };
            let eval = chain.evaluator(1.0).unwrap();
            let g = bussgang_mc(&eval, 1.0, 300_000, 31).unwrap();
            assert!(g.gamma_db() > prev, "bits={bits}");
            prev = g.gamma_db();
        }
    }

    #[test]
    fn orthogonality_residual_small() {
        let quad = bussgang_quadrature(&PolarLimiter, 1.0).unwrap();
        let (res, se) = orthogonality_residual(&PolarLimiter, quad.a, 1.0, 500_000, 77);
        assert!(res < 4.0 * se, "res={res} se={se}");
    }
}
