//! Small numerical helpers: Gaussian integrals, adaptive quadrature,
//! 1-D minimization, dB conversions.

use statrs::function::erf;

pub const SQRT_2PI: f64 = 2.5066282746310002;

/// Standard normal pdf.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal cdf.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Gaussian tail probability Q(x) = 1 - Phi(x).
pub fn q_func(x: f64) -> f64 {
    0.5 * erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of Q on (0, 0.5], by bisection.
pub fn q_inv(p: f64) -> f64 {
    assert!(p > 0.0 && p <= 0.5);
    let (mut lo, mut hi) = (0.0_f64, 40.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if q_func(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// Adaptive Simpson quadrature on [a, b].
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let abs_tol = (whole.abs() * rel_tol).max(1e-300);
    adaptive(f, a, b, fa, fm, fb, whole, abs_tol.max(1e-16 * whole.abs()), 60)
}

/// Same, but split at interior breakpoints (integrand kinks).
pub fn integrate_split<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    rel_tol: f64,
) -> f64 {
    let mut pts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x > a && x < b)
        .collect();
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.insert(0, a);
    pts.push(b);
    pts.windows(2)
        .map(|w| integrate(f, w[0], w[1], rel_tol))
        .sum()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        // don't chase tolerances below the local floating-point noise:
        // delta stops shrinking there and recursion would run to depth 0
        let noise = f64::EPSILON * (left.abs() + right.abs());
        let child = (0.5 * tol).max(noise);
        adaptive(f, a, m, fa, flm, fm, left, child, depth - 1)
            + adaptive(f, m, b, fm, frm, fb, right, child, depth - 1)
    }
}

/// Golden-section minimization of a unimodal function on [a, b].
pub fn golden_section_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INVPHI: f64 = 0.6180339887498949;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Order statistic: value not exceeded by `level` fraction of the samples.
/// Ties broken by lower index in the sorted order.
pub fn quantile(samples: &[f64], level: f64) -> f64 {
    assert!(!samples.is_empty());
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((level * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}
