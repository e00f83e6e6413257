//! Memoryless per-antenna nonlinearities of the receive chain and their
//! cascade: limiter, saturated third-order amplifiers (passband and
//! baseband), overloaded ADC quantizers, and the AGC-normalized chain.
//!
//! All transfer functions are pure; types are immutable after construction.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math::{golden_section_min, normal_cdf, normal_pdf};
use crate::rng::{complex_gaussian, stream};

/// Anything that maps one complex baseband sample to another.
pub trait MemorylessNonlinearity: Sync {
    fn apply(&self, y: Complex64) -> Complex64;
}

/// Phase-preserving nonlinearity acting on the envelope only:
/// g(y) = envelope(|y|) * y/|y|.
pub trait RadialNonlinearity: Sync {
    fn envelope(&self, r: f64) -> f64;
    /// Envelope values at which the transfer function has a kink.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl<T: RadialNonlinearity> MemorylessNonlinearity for T {
    fn apply(&self, y: Complex64) -> Complex64 {
        let r = y.norm();
        if r == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        y / r * self.envelope(r)
    }
}

/// Pass-through, for ideal-hardware baselines.
pub struct Identity;

impl RadialNonlinearity for Identity {
    fn envelope(&self, r: f64) -> f64 {
        r
    }
}

/// Hard limiter y/|y| (zero maps to zero).
pub struct PolarLimiter;

impl RadialNonlinearity for PolarLimiter {
    fn envelope(&self, _r: f64) -> f64 {
        1.0
    }
}

/// Limiter with linear amplitude gain `gain` and clipping power threshold
/// `power_threshold`: output power never exceeds the threshold.
#[derive(Debug, Clone, Copy)]
pub struct Limiter {
    pub gain: f64,
    pub power_threshold: f64,
}

impl Limiter {
    pub fn new(gain: f64, power_threshold: f64) -> Result<Self> {
        if gain <= 0.0 || power_threshold <= 0.0 {
            return Err(Error::InvalidParameter(
                "limiter gain and power threshold must be positive".into(),
            ));
        }
        Ok(Self { gain, power_threshold })
    }

    /// Unity-gain limiter whose clipping threshold is `threshold_norm`
    /// times the input power (the normalized convention).
    pub fn normalized(threshold_norm: f64, input_power: f64) -> Result<Self> {
        Self::new(1.0, threshold_norm * input_power)
    }
}

impl RadialNonlinearity for Limiter {
    fn envelope(&self, r: f64) -> f64 {
        (self.gain * r).min(self.power_threshold.sqrt())
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.power_threshold.sqrt() / self.gain]
    }
}

/// Apply a limiter to one sample: G*y while |G*y|^2 <= P_th, else clip the
/// magnitude to sqrt(P_th) keeping the phase.
pub fn apply_limiter(y: Complex64, lim: &Limiter) -> Complex64 {
    lim.apply(y)
}

/// A limiter clipping the real passband signal, viewed at baseband: each
/// real dimension is hard-clipped independently at the amplitude whose
/// power is `threshold_norm` times the per-dimension signal power. The
/// characterization figures for "the normalized limiter" use this model
/// (clipping threshold normalized to the effective input power of the
/// real signal the limiter actually sees).
#[derive(Debug, Clone, Copy)]
pub struct RealClipper {
    /// Clip amplitude per real dimension.
    pub clip: f64,
}

impl RealClipper {
    /// Threshold `threshold_norm` (linear power ratio) relative to the
    /// per-dimension power of a complex signal of power `input_power`.
    pub fn normalized(threshold_norm: f64, input_power: f64) -> Result<Self> {
        if threshold_norm <= 0.0 || input_power <= 0.0 {
            return Err(Error::InvalidParameter(
                "clipper threshold and input power must be positive".into(),
            ));
        }
        Ok(Self { clip: (threshold_norm * input_power / 2.0).sqrt() })
    }

    /// The scalar clip applied to each real dimension.
    pub fn apply_real(&self, x: f64) -> f64 {
        x.clamp(-self.clip, self.clip)
    }
}

impl MemorylessNonlinearity for RealClipper {
    fn apply(&self, y: Complex64) -> Complex64 {
        Complex64::new(self.apply_real(y.re), self.apply_real(y.im))
    }
}

/// Which signal the gain compression acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum P1dbDomain {
    /// Compression depends on the complex envelope |y|.
    Passband,
    /// Compression applies to I and Q independently.
    Baseband,
}

/// Saturated third-order polynomial amplifier with unity nominal gain,
/// parametrized by its 1 dB compression point (linear input power).
#[derive(Debug, Clone, Copy)]
pub struct ThirdOrderSaturated {
    pub p1db: f64,
    pub domain: P1dbDomain,
}

impl ThirdOrderSaturated {
    pub fn new(p1db: f64, domain: P1dbDomain) -> Result<Self> {
        if p1db <= 0.0 {
            return Err(Error::InvalidParameter("p1db must be positive".into()));
        }
        Ok(Self { p1db, domain })
    }
}

/// Real scalar saturated third-order branch:
/// x(1 - 0.44 x^2 / (3 P)) for x^2 <= P/0.44, else sign(x) sqrt(P).
pub fn third_order_real(x: f64, p1db: f64) -> f64 {
    if x * x <= p1db / 0.44 {
        x * (1.0 - 0.44 * x * x / (3.0 * p1db))
    } else {
        x.signum() * p1db.sqrt()
    }
}

/// Passband third-order nonlinearity on the complex envelope.
pub fn apply_third_order_complex(y: Complex64, p1db: f64) -> Complex64 {
    let p = y.norm_sqr();
    if p <= p1db / 0.44 {
        y * (1.0 - 0.44 * p / (3.0 * p1db))
    } else {
        y / p.sqrt() * p1db.sqrt()
    }
}

/// Baseband third-order nonlinearity, I and Q compressed independently.
/// `p1db` refers to the complex signal power; each real branch carries
/// half of it, so the per-branch compression point is `p1db / 2`.
pub fn apply_third_order_baseband(y: Complex64, p1db: f64) -> Complex64 {
    let p_dim = 0.5 * p1db;
    Complex64::new(third_order_real(y.re, p_dim), third_order_real(y.im, p_dim))
}

impl MemorylessNonlinearity for ThirdOrderSaturated {
    fn apply(&self, y: Complex64) -> Complex64 {
        match self.domain {
            P1dbDomain::Passband => apply_third_order_complex(y, self.p1db),
            P1dbDomain::Baseband => apply_third_order_baseband(y, self.p1db),
        }
    }
}

/// The passband variant is radially symmetric.
pub struct PassbandThirdOrder(pub f64);

impl RadialNonlinearity for PassbandThirdOrder {
    fn envelope(&self, r: f64) -> f64 {
        if r * r <= self.0 / 0.44 {
            r * (1.0 - 0.44 * r * r / (3.0 * self.0))
        } else {
            self.0.sqrt()
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![(self.0 / 0.44).sqrt()]
    }
}

/// Diagnostic: fundamental gain compression (dB) of a real sinusoid of
/// envelope `amplitude` driven through the real third-order transfer
/// function, extracted with a single-bin DFT.
pub fn sinusoid_compression_db(stage: &ThirdOrderSaturated, amplitude: f64) -> f64 {
    let n = 1024usize;
    let (mut cr, mut ci) = (0.0, 0.0);
    for i in 0..n {
        let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        let out = third_order_real(amplitude * th.cos(), stage.p1db);
        cr += out * th.cos();
        ci -= out * th.sin();
    }
    let fundamental = 2.0 / n as f64 * (cr * cr + ci * ci).sqrt();
    -20.0 * (fundamental / amplitude).log10()
}

/// Compression measured at the stage's nominal 1 dB point (A^2 = P_1dB).
pub fn measure_p1db(stage: &ThirdOrderSaturated) -> f64 {
    sinusoid_compression_db(stage, stage.p1db.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantizerKind {
    Uniform,
    LloydMax,
}

/// Per-real-dimension scalar quantizer with 2^b levels, designed for a
/// standard Gaussian input. Outermost levels are finite (overloaded).
#[derive(Debug, Clone)]
pub struct QuantizerSpec {
    pub bits: u32,
    pub kind: QuantizerKind,
    /// Step size (uniform only).
    pub step: Option<f64>,
    /// Reconstruction levels, ascending.
    pub levels: Vec<f64>,
    /// Decision thresholds, ascending, length = levels - 1.
    pub thresholds: Vec<f64>,
    /// Analytic MSE for standard Gaussian input.
    pub mse: f64,
    /// Lloyd iteration convergence flag (always true for uniform).
    pub converged: bool,
}

fn check_bits(bits: u32) -> Result<()> {
    if !(1..=8).contains(&bits) {
        return Err(Error::InvalidParameter(format!("bits must be in 1..=8, got {bits}")));
    }
    Ok(())
}

/// Analytic MSE of a quantizer with the given levels/thresholds for a
/// standard Gaussian input, via closed-form per-bin partial moments.
pub fn gaussian_quantizer_mse(levels: &[f64], thresholds: &[f64]) -> f64 {
    let mut mse = 0.0;
    for (i, &l) in levels.iter().enumerate() {
        let lo = if i == 0 { f64::NEG_INFINITY } else { thresholds[i - 1] };
        let hi = if i == levels.len() - 1 { f64::INFINITY } else { thresholds[i] };
        let (phi_lo, cdf_lo) = if lo.is_finite() {
            (normal_pdf(lo), normal_cdf(lo))
        } else {
            (0.0, 0.0)
        };
        let (phi_hi, cdf_hi) = if hi.is_finite() {
            (normal_pdf(hi), normal_cdf(hi))
        } else {
            (0.0, 1.0)
        };
        let p = cdf_hi - cdf_lo;
        let m1 = phi_lo - phi_hi;
        let m2 = p + (if lo.is_finite() { lo * phi_lo } else { 0.0 })
            - (if hi.is_finite() { hi * phi_hi } else { 0.0 });
        mse += m2 - 2.0 * l * m1 + l * l * p;
    }
    mse
}

fn uniform_levels_thresholds(bits: u32, step: f64) -> (Vec<f64>, Vec<f64>) {
    let n_levels = 1usize << bits;
    let half = (n_levels / 2) as i64;
    let levels: Vec<f64> = (-half..half).map(|i| (i as f64 + 0.5) * step).collect();
    let thresholds: Vec<f64> = (1 - half..half).map(|i| i as f64 * step).collect();
    (levels, thresholds)
}

/// MSE-optimal uniform quantizer for a standard Gaussian: the step is found
/// by golden-section search on the analytic per-bin MSE.
pub fn design_uniform_quantizer(bits: u32) -> Result<QuantizerSpec> {
    check_bits(bits)?;
    let objective = |step: f64| {
        let (levels, thresholds) = uniform_levels_thresholds(bits, step);
        gaussian_quantizer_mse(&levels, &thresholds)
    };
    let step = golden_section_min(objective, 0.01, 4.0, 1e-8);
    let (levels, thresholds) = uniform_levels_thresholds(bits, step);
    let mse = gaussian_quantizer_mse(&levels, &thresholds);
    Ok(QuantizerSpec {
        bits,
        kind: QuantizerKind::Uniform,
        step: Some(step),
        levels,
        thresholds,
        mse,
        converged: true,
    })
}

/// Lloyd-Max quantizer for a standard Gaussian: alternate the centroid and
/// midpoint conditions until the largest level change falls below `tol`.
pub fn design_lloyd_max(bits: u32, tol: f64, max_iter: usize) -> Result<QuantizerSpec> {
    check_bits(bits)?;
    let mut levels = design_uniform_quantizer(bits)?.levels;
    let n = levels.len();
    let mut thresholds = vec![0.0; n - 1];
    let mut converged = false;
    for _ in 0..max_iter {
        for i in 0..n - 1 {
            thresholds[i] = 0.5 * (levels[i] + levels[i + 1]);
        }
        let mut max_change = 0.0f64;
        for i in 0..n {
            let lo = if i == 0 { f64::NEG_INFINITY } else { thresholds[i - 1] };
            let hi = if i == n - 1 { f64::INFINITY } else { thresholds[i] };
            let (phi_lo, cdf_lo) = if lo.is_finite() {
                (normal_pdf(lo), normal_cdf(lo))
            } else {
                (0.0, 0.0)
            };
            let (phi_hi, cdf_hi) = if hi.is_finite() {
                (normal_pdf(hi), normal_cdf(hi))
            } else {
                (0.0, 1.0)
            };
            let centroid = (phi_lo - phi_hi) / (cdf_hi - cdf_lo);
            max_change = max_change.max((centroid - levels[i]).abs());
            levels[i] = centroid;
        }
        if max_change < tol {
            converged = true;
            break;
        }
    }
    for i in 0..n - 1 {
        thresholds[i] = 0.5 * (levels[i] + levels[i + 1]);
    }
    let mse = gaussian_quantizer_mse(&levels, &thresholds);
    Ok(QuantizerSpec {
        bits,
        kind: QuantizerKind::LloydMax,
        step: None,
        levels,
        thresholds,
        mse,
        converged,
    })
}

impl QuantizerSpec {
    /// Quantize one real value. Values on a threshold round toward +inf.
    pub fn quantize_real(&self, x: f64) -> f64 {
        // partition_point with t <= x sends threshold hits to the upper bin
        let idx = self.thresholds.partition_point(|&t| t <= x);
        self.levels[idx]
    }

    /// Second moment E[Q(x)^2] for standard Gaussian input.
    pub fn output_power(&self) -> f64 {
        let n = self.levels.len();
        let mut p2 = 0.0;
        for (i, &l) in self.levels.iter().enumerate() {
            let lo = if i == 0 { 0.0 } else { normal_cdf(self.thresholds[i - 1]) };
            let hi = if i == n - 1 { 1.0 } else { normal_cdf(self.thresholds[i]) };
            p2 += l * l * (hi - lo);
        }
        p2
    }
}

impl MemorylessNonlinearity for QuantizerSpec {
    fn apply(&self, y: Complex64) -> Complex64 {
        Complex64::new(self.quantize_real(y.re), self.quantize_real(y.im))
    }
}

/// Quantize I and Q independently.
pub fn apply_quantizer(y: Complex64, q: &QuantizerSpec) -> Complex64 {
    q.apply(y)
}

/// Front-end (passband) stage of a chain. P1dB / threshold values are
/// normalized to the chain input power ("referred to the input").
#[derive(Debug, Clone, Copy)]
pub enum PassbandStage {
    ThirdOrder { p1db_norm: f64 },
    Limiter { threshold_norm: f64 },
}

/// Receive-chain cascade: passband stage, baseband stage, ideal AGC, ADC.
/// Stage order is fixed; the AGC point sits immediately before the
/// quantizer and scales each real dimension to unit variance.
#[derive(Debug, Clone)]
pub struct NonlinearChain {
    pub passband: Option<PassbandStage>,
    /// Baseband third-order P1dB normalized to the chain input power.
    pub bb_p1db_norm: Option<f64>,
    pub quantizer: Option<QuantizerSpec>,
}

impl NonlinearChain {
    pub fn identity() -> Self {
        Self { passband: None, bb_p1db_norm: None, quantizer: None }
    }

    /// Standard paper-style chain: third-order passband + third-order
    /// baseband (dB values referred to input power) + b-bit uniform ADC.
    pub fn standard(pb_p1db_db: f64, bb_p1db_db: f64, bits: u32) -> Result<Self> {
        Ok(Self {
            passband: Some(PassbandStage::ThirdOrder {
                p1db_norm: crate::math::db_to_lin(pb_p1db_db),
            }),
            bb_p1db_norm: Some(crate::math::db_to_lin(bb_p1db_db)),
            quantizer: Some(design_uniform_quantizer(bits)?),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.passband.is_none() && self.bb_p1db_norm.is_none() && self.quantizer.is_none()
    }

    /// Bind the chain to a known input power (ideal AGC calibration).
    pub fn evaluator(&self, input_power: f64) -> Result<ChainEvaluator> {
        ChainEvaluator::new(self.clone(), input_power)
    }
}

/// Seed for the internal AGC calibration draw; fixed so that an evaluator
/// is a pure function of (chain, input_power).
const AGC_CALIB_SEED: u64 = 0x61_67_63;
const AGC_CALIB_SAMPLES: usize = 1 << 17;

/// A chain bound to a known input power sigma_y^2, with the AGC gain
/// resolved. Applies passband, baseband, per-dimension normalization to
/// unit variance, then the quantizer; output is the quantizer output.
pub struct ChainEvaluator {
    chain: NonlinearChain,
    input_power: f64,
    /// 1 / (per-dimension std after the amplifier stages).
    agc_gain: f64,
}

impl ChainEvaluator {
    pub fn new(chain: NonlinearChain, input_power: f64) -> Result<Self> {
        if input_power <= 0.0 {
            return Err(Error::InvalidParameter("input power must be positive".into()));
        }
        let agc_gain = if chain.quantizer.is_some() {
            let per_dim_var = if chain.passband.is_none() && chain.bb_p1db_norm.is_none() {
                input_power / 2.0
            } else {
                // Post-amplifier power has no closed form for the cascade;
                // estimate it from a fixed high-sample draw.
                let mut rng = stream(AGC_CALIB_SEED, input_power.to_bits());
                let mut acc = 0.0;
                for _ in 0..AGC_CALIB_SAMPLES {
                    let y = complex_gaussian(&mut rng, input_power);
                    acc += chain.apply_amplifiers(y, input_power).norm_sqr();
                }
                acc / AGC_CALIB_SAMPLES as f64 / 2.0
            };
            1.0 / per_dim_var.sqrt()
        } else {
            1.0
        };
        Ok(Self { chain, input_power, agc_gain })
    }

    pub fn input_power(&self) -> f64 {
        self.input_power
    }

    pub fn chain(&self) -> &NonlinearChain {
        &self.chain
    }

    pub fn agc_gain(&self) -> f64 {
        self.agc_gain
    }
}

impl NonlinearChain {
    fn apply_amplifiers(&self, mut y: Complex64, input_power: f64) -> Complex64 {
        match self.passband {
            Some(PassbandStage::ThirdOrder { p1db_norm }) => {
                y = apply_third_order_complex(y, p1db_norm * input_power);
            }
            Some(PassbandStage::Limiter { threshold_norm }) => {
                let r = y.norm();
                let clip = (threshold_norm * input_power).sqrt();
                if r > clip {
                    y = y / r * clip;
                }
            }
            None => {}
        }
        if let Some(bb_norm) = self.bb_p1db_norm {
            y = apply_third_order_baseband(y, bb_norm * input_power);
        }
        y
    }
}

impl MemorylessNonlinearity for ChainEvaluator {
    fn apply(&self, y: Complex64) -> Complex64 {
        let y = self.chain.apply_amplifiers(y, self.input_power);
        match &self.chain.quantizer {
            Some(q) => q.apply(y * self.agc_gain),
            None => y,
        }
    }
}

/// Apply the chain to a block of samples of known input power.
pub fn apply_chain(samples: &[Complex64], chain: &NonlinearChain, input_power: f64) -> Result<Vec<Complex64>> {
    let eval = chain.evaluator(input_power)?;
    Ok(samples.iter().map(|&y| eval.apply(y)).collect())
}
