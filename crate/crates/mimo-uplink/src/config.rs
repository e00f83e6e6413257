//! Run configuration for the CLI: TOML (primary) or JSON (alternate),
//! schema-validated with unknown keys rejected, plus a stable content
//! hash carried into every output row for provenance.
//!
//! Configs use dB throughout; conversion to linear units happens here,
//! at the module boundary, when specs are turned into library types.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ArrayGeometry;
use crate::error::{Error, Result};
use crate::math::db_to_lin;
use crate::nonlinearity::{design_uniform_quantizer, NonlinearChain, PassbandStage};
use crate::powercontrol::{PcScheme, PowerControlConfig};
use crate::receiver::LinkScenario;

/// One stage of a receive chain, as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub kind: StageKind,
    /// 1 dB compression point referred to the chain input power (dB).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p1db_db: Option<f64>,
    /// Limiter clipping threshold referred to the chain input power (dB).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_db: Option<f64>,
    /// ADC resolution in bits per real dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
    /// Fixed gain ahead of the following stages (dB). Because compression
    /// points are input-referred, a gain of G dB lowers the effective
    /// compression points of all later stages by G dB.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_db: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    PassbandThirdOrder,
    PassbandLimiter,
    BasebandThirdOrder,
    Adc,
    Gain,
}

/// Receive-chain spec: an ordered stage list. Stage order must be
/// passband, then baseband, then ADC; gain stages may appear anywhere.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    #[serde(default)]
    pub stages: Vec<StageSpec>,
}

impl ChainSpec {
    /// Validate the stage list and build the library chain.
    pub fn build(&self) -> Result<NonlinearChain> {
        let mut chain = NonlinearChain::identity();
        let mut gain_db = 0.0;
        // rank enforces stage order: passband < baseband < adc
        let mut rank = 0u8;
        for (i, s) in self.stages.iter().enumerate() {
            let here = format!("chain stage {i} ({:?})", s.kind);
            let want = |cond: bool, what: &str| -> Result<()> {
                cond.then_some(())
                    .ok_or_else(|| Error::Config(format!("{here}: {what}")))
            };
            match s.kind {
                StageKind::Gain => {
                    want(s.gain_db.is_some(), "requires gain_db")?;
                    want(
                        s.p1db_db.is_none() && s.bits.is_none() && s.threshold_db.is_none(),
                        "takes only gain_db",
                    )?;
                    gain_db += s.gain_db.unwrap();
                }
                StageKind::PassbandThirdOrder => {
                    want(rank < 1 && chain.passband.is_none(), "passband stage out of order or duplicated")?;
                    want(s.p1db_db.is_some(), "requires p1db_db")?;
                    want(s.bits.is_none() && s.threshold_db.is_none() && s.gain_db.is_none(), "takes only p1db_db")?;
                    chain.passband = Some(PassbandStage::ThirdOrder {
                        p1db_norm: db_to_lin(s.p1db_db.unwrap() - gain_db),
                    });
                    rank = 1;
                }
                StageKind::PassbandLimiter => {
                    want(rank < 1 && chain.passband.is_none(), "passband stage out of order or duplicated")?;
                    want(s.threshold_db.is_some(), "requires threshold_db")?;
                    want(s.bits.is_none() && s.p1db_db.is_none() && s.gain_db.is_none(), "takes only threshold_db")?;
                    chain.passband = Some(PassbandStage::Limiter {
                        threshold_norm: db_to_lin(s.threshold_db.unwrap() - gain_db),
                    });
                    rank = 1;
                }
                StageKind::BasebandThirdOrder => {
                    want(rank < 2 && chain.bb_p1db_norm.is_none(), "baseband stage out of order or duplicated")?;
                    want(s.p1db_db.is_some(), "requires p1db_db")?;
                    want(s.bits.is_none() && s.threshold_db.is_none() && s.gain_db.is_none(), "takes only p1db_db")?;
                    chain.bb_p1db_norm = Some(db_to_lin(s.p1db_db.unwrap() - gain_db));
                    rank = 2;
                }
                StageKind::Adc => {
                    want(chain.quantizer.is_none(), "duplicate adc stage")?;
                    want(s.bits.is_some(), "requires bits")?;
                    want(s.p1db_db.is_none() && s.threshold_db.is_none() && s.gain_db.is_none(), "takes only bits")?;
                    chain.quantizer = Some(design_uniform_quantizer(s.bits.unwrap())?);
                    rank = 3;
                }
            }
        }
        Ok(chain)
    }

    /// Human-readable label per stage (for CLI tables).
    pub fn stage_labels(&self) -> Vec<String> {
        self.stages
            .iter()
            .map(|s| match s.kind {
                StageKind::Gain => format!("gain {:+.1} dB", s.gain_db.unwrap_or(0.0)),
                StageKind::PassbandThirdOrder => format!("pb_third_order p1db {:.1} dB", s.p1db_db.unwrap_or(0.0)),
                StageKind::PassbandLimiter => format!("pb_limiter thr {:.1} dB", s.threshold_db.unwrap_or(0.0)),
                StageKind::BasebandThirdOrder => format!("bb_third_order p1db {:.1} dB", s.p1db_db.unwrap_or(0.0)),
                StageKind::Adc => format!("adc {} bit", s.bits.unwrap_or(0)),
            })
            .collect()
    }
}

fn default_carrier_ghz() -> f64 {
    140.0
}
fn default_spacing() -> f64 {
    0.5
}
fn default_availability() -> f64 {
    0.95
}

/// Cell and drop geometry plus the power-control scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n_antennas: usize,
    pub k_users: usize,
    #[serde(default = "default_carrier_ghz")]
    pub carrier_ghz: f64,
    #[serde(default = "default_spacing")]
    pub spacing_wavelengths: f64,
    pub r_min_m: f64,
    pub r_max_m: f64,
    /// Minimum spatial-frequency separation; defaults to 2.783/N.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_separation: Option<f64>,
    #[serde(default = "default_availability")]
    pub availability: f64,
    #[serde(default)]
    pub power_control: PowerControlSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerControlSpec {
    pub scheme: PcScheme,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinr_th_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_tol_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_effective_noise: Option<bool>,
}

impl Default for PowerControlSpec {
    fn default() -> Self {
        Self {
            scheme: PcScheme::None,
            sinr_th_db: None,
            n_iter: None,
            convergence_tol_db: None,
            use_effective_noise: None,
        }
    }
}

impl PowerControlSpec {
    pub fn to_config(self) -> PowerControlConfig {
        let mut c = PowerControlConfig::new(self.scheme);
        if let Some(v) = self.sinr_th_db {
            c.sinr_th_db = v;
        }
        if let Some(v) = self.n_iter {
            c.n_iter = v;
        }
        if let Some(v) = self.convergence_tol_db {
            c.convergence_tol_db = v;
        }
        if let Some(v) = self.use_effective_noise {
            c.use_effective_noise = v;
        }
        c
    }
}

impl ScenarioSpec {
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(
            self.n_antennas,
            self.spacing_wavelengths,
            crate::channel::C / (self.carrier_ghz * 1e9),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.r_min_m && self.r_min_m < self.r_max_m) {
            return Err(Error::Config("need 0 < r_min_m < r_max_m".into()));
        }
        if self.k_users == 0 {
            return Err(Error::Config("k_users must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.availability) {
            return Err(Error::Config("availability must be in [0, 1)".into()));
        }
        self.geometry().map(|_| ())
    }

    /// Bind the scenario to an edge SNR in dB.
    pub fn to_link_scenario(&self, snr_edge_db: f64) -> Result<LinkScenario> {
        self.validate()?;
        let geometry = self.geometry()?;
        let min_separation = self.min_separation.unwrap_or_else(|| geometry.default_min_separation());
        Ok(LinkScenario {
            geometry,
            k_users: self.k_users,
            r_min: self.r_min_m,
            r_max: self.r_max_m,
            min_separation,
            power_control: self.power_control.to_config(),
            snr_edge: db_to_lin(snr_edge_db),
            availability: self.availability,
        })
    }
}

fn default_bussgang_samples() -> usize {
    1_000_000
}

/// Parameters of the `bussgang` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BussgangSpec {
    #[serde(default = "default_bussgang_samples")]
    pub n_samples: usize,
}

impl Default for BussgangSpec {
    fn default() -> Self {
        Self { n_samples: default_bussgang_samples() }
    }
}

fn default_sinr_target_db() -> f64 {
    9.7
}
fn default_bits_grid() -> Vec<u32> {
    (1..=6).collect()
}
fn default_p1db_min_db() -> f64 {
    -4.0
}
fn default_p1db_max_db() -> f64 {
    10.0
}
fn default_p1db_step_db() -> f64 {
    0.1
}
fn default_eta_drops() -> usize {
    200
}
fn default_gamma_samples() -> usize {
    400_000
}

/// Parameters of the `design` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    /// Output SINR needed by the QoS target (dB).
    #[serde(default = "default_sinr_target_db")]
    pub sinr_target_db: f64,
    /// Supply eta_ideal directly (dB <= 0); estimated by Monte Carlo
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_ideal_db: Option<f64>,
    #[serde(default = "default_eta_drops")]
    pub n_eta_drops: usize,
    #[serde(default = "default_bits_grid")]
    pub bits_grid: Vec<u32>,
    #[serde(default = "default_p1db_min_db")]
    pub p1db_min_db: f64,
    #[serde(default = "default_p1db_max_db")]
    pub p1db_max_db: f64,
    #[serde(default = "default_p1db_step_db")]
    pub p1db_step_db: f64,
    #[serde(default = "default_gamma_samples")]
    pub n_gamma_samples: usize,
    /// One output row per entry: user count (beta = k_users / N) and
    /// power-control scheme.
    #[serde(default)]
    pub rows: Vec<DesignRowSpec>,
}

impl Default for DesignSpec {
    fn default() -> Self {
        Self {
            sinr_target_db: default_sinr_target_db(),
            eta_ideal_db: None,
            n_eta_drops: default_eta_drops(),
            bits_grid: default_bits_grid(),
            p1db_min_db: default_p1db_min_db(),
            p1db_max_db: default_p1db_max_db(),
            p1db_step_db: default_p1db_step_db(),
            n_gamma_samples: default_gamma_samples(),
            rows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRowSpec {
    pub k_users: usize,
    pub power_control: PcScheme,
    /// Pin the chain intrinsic-SNR target for this row; when absent the
    /// CLI picks the knee of the (gamma, edge-SNR) trade-off contour.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_target_db: Option<f64>,
}

impl DesignSpec {
    pub fn p1db_grid(&self) -> Result<Vec<f64>> {
        if !(self.p1db_step_db > 0.0 && self.p1db_min_db <= self.p1db_max_db) {
            return Err(Error::Config("invalid p1db grid".into()));
        }
        let n = ((self.p1db_max_db - self.p1db_min_db) / self.p1db_step_db).round() as usize;
        Ok((0..=n).map(|i| self.p1db_min_db + i as f64 * self.p1db_step_db).collect())
    }
}

fn default_n_drops() -> usize {
    20
}
fn default_n_symbols() -> usize {
    100_000
}
fn default_target_ber() -> f64 {
    1e-3
}
fn default_bisect_tol_db() -> f64 {
    0.25
}
fn default_snr_lo() -> f64 {
    0.0
}
fn default_snr_hi() -> f64 {
    30.0
}

/// Parameters of the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default = "default_n_drops")]
    pub n_drops: usize,
    #[serde(default = "default_n_symbols")]
    pub n_symbols: usize,
    #[serde(default = "default_target_ber")]
    pub target_ber: f64,
    /// Run at a fixed edge SNR instead of bisecting for the target BER.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_edge_db: Option<f64>,
    #[serde(default = "default_snr_lo")]
    pub snr_edge_min_db: f64,
    #[serde(default = "default_snr_hi")]
    pub snr_edge_max_db: f64,
    #[serde(default = "default_bisect_tol_db")]
    pub bisect_tol_db: f64,
    #[serde(default = "default_gamma_samples")]
    pub n_gamma_samples: usize,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            n_drops: default_n_drops(),
            n_symbols: default_n_symbols(),
            target_ber: default_target_ber(),
            snr_edge_db: None,
            snr_edge_min_db: default_snr_lo(),
            snr_edge_max_db: default_snr_hi(),
            bisect_tol_db: default_bisect_tol_db(),
            n_gamma_samples: default_gamma_samples(),
        }
    }
}

/// Parameters of the `sweep` command: a k_users x power-control x chain
/// grid of independent `simulate` cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub k_users_grid: Vec<usize>,
    pub power_control_grid: Vec<PcScheme>,
    pub chains: Vec<ChainSpec>,
    #[serde(default)]
    pub simulate: SimulateSpec,
}

/// Top-level run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; mandatory so every run is reproducible.
    pub seed: u64,
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub chain: ChainSpec,
    #[serde(default)]
    pub bussgang: BussgangSpec,
    #[serde(default)]
    pub design: DesignSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl RunConfig {
    /// Parse from TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Parse from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Parse from a file, dispatching on the extension (.json vs TOML).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            _ => Self::from_toml(&text),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.chain.build().map(|_| ())?;
        if let Some(s) = &self.sweep {
            if s.k_users_grid.is_empty() || s.power_control_grid.is_empty() || s.chains.is_empty() {
                return Err(Error::Config("sweep grids must be non-empty".into()));
            }
            for c in &s.chains {
                c.build()?;
            }
        }
        if self.simulate.snr_edge_min_db > self.simulate.snr_edge_max_db {
            return Err(Error::Config("snr_edge_min_db > snr_edge_max_db".into()));
        }
        Ok(())
    }

    /// Stable short hash of the canonical (JSON) serialization, carried
    /// into every output row.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serialization cannot fail");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
