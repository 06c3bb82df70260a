//! Experiment configuration, loaded from TOML with one section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelKind, ChannelModel};
use crate::error::{Error, Result};
use crate::frame::GridConfig;
use crate::phy::{CodeConfig, Modulation, DEFAULT_CODED_BITS, DEFAULT_CODE_SEED, DEFAULT_INFO_BITS, DEFAULT_MAX_ITERATIONS};
use crate::pilots::PilotScheme;
use crate::receiver::ReceiverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSection {
    pub n_prb: usize,
}

impl Default for FrameSection {
    fn default() -> Self {
        Self { n_prb: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotSection {
    pub scheme: PilotScheme,
    pub regions: usize,
    /// Energy per pilot RE.
    pub energy: f64,
}

impl Default for PilotSection {
    fn default() -> Self {
        Self {
            scheme: PilotScheme::Esop,
            regions: 1,
            energy: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub model: ChannelKind,
    /// Power decay constant of the selective tap profile, in nanoseconds.
    pub decay_ns: f64,
    pub antennas: usize,
    /// Maximum time offset as a fraction of the cyclic prefix.
    pub to_max_cp: f64,
    pub fo_max_hz: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            model: ChannelKind::Flat,
            decay_ns: 300.0,
            antennas: 8,
            to_max_cp: 0.0,
            fo_max_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhySection {
    pub info_bits: usize,
    pub coded_bits: usize,
    pub code_seed: u64,
    pub max_iterations: usize,
    pub modulation: Modulation,
}

impl Default for PhySection {
    fn default() -> Self {
        Self {
            info_bits: DEFAULT_INFO_BITS,
            coded_bits: DEFAULT_CODED_BITS,
            code_seed: DEFAULT_CODE_SEED,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            modulation: Modulation::Bpsk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub k: Vec<usize>,
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub output: Option<PathBuf>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            k: vec![10],
            snr_db: vec![20.0],
            trials: 200,
            seed: 1,
            workers: 0,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub frame: FrameSection,
    pub pilots: PilotSection,
    pub channel: ChannelSection,
    pub phy: PhySection,
    pub receiver: ReceiverConfig,
    pub sim: SweepSection,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: SimConfig = toml::from_str(text)?;
        cfg.receiver.modulation = cfg.phy.modulation;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<GridConfig> {
        GridConfig::new(self.frame.n_prb, self.pilots.regions)
    }

    pub fn channel_model(&self) -> ChannelModel {
        match self.channel.model {
            ChannelKind::Flat => ChannelModel::flat(),
            ChannelKind::Selective => ChannelModel::exponential(self.channel.decay_ns * 1e-9),
        }
    }

    pub fn code(&self) -> Result<CodeConfig> {
        CodeConfig::new(self.phy.info_bits, self.phy.coded_bits, self.phy.code_seed, self.phy.max_iterations)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.sim.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.sim.snr_db.is_empty() || self.sim.snr_db.iter().any(|s| !s.is_finite()) {
            return bad("snr_db must be a non-empty list of finite values");
        }
        if self.sim.k.is_empty() {
            return bad("k must be non-empty");
        }
        if self.channel.antennas == 0 {
            return bad("antennas must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.channel.to_max_cp) {
            return bad("to_max_cp must lie in [0, 1]");
        }
        if !(self.channel.fo_max_hz >= 0.0) {
            return bad("fo_max_hz must be non-negative");
        }
        if !(self.pilots.energy > 0.0) {
            return bad("pilot energy must be positive");
        }
        if self.channel.model == ChannelKind::Selective && !(self.channel.decay_ns > 0.0) {
            return bad("decay_ns must be positive");
        }
        let grid = self.grid()?;
        let capacity = grid.data_len() * self.phy.modulation.bits_per_symbol();
        if capacity != self.phy.coded_bits {
            return Err(Error::InvalidConfig(format!(
                "{} coded bits do not fill {} data REs at {:?} ({capacity} bits)",
                self.phy.coded_bits,
                grid.data_len(),
                self.phy.modulation
            )));
        }
        let mut rx = self.receiver.clone();
        rx.modulation = self.phy.modulation;
        rx.validate(&grid)
    }
}
