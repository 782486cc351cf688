//! Simulation, training, and architecture configuration.
//!
//! Configs load from a versioned TOML file with `[sim]`, `[train]` and
//! `[arch]` sections; every field has a desk-scale default so an empty file
//! is valid. [`SimConfig`] also has a canonical little-endian binary encoding
//! used in dataset headers and for the config hash recorded in model-bundle
//! manifests.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Payload modulation scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    Qam16,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            Modulation::Qpsk => 0,
            Modulation::Qam16 => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(Modulation::Qpsk),
            1 => Ok(Modulation::Qam16),
            t => Err(Error::Format(format!("unknown modulation tag {t}"))),
        }
    }
}

/// Slot geometry, channel statistics, and impairment levels for the
/// synthetic link simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// OFDM symbols per slot.
    pub l: usize,
    /// Subcarriers per symbol over the transmission band.
    pub k: usize,
    /// Receive antennas at the base station (single-antenna transmitter).
    pub m: usize,
    /// Extra adjacent subcarriers generated for the downstream prediction
    /// task; never transmitted on.
    pub k_ext: usize,
    /// 0-based symbol indices carrying pilots.
    pub pilot_symbols: Vec<usize>,
    /// Subcarrier stride between pilots within a pilot symbol.
    pub pilot_spacing: usize,
    /// First pilot subcarrier.
    pub pilot_offset: usize,
    /// Inclusive path-count interval for the clustered multipath generator.
    pub path_count_range: [usize; 2],
    /// Normalized Doppler per symbol; path Doppler is uniform in +/- this.
    pub max_doppler: f64,
    /// Normalized delay spread; path delays are uniform in [0, max_delay].
    pub max_delay: f64,
    /// Inclusive co-channel interferer count interval.
    pub interferer_count_range: [usize; 2],
    /// Interference-to-noise power ratio in dB, applied when interferers
    /// are present.
    pub inr_db: f64,
    /// Per-slot target SINR interval in dB for uniform sampling.
    pub sinr_range_db: [f64; 2],
    /// Payload modulation scheme.
    pub modulation: Modulation,
    /// Dataset RNG seed.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            l: 14,
            k: 32,
            m: 8,
            k_ext: 16,
            pilot_symbols: vec![2, 9],
            pilot_spacing: 6,
            pilot_offset: 0,
            path_count_range: [3, 8],
            max_doppler: 0.01,
            max_delay: 0.2,
            interferer_count_range: [0, 2],
            inr_db: 6.0,
            sinr_range_db: [0.0, 16.0],
            modulation: Modulation::Qpsk,
            seed: 1,
        }
    }
}

impl SimConfig {
    /// Number of pilot subcarriers per pilot symbol.
    pub fn pilot_subcarriers(&self) -> usize {
        if self.pilot_offset >= self.k {
            return 0;
        }
        (self.k - self.pilot_offset).div_ceil(self.pilot_spacing.max(1))
    }

    /// Total pilot REs per slot.
    pub fn k_p(&self) -> usize {
        self.pilot_symbols.len() * self.pilot_subcarriers()
    }

    /// Payload REs per slot.
    pub fn payload_res(&self) -> usize {
        self.l * self.k - self.k_p()
    }

    /// Subcarrier count of the generated channel grid (transmission band
    /// plus downstream extension).
    pub fn k_total(&self) -> usize {
        self.k + self.k_ext
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.l == 0 || self.k == 0 || self.m == 0 {
            return fail(format!("grid dims must be positive (L={}, K={}, M={})", self.l, self.k, self.m));
        }
        if self.pilot_symbols.is_empty() {
            return fail("at least one pilot symbol required".into());
        }
        let mut seen = std::collections::HashSet::new();
        for &s in &self.pilot_symbols {
            if s >= self.l {
                return fail(format!("pilot symbol {s} outside [0, {})", self.l));
            }
            if !seen.insert(s) {
                return fail(format!("duplicate pilot symbol {s}"));
            }
        }
        if self.pilot_spacing == 0 {
            return fail("pilot_spacing must be positive".into());
        }
        if self.pilot_offset >= self.k {
            return fail(format!("pilot_offset {} outside [0, {})", self.pilot_offset, self.k));
        }
        if self.k_p() == 0 {
            return fail("pilot pattern is empty".into());
        }
        if self.path_count_range[0] > self.path_count_range[1] || self.path_count_range[0] == 0 {
            return fail(format!("bad path_count_range {:?}", self.path_count_range));
        }
        if self.interferer_count_range[0] > self.interferer_count_range[1] {
            return fail(format!("bad interferer_count_range {:?}", self.interferer_count_range));
        }
        if !(0.0..1.0).contains(&self.max_delay) {
            return fail(format!("max_delay {} outside [0, 1)", self.max_delay));
        }
        if self.max_doppler < 0.0 {
            return fail("max_doppler must be non-negative".into());
        }
        if self.sinr_range_db[0] > self.sinr_range_db[1] {
            return fail(format!("bad sinr_range_db {:?}", self.sinr_range_db));
        }
        Ok(())
    }

    /// Canonical binary encoding, little-endian, fixed field order. Used in
    /// dataset headers and hashed into bundle manifests.
    pub fn encode(&self, out: &mut Vec<u8>) {
        let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        u32le(out, self.l);
        u32le(out, self.k);
        u32le(out, self.m);
        u32le(out, self.k_ext);
        u32le(out, self.pilot_symbols.len());
        for &s in &self.pilot_symbols {
            u32le(out, s);
        }
        u32le(out, self.pilot_spacing);
        u32le(out, self.pilot_offset);
        u32le(out, self.path_count_range[0]);
        u32le(out, self.path_count_range[1]);
        out.extend_from_slice(&self.max_doppler.to_le_bytes());
        out.extend_from_slice(&self.max_delay.to_le_bytes());
        u32le(out, self.interferer_count_range[0]);
        u32le(out, self.interferer_count_range[1]);
        out.extend_from_slice(&self.inr_db.to_le_bytes());
        out.extend_from_slice(&self.sinr_range_db[0].to_le_bytes());
        out.extend_from_slice(&self.sinr_range_db[1].to_le_bytes());
        out.extend_from_slice(&self.modulation.tag().to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
    }

    pub fn decode(r: &mut impl std::io::Read) -> Result<Self> {
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        let mut ru32 = |r: &mut dyn std::io::Read| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let l = ru32(r)? as usize;
        let k = ru32(r)? as usize;
        let m = ru32(r)? as usize;
        let k_ext = ru32(r)? as usize;
        let n_sym = ru32(r)? as usize;
        if n_sym > 4096 {
            return Err(Error::Format(format!("implausible pilot symbol count {n_sym}")));
        }
        let mut pilot_symbols = Vec::with_capacity(n_sym);
        for _ in 0..n_sym {
            pilot_symbols.push(ru32(r)? as usize);
        }
        let pilot_spacing = ru32(r)? as usize;
        let pilot_offset = ru32(r)? as usize;
        let path_lo = ru32(r)? as usize;
        let path_hi = ru32(r)? as usize;
        let mut rf64 = |r: &mut dyn std::io::Read| -> Result<f64> {
            r.read_exact(&mut u64buf)?;
            Ok(f64::from_le_bytes(u64buf))
        };
        let max_doppler = rf64(r)?;
        let max_delay = rf64(r)?;
        let intf_lo = ru32(r)? as usize;
        let intf_hi = ru32(r)? as usize;
        let inr_db = rf64(r)?;
        let sinr_lo = rf64(r)?;
        let sinr_hi = rf64(r)?;
        let modulation = Modulation::from_tag(ru32(r)?)?;
        r.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        let cfg = SimConfig {
            l,
            k,
            m,
            k_ext,
            pilot_symbols,
            pilot_spacing,
            pilot_offset,
            path_count_range: [path_lo, path_hi],
            max_doppler,
            max_delay,
            interferer_count_range: [intf_lo, intf_hi],
            inr_db,
            sinr_range_db: [sinr_lo, sinr_hi],
            modulation,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Stable 64-bit FNV-1a hash of the canonical encoding.
    pub fn hash(&self) -> u64 {
        let mut bytes = Vec::new();
        self.encode(&mut bytes);
        let mut h: u64 = 0xcbf29ce484222325;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// Optimizer and schedule knobs shared by all training phases.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip_norm: 5.0,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0
            || self.batch_size == 0
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.eps <= 0.0
            || self.grad_clip_norm <= 0.0
        {
            return Err(Error::InvalidConfig("bad training hyperparameters".into()));
        }
        Ok(())
    }

    pub fn with_epochs(&self, epochs: usize) -> Self {
        TrainConfig { epochs, ..self.clone() }
    }
}

/// Network size knobs. These are desk-scale defaults; nothing downstream
/// assumes the specific values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Hidden width of the CSI refinement network (two hidden layers).
    pub refine_hidden: usize,
    /// Hidden width of each per-RE NPI sub-network.
    pub npi_hidden: usize,
    /// Hidden width of the SINR-conditioned fusion network (two hidden layers).
    pub fusion_hidden: usize,
    /// Hidden width of the CSI completion network.
    pub completion_hidden: usize,
    /// Token width of the attention baseline.
    pub d_model: usize,
    /// Feed-forward width inside the attention block.
    pub d_ff: usize,
    /// Per-axis sinusoidal position features for the baseline (total 2x this).
    pub pos_dims: usize,
    /// Hidden width of the baseline decoder applied per token before pooling.
    pub baseline_head_hidden: usize,
    /// Point-network encoder output width (the fluctuation vector length).
    pub sinr_point_dim: usize,
    /// MLP block depth used by the SINR estimator branches.
    pub sinr_depth: usize,
    /// I/Q histogram bins per axis.
    pub histogram_bins: usize,
    /// Histogram half-range in RMS-normalized units.
    pub histogram_range: f64,
    /// Hidden width of the SINR combiner head.
    pub sinr_head_hidden: usize,
    /// Projection regularizer scale; effective epsilon is this times
    /// max(1, ||h||^2).
    pub projection_epsilon: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            refine_hidden: 256,
            npi_hidden: 128,
            fusion_hidden: 128,
            completion_hidden: 256,
            d_model: 64,
            d_ff: 128,
            pos_dims: 8,
            baseline_head_hidden: 256,
            sinr_point_dim: 64,
            sinr_depth: 2,
            histogram_bins: 32,
            histogram_range: 3.0,
            sinr_head_hidden: 64,
            projection_epsilon: 1e-12,
        }
    }
}

/// Per-phase epoch schedule. Phases differ in cost per slot, so they get
/// individual budgets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub refine_epochs: usize,
    pub npi1_epochs: usize,
    pub npi2_epochs: usize,
    pub sinr_epochs: usize,
    pub baseline_epochs: usize,
    pub clean_completion_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            refine_epochs: 25,
            npi1_epochs: 15,
            npi2_epochs: 12,
            sinr_epochs: 20,
            baseline_epochs: 10,
            clean_completion_epochs: 8,
        }
    }
}

/// Full run configuration as loaded from a TOML file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: Option<u32>,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub arch: ArchConfig,
    pub schedule: ScheduleConfig,
}

/// Config schema version accepted by [`RunConfig::from_toml`].
pub const CONFIG_VERSION: u32 = 1;

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config parse: {e}")))?;
        if let Some(v) = cfg.version {
            if v != CONFIG_VERSION {
                return Err(Error::InvalidConfig(format!(
                    "unsupported config version {v} (expected {CONFIG_VERSION})"
                )));
            }
        }
        cfg.sim.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}
