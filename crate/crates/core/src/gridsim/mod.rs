//! Synthetic MIMO-OFDM channel and slot simulation.
//!
//! One slot is an `L x K` time-frequency grid received on `M` antennas from
//! a single-antenna transmitter. A subset of REs carries known pilots; the
//! rest carry payload symbols. The received signal on every RE is
//! `y = h * x + w`, where `w` is the noise-plus-interference term built from
//! co-channel interferers plus AWGN, jointly scaled so each slot hits its
//! target average SINR exactly.

mod channel;
mod dataset;
mod modulation;
mod slot;

pub use channel::{generate_channel, synthesize_grid, PathParams, PDP_DECAY_FRACTION};
pub use dataset::{
    generate_dataset, Dataset, DatasetManifest, DatasetSpec, LoadOptions, SinrSampling, Split,
    SplitRatios,
};
pub use modulation::{modulate, random_qpsk, random_symbols};
pub use slot::simulate_slot;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Modulation, SimConfig};
use crate::{Error, Result};

/// RNG purposes, one stream per (slot, purpose) so generation order and
/// worker count never affect the draws.
pub mod streams {
    pub const CHANNEL: u64 = 0;
    pub const SLOT: u64 = 1;
    pub const SINR: u64 = 2;
    /// Streams per slot reserved for the purposes above.
    pub const STRIDE: u64 = 8;
}

/// Deterministic per-slot RNG stream.
pub fn slot_stream(seed: u64, slot_index: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot_index.wrapping_mul(streams::STRIDE).wrapping_add(purpose));
    rng
}

/// Standard normal via Box-Muller; two uniform draws per sample.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Circular complex Gaussian with unit variance (E|z|^2 = 1).
pub fn cnormal(rng: &mut impl Rng) -> Complex64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Complex64::new(normal(rng) * s, normal(rng) * s)
}

/// Pilot RE coordinates within the slot grid, sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotPattern {
    positions: Vec<(usize, usize)>,
}

impl PilotPattern {
    /// Builds the comb pattern `{(l, k) : l in pilot_symbols, k = offset + i*spacing < K}`.
    pub fn build(cfg: &SimConfig) -> Self {
        let mut symbols = cfg.pilot_symbols.clone();
        symbols.sort_unstable();
        let mut positions = Vec::with_capacity(cfg.k_p());
        for &l in &symbols {
            let mut k = cfg.pilot_offset;
            while k < cfg.k {
                positions.push((l, k));
                k += cfg.pilot_spacing;
            }
        }
        PilotPattern { positions }
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, l: usize, k: usize) -> bool {
        self.positions.binary_search(&(l, k)).is_ok()
    }

    /// Index of (l, k) within the pattern, if it is a pilot RE.
    pub fn index_of(&self, l: usize, k: usize) -> Option<usize> {
        self.positions.binary_search(&(l, k)).ok()
    }
}

/// True channel over one slot: `L x (K + K_ext) x M` complex tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrid {
    pub l: usize,
    pub k_total: usize,
    pub m: usize,
    /// Row-major `[l][k][m]`.
    pub data: Vec<Complex64>,
}

impl ChannelGrid {
    pub fn zeros(l: usize, k_total: usize, m: usize) -> Self {
        ChannelGrid { l, k_total, m, data: vec![Complex64::ZERO; l * k_total * m] }
    }

    /// Per-RE channel vector (length M).
    #[inline]
    pub fn at(&self, l: usize, k: usize) -> &[Complex64] {
        let base = (l * self.k_total + k) * self.m;
        &self.data[base..base + self.m]
    }

    #[inline]
    pub fn at_mut(&mut self, l: usize, k: usize) -> &mut [Complex64] {
        let base = (l * self.k_total + k) * self.m;
        &mut self.data[base..base + self.m]
    }

    /// Mean per-RE power `sum_m |h|^2` averaged over the grid.
    pub fn mean_re_power(&self) -> f64 {
        let res = (self.l * self.k_total) as f64;
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / res
    }
}

/// Everything the receiver observes in one slot, plus training labels.
#[derive(Debug, Clone)]
pub struct SlotObservation {
    /// Known pilot symbols, pattern order.
    pub x_p: Vec<Complex64>,
    /// Received pilots, `[K_p][M]` row-major.
    pub y_p: Vec<Complex64>,
    /// Received payload REs in row-major (l, k) order skipping pilots,
    /// `[L*K - K_p][M]`.
    pub y_d: Vec<Complex64>,
    /// Payload modulation for this slot (pilot REs are always QPSK).
    pub modulation: Modulation,
    pub labels: Option<SlotLabels>,
}

/// Train-time ground truth attached to a slot.
#[derive(Debug, Clone)]
pub struct SlotLabels {
    /// True channel over `L x (K + K_ext) x M`; dropped by filtered loads.
    pub h: Option<ChannelGrid>,
    /// True NPI over the transmission grid `[L][K][M]`; dropped by
    /// filtered loads.
    pub w: Option<Vec<Complex64>>,
    /// True NPI restricted to pilot REs, `[K_p][M]`; always present.
    pub w_pilot: Vec<Complex64>,
    /// Realized average SINR of the slot in dB (equals the target by
    /// construction).
    pub sinr_db: f64,
}

impl SlotObservation {
    pub fn k_p(&self) -> usize {
        self.x_p.len()
    }

    /// Received pilot vector at pattern index `r`.
    #[inline]
    pub fn y_p_at(&self, r: usize, m: usize) -> &[Complex64] {
        &self.y_p[r * m..(r + 1) * m]
    }

    /// Modulation on a given RE: pilots are QPSK, payload follows the slot
    /// scheme.
    pub fn re_modulation(&self, pattern: &PilotPattern, l: usize, k: usize) -> Modulation {
        if pattern.contains(l, k) {
            Modulation::Qpsk
        } else {
            self.modulation
        }
    }

    pub fn labels(&self) -> Result<&SlotLabels> {
        self.labels.as_ref().ok_or_else(|| Error::MissingPrerequisite("slot labels".into()))
    }
}
