//! Clustered-multipath channel synthesis.
//!
//! Each slot channel is a sum of P plane-wave paths:
//!
//! ```text
//! h[l][k][m] = sum_p g_p * exp(j*phi_p) * exp(-j*pi*m*sin(theta_p))
//!                        * exp(-j*2*pi*k*tau_p) * exp(+j*2*pi*l*nu_p)
//! ```
//!
//! with angles uniform in [-pi/2, pi/2], delays uniform in [0, max_delay],
//! Doppler uniform in +/- max_doppler, and amplitudes from an exponential
//! power-delay profile renormalized per slot so that sum_p g_p^2 = 1. This
//! makes the expected per-RE power equal to M.

use num_complex::Complex64;
use rand::Rng;
use std::f64::consts::{PI, TAU};

use crate::config::SimConfig;

use super::ChannelGrid;

/// Power-delay profile decay constant as a fraction of `max_delay`.
pub const PDP_DECAY_FRACTION: f64 = 1.0 / 3.0;

/// One propagation path of the clustered multipath model.
#[derive(Debug, Clone, Copy)]
pub struct PathParams {
    pub gain: f64,
    pub phase: f64,
    /// sin(theta) of the angle of arrival.
    pub sin_aoa: f64,
    /// Normalized delay in [0, 1).
    pub delay: f64,
    /// Normalized Doppler per symbol.
    pub doppler: f64,
}

/// Deterministic synthesis of a channel grid from explicit path parameters.
pub fn synthesize_grid(paths: &[PathParams], l: usize, k_total: usize, m: usize) -> ChannelGrid {
    let mut grid = ChannelGrid::zeros(l, k_total, m);
    let mut ant = vec![Complex64::ZERO; m];
    let mut freq = vec![Complex64::ZERO; k_total];
    let mut time = vec![Complex64::ZERO; l];
    for p in paths {
        let amp = Complex64::from_polar(p.gain, p.phase);
        for (mi, a) in ant.iter_mut().enumerate() {
            *a = Complex64::from_polar(1.0, -PI * mi as f64 * p.sin_aoa);
        }
        for (k, f) in freq.iter_mut().enumerate() {
            *f = Complex64::from_polar(1.0, -TAU * k as f64 * p.delay);
        }
        for (li, t) in time.iter_mut().enumerate() {
            *t = amp * Complex64::from_polar(1.0, TAU * li as f64 * p.doppler);
        }
        for li in 0..l {
            for k in 0..k_total {
                let c = time[li] * freq[k];
                let row = grid.at_mut(li, k);
                for (mi, h) in row.iter_mut().enumerate() {
                    *h += c * ant[mi];
                }
            }
        }
    }
    grid
}

/// Draws path parameters under `cfg` and normalizes sum g^2 = 1.
pub fn draw_paths(cfg: &SimConfig, rng: &mut impl Rng) -> Vec<PathParams> {
    let count = rng.random_range(cfg.path_count_range[0]..=cfg.path_count_range[1]);
    let tau0 = cfg.max_delay * PDP_DECAY_FRACTION;
    let mut paths: Vec<PathParams> = (0..count)
        .map(|_| {
            let sin_aoa = (rng.random::<f64>() - 0.5) * PI;
            let delay = rng.random::<f64>() * cfg.max_delay;
            let doppler = (2.0 * rng.random::<f64>() - 1.0) * cfg.max_doppler;
            let phase = rng.random::<f64>() * TAU;
            let gain = if tau0 > 0.0 { (-delay / tau0).exp().sqrt() } else { 1.0 };
            PathParams { gain, phase, sin_aoa: sin_aoa.sin(), delay, doppler }
        })
        .collect();
    let norm = paths.iter().map(|p| p.gain * p.gain).sum::<f64>().sqrt();
    for p in &mut paths {
        p.gain /= norm;
    }
    paths
}

/// Random channel over the full grid (transmission band plus extension).
pub fn generate_channel(cfg: &SimConfig, rng: &mut impl Rng) -> ChannelGrid {
    synthesize_grid(&draw_paths(cfg, rng), cfg.l, cfg.k_total(), cfg.m)
}

/// Random interferer channel; interference only exists on the
/// transmission band.
pub(super) fn generate_interferer_channel(cfg: &SimConfig, rng: &mut impl Rng) -> ChannelGrid {
    synthesize_grid(&draw_paths(cfg, rng), cfg.l, cfg.k, cfg.m)
}
