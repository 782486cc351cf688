//! Slot transmission under calibrated noise-plus-interference.

use num_complex::Complex64;
use rand::Rng;

use crate::config::SimConfig;

use super::channel::generate_interferer_channel;
use super::modulation::{random_qpsk, random_symbols};
use super::{cnormal, ChannelGrid, PilotPattern, SlotLabels, SlotObservation};

/// Simulates one slot through `h`.
///
/// Pilots are unit-power QPSK; payload symbols follow `cfg.modulation`.
/// The NPI term is a sum of co-channel interferer signals through their own
/// channels plus AWGN; interference and noise are jointly scaled so the
/// realized slot SINR equals `target_sinr_db` exactly and the
/// interference-to-noise ratio equals `cfg.inr_db` whenever at least one
/// interferer is active. Passing `f64::INFINITY` disables the NPI term
/// entirely.
///
/// Draw order from `rng` is fixed: pilots, payload bits, interferer count,
/// per-interferer channel and symbol stream, then noise.
pub fn simulate_slot(
    h: &ChannelGrid,
    pattern: &PilotPattern,
    cfg: &SimConfig,
    target_sinr_db: f64,
    rng: &mut impl Rng,
) -> SlotObservation {
    assert_eq!(h.l, cfg.l, "channel symbol count");
    assert_eq!(h.k_total, cfg.k_total(), "channel subcarrier count");
    assert_eq!(h.m, cfg.m, "channel antenna count");

    let (l_n, k_n, m_n) = (cfg.l, cfg.k, cfg.m);
    let k_p = pattern.len();

    // Transmitted symbol per RE over the transmission band.
    let x_p = random_qpsk(rng, k_p);
    let payload = random_symbols(rng, cfg.modulation, l_n * k_n - k_p);
    let mut x = vec![Complex64::ZERO; l_n * k_n];
    let mut payload_iter = payload.iter();
    for l in 0..l_n {
        for k in 0..k_n {
            x[l * k_n + k] = match pattern.index_of(l, k) {
                Some(r) => x_p[r],
                None => *payload_iter.next().expect("payload symbol count"),
            };
        }
    }

    // Clean receive signal and its total power.
    let mut y = vec![Complex64::ZERO; l_n * k_n * m_n];
    let mut signal_power = 0.0;
    for l in 0..l_n {
        for k in 0..k_n {
            let hv = h.at(l, k);
            let xs = x[l * k_n + k];
            let base = (l * k_n + k) * m_n;
            for m in 0..m_n {
                let v = hv[m] * xs;
                signal_power += v.norm_sqr();
                y[base + m] = v;
            }
        }
    }

    // NPI construction: raw interference + raw noise, then exact joint
    // scaling to hit the SINR and INR targets.
    let n_interferers =
        rng.random_range(cfg.interferer_count_range[0]..=cfg.interferer_count_range[1]);
    let mut w = vec![Complex64::ZERO; l_n * k_n * m_n];
    if target_sinr_db.is_finite() {
        let mut interference = vec![Complex64::ZERO; l_n * k_n * m_n];
        for _ in 0..n_interferers {
            let hi = generate_interferer_channel(cfg, rng);
            let si = random_qpsk(rng, l_n * k_n);
            for l in 0..l_n {
                for k in 0..k_n {
                    let hv = hi.at(l, k);
                    let s = si[l * k_n + k];
                    let base = (l * k_n + k) * m_n;
                    for m in 0..m_n {
                        interference[base + m] += hv[m] * s;
                    }
                }
            }
        }
        let noise: Vec<Complex64> = (0..l_n * k_n * m_n).map(|_| cnormal(rng)).collect();

        let p_interference = interference.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let p_noise = noise.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let npi_target = signal_power / 10f64.powf(target_sinr_db / 10.0);
        // The component ratio pins scale_i/scale_n; the joint scale then
        // absorbs the interference-noise cross term so the realized total
        // NPI power hits the target exactly.
        let (scale_i, scale_n) = if n_interferers >= 1 && p_interference > 0.0 {
            let inr = 10f64.powf(cfg.inr_db / 10.0);
            let ratio = (inr * p_noise / p_interference).sqrt();
            let cross: f64 =
                interference.iter().zip(&noise).map(|(a, b)| (a.conj() * b).re).sum();
            let total = ratio * ratio * p_interference + p_noise + 2.0 * ratio * cross;
            let b = (npi_target / total).sqrt();
            (ratio * b, b)
        } else {
            (0.0, (npi_target / p_noise).sqrt())
        };
        for i in 0..w.len() {
            w[i] = scale_i * interference[i] + scale_n * noise[i];
        }
    }

    for i in 0..y.len() {
        y[i] += w[i];
    }

    // Split received grid into pilot and payload REs.
    let mut y_p = Vec::with_capacity(k_p * m_n);
    let mut y_d = Vec::with_capacity((l_n * k_n - k_p) * m_n);
    let mut w_pilot = Vec::with_capacity(k_p * m_n);
    for l in 0..l_n {
        for k in 0..k_n {
            let base = (l * k_n + k) * m_n;
            if pattern.contains(l, k) {
                y_p.extend_from_slice(&y[base..base + m_n]);
                w_pilot.extend_from_slice(&w[base..base + m_n]);
            } else {
                y_d.extend_from_slice(&y[base..base + m_n]);
            }
        }
    }
    // Pattern order is lexicographic, so the pilot rows collected in grid
    // order already match pattern indexing.

    SlotObservation {
        x_p,
        y_p,
        y_d,
        modulation: cfg.modulation,
        labels: Some(SlotLabels {
            h: Some(h.clone()),
            w: Some(w),
            w_pilot,
            sinr_db: target_sinr_db,
        }),
    }
}
