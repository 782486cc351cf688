//! Gray-mapped QPSK and 16-QAM with unit average power.
//!
//! QPSK bit pair (b0, b1): I = 1 - 2*b0, Q = 1 - 2*b1, scaled by 1/sqrt(2):
//!
//! ```text
//!   00 -> (+1+j)/sqrt(2)    01 -> (+1-j)/sqrt(2)
//!   10 -> (-1+j)/sqrt(2)    11 -> (-1-j)/sqrt(2)
//! ```
//!
//! 16-QAM nibble (b0, b1, b2, b3): (b0, b1) Gray-select the I level and
//! (b2, b3) the Q level from {00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3},
//! scaled by 1/sqrt(10).

use num_complex::Complex64;
use rand::Rng;

use crate::config::Modulation;
use crate::{Error, Result};

const QPSK_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn qam16_level(b_hi: u8, b_lo: u8) -> f64 {
    match (b_hi, b_lo) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

/// Maps a bit sequence to constellation symbols.
pub fn modulate(bits: &[u8], scheme: Modulation) -> Result<Vec<Complex64>> {
    let bps = scheme.bits_per_symbol();
    if bits.len() % bps != 0 {
        return Err(Error::ShapeMismatch(format!(
            "bit count {} not divisible by {} ({:?})",
            bits.len(),
            bps,
            scheme
        )));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(Error::ShapeMismatch(format!("bit value {b} outside {{0, 1}}")));
    }
    let symbols = bits
        .chunks_exact(bps)
        .map(|c| match scheme {
            Modulation::Qpsk => Complex64::new(
                (1.0 - 2.0 * c[0] as f64) * QPSK_SCALE,
                (1.0 - 2.0 * c[1] as f64) * QPSK_SCALE,
            ),
            Modulation::Qam16 => {
                let scale = 1.0 / 10f64.sqrt();
                Complex64::new(
                    qam16_level(c[0], c[1]) * scale,
                    qam16_level(c[2], c[3]) * scale,
                )
            }
        })
        .collect();
    Ok(symbols)
}

/// Draws `n` random symbols of the given scheme.
pub fn random_symbols(rng: &mut impl Rng, scheme: Modulation, n: usize) -> Vec<Complex64> {
    let bps = scheme.bits_per_symbol();
    let bits: Vec<u8> = (0..n * bps).map(|_| rng.random_range(0..2u8)).collect();
    modulate(&bits, scheme).expect("generated bit count is divisible")
}

/// Draws `n` random unit-power QPSK symbols.
pub fn random_qpsk(rng: &mut impl Rng, n: usize) -> Vec<Complex64> {
    random_symbols(rng, Modulation::Qpsk, n)
}
