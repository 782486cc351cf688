//! Classical channel estimation and the projection/NPI algebra.
//!
//! Everything here is a pure function over immutable inputs: least-squares
//! pilot estimation, separable linear interpolation, LMMSE with a separable
//! exponential time-frequency correlation model, the channel-subspace
//! projection pair, NPI extraction, and the NMSE metric. The transmitter is
//! single-antenna, so the per-RE channel is an M-vector and the projector
//! onto its span needs only a scalar inverse.

use num_complex::Complex64;

use crate::gridsim::PilotPattern;
use crate::{Error, Result};

/// Channel estimates at pilot REs, `[K_p][M]` row-major, pattern order.
#[derive(Debug, Clone)]
pub struct PilotEstimate {
    pub h_hat: Vec<Complex64>,
    pub pattern: PilotPattern,
    pub m: usize,
}

impl PilotEstimate {
    #[inline]
    pub fn at(&self, r: usize) -> &[Complex64] {
        &self.h_hat[r * self.m..(r + 1) * self.m]
    }

    pub fn k_p(&self) -> usize {
        self.pattern.len()
    }
}

/// Projectors onto the estimated channel subspace and its orthogonal
/// complement, both `M x M` row-major.
#[derive(Debug, Clone)]
pub struct ProjectionPair {
    pub p_ch: Vec<Complex64>,
    pub p_orth: Vec<Complex64>,
    pub epsilon: f64,
    /// Set when the estimate had (near-)zero norm and `p_ch` collapsed to 0.
    pub degenerate: bool,
}

/// NPI components in the channel subspace and its complement, `[K_p][M]`.
#[derive(Debug, Clone)]
pub struct NpiSplit {
    pub w_ch: Vec<Complex64>,
    pub w_orth: Vec<Complex64>,
    pub degenerate: Vec<bool>,
    pub m: usize,
}

impl NpiSplit {
    #[inline]
    pub fn ch_at(&self, r: usize) -> &[Complex64] {
        &self.w_ch[r * self.m..(r + 1) * self.m]
    }

    #[inline]
    pub fn orth_at(&self, r: usize) -> &[Complex64] {
        &self.w_orth[r * self.m..(r + 1) * self.m]
    }
}

/// Least-squares estimate per pilot RE: `h = y * conj(x) / |x|^2`.
pub fn ls_estimate(
    x_p: &[Complex64],
    y_p: &[Complex64],
    pattern: &PilotPattern,
    m: usize,
) -> Result<PilotEstimate> {
    let k_p = pattern.len();
    if x_p.len() != k_p || y_p.len() != k_p * m {
        return Err(Error::ShapeMismatch(format!(
            "ls_estimate: got {} pilots and {} rx entries for K_p={k_p}, M={m}",
            x_p.len(),
            y_p.len()
        )));
    }
    let mut h_hat = Vec::with_capacity(k_p * m);
    for (r, &x) in x_p.iter().enumerate() {
        let p = x.norm_sqr();
        if p <= 0.0 {
            return Err(Error::DegenerateInput(format!("zero pilot symbol at RE {r}")));
        }
        let c = x.conj() / p;
        for ym in &y_p[r * m..(r + 1) * m] {
            h_hat.push(ym * c);
        }
    }
    Ok(PilotEstimate { h_hat, pattern: pattern.clone(), m })
}

fn interp_1d(points: &[(usize, Complex64)], n: usize, out: &mut [Complex64]) {
    debug_assert!(!points.is_empty());
    if points.len() == 1 {
        out[..n].fill(points[0].1);
        return;
    }
    let mut seg = 0;
    for (k, slot) in out.iter_mut().enumerate().take(n) {
        if k <= points[0].0 {
            *slot = points[0].1;
        } else if k >= points[points.len() - 1].0 {
            *slot = points[points.len() - 1].1;
        } else {
            while points[seg + 1].0 < k {
                seg += 1;
            }
            let (x0, v0) = points[seg];
            let (x1, v1) = points[seg + 1];
            let t = (k - x0) as f64 / (x1 - x0) as f64;
            *slot = v0 + (v1 - v0) * t;
        }
    }
}

/// LS-plus-linear-interpolation over the full grid: 1-D in frequency within
/// each pilot symbol, then 1-D in time, constant extrapolation at the edges.
/// Output is `[L][K][M]` row-major.
pub fn linear_interpolate(est: &PilotEstimate, l_n: usize, k_n: usize) -> Result<Vec<Complex64>> {
    let m = est.m;
    let positions = est.pattern.positions();
    if positions.is_empty() {
        return Err(Error::DegenerateInput("no pilot REs to interpolate from".into()));
    }
    let mut symbols: Vec<usize> = positions.iter().map(|&(l, _)| l).collect();
    symbols.dedup();

    let mut out = vec![Complex64::ZERO; l_n * k_n * m];
    let mut per_symbol = vec![Complex64::ZERO; symbols.len() * k_n];
    let mut freq_points: Vec<(usize, Complex64)> = Vec::new();
    let mut time_points: Vec<(usize, Complex64)> = Vec::with_capacity(symbols.len());
    let mut time_line = vec![Complex64::ZERO; l_n];

    for mi in 0..m {
        // Frequency interpolation inside each pilot symbol.
        for (si, &sym) in symbols.iter().enumerate() {
            freq_points.clear();
            for (r, &(l, k)) in positions.iter().enumerate() {
                if l == sym {
                    freq_points.push((k, est.h_hat[r * m + mi]));
                }
            }
            interp_1d(&freq_points, k_n, &mut per_symbol[si * k_n..(si + 1) * k_n]);
        }
        // Time interpolation per subcarrier across pilot symbols.
        for k in 0..k_n {
            time_points.clear();
            for (si, &sym) in symbols.iter().enumerate() {
                time_points.push((sym, per_symbol[si * k_n + k]));
            }
            interp_1d(&time_points, l_n, &mut time_line);
            for (l, v) in time_line.iter().enumerate() {
                out[(l * k_n + k) * m + mi] = *v;
            }
        }
    }
    Ok(out)
}

/// LMMSE over the full grid from pilot estimates.
///
/// The correlation between REs (l, k) and (l', k') is modeled as
/// `rho_t^|l-l'| * rho_f^|k-k'|` with unit-variance channel coefficients;
/// the per-antenna estimate is `R_ap (R_pp + noise_var I)^-1 h_p`. The
/// symmetric solve is a Cholesky factorization; if it breaks down (e.g.
/// noise_var = 0 with duplicate pilots) the system is re-regularized with
/// 1e-9 on the diagonal and the result is flagged.
pub struct LmmseResult {
    pub grid: Vec<Complex64>,
    pub regularized: bool,
}

pub fn lmmse_estimate(
    est: &PilotEstimate,
    rho_t: f64,
    rho_f: f64,
    noise_var: f64,
    l_n: usize,
    k_n: usize,
) -> Result<LmmseResult> {
    if !(rho_t > 0.0 && rho_t <= 1.0 && rho_f > 0.0 && rho_f <= 1.0) {
        return Err(Error::InvalidConfig(format!("rho out of (0, 1]: rho_t={rho_t} rho_f={rho_f}")));
    }
    if noise_var < 0.0 {
        return Err(Error::InvalidConfig("negative noise variance".into()));
    }
    let positions = est.pattern.positions();
    let k_p = positions.len();
    let m = est.m;

    let corr = |a: (usize, usize), b: (usize, usize)| -> f64 {
        rho_t.powi((a.0 as i64 - b.0 as i64).unsigned_abs() as i32)
            * rho_f.powi((a.1 as i64 - b.1 as i64).unsigned_abs() as i32)
    };

    // R_pp + noise_var I
    let mut a = vec![0.0f64; k_p * k_p];
    for i in 0..k_p {
        for j in 0..k_p {
            a[i * k_p + j] = corr(positions[i], positions[j]);
        }
        a[i * k_p + i] += noise_var;
    }

    let mut regularized = false;
    let chol = match cholesky(&a, k_p) {
        Some(c) => c,
        None => {
            regularized = true;
            for i in 0..k_p {
                a[i * k_p + i] += 1e-9;
            }
            cholesky(&a, k_p).ok_or_else(|| {
                Error::DegenerateInput("LMMSE system singular even after regularization".into())
            })?
        }
    };

    // Weights w(q) = R_qp (R_pp + nI)^-1, one solve per query RE, shared
    // across antennas.
    let mut grid = vec![Complex64::ZERO; l_n * k_n * m];
    let mut r_q = vec![0.0f64; k_p];
    let mut wgt = vec![0.0f64; k_p];
    for l in 0..l_n {
        for k in 0..k_n {
            for (j, &p) in positions.iter().enumerate() {
                r_q[j] = corr((l, k), p);
            }
            cholesky_solve(&chol, k_p, &r_q, &mut wgt);
            let base = (l * k_n + k) * m;
            for mi in 0..m {
                let mut acc = Complex64::ZERO;
                for (j, &wj) in wgt.iter().enumerate() {
                    acc += est.h_hat[j * m + mi] * wj;
                }
                grid[base + mi] = acc;
            }
        }
    }
    Ok(LmmseResult { grid, regularized })
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// or None if a pivot is not strictly positive.
fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 1e-300 {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves A x = b given the Cholesky factor of A.
fn cholesky_solve(l: &[f64], n: usize, b: &[f64], x: &mut [f64]) {
    // forward: L y = b
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    // backward: L^T x = y
    for i in (0..n).rev() {
        let mut sum = x[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
}

/// Real SPD solve for external callers (ridge regression and friends):
/// returns x with A x = b, regularizing only if factorization fails.
pub fn spd_solve(a: &[f64], n: usize, b: &[f64]) -> Result<Vec<f64>> {
    let chol = match cholesky(a, n) {
        Some(c) => c,
        None => {
            let mut ar = a.to_vec();
            for i in 0..n {
                ar[i * n + i] += 1e-9;
            }
            cholesky(&ar, n)
                .ok_or_else(|| Error::DegenerateInput("SPD solve failed".into()))?
        }
    };
    let mut x = vec![0.0; n];
    cholesky_solve(&chol, n, b, &mut x);
    Ok(x)
}

/// Projection pair for one estimated channel vector.
///
/// `P_ch = h (h^H h + eps)^-1 h^H`, `P_orth = I - P_ch`. A zero estimate
/// returns `P_ch = 0`, `P_orth = I` with the degenerate flag set.
pub fn projection_matrices(h_hat: &[Complex64], epsilon_scale: f64) -> ProjectionPair {
    let m = h_hat.len();
    let norm_sq: f64 = h_hat.iter().map(|c| c.norm_sqr()).sum();
    let epsilon = epsilon_scale * norm_sq.max(1.0);
    let degenerate = norm_sq <= f64::MIN_POSITIVE;
    let mut p_ch = vec![Complex64::ZERO; m * m];
    if !degenerate {
        let inv = 1.0 / (norm_sq + epsilon);
        for i in 0..m {
            for j in 0..m {
                p_ch[i * m + j] = h_hat[i] * h_hat[j].conj() * inv;
            }
        }
    }
    let mut p_orth = vec![Complex64::ZERO; m * m];
    for i in 0..m {
        for j in 0..m {
            let id = if i == j { Complex64::ONE } else { Complex64::ZERO };
            p_orth[i * m + j] = id - p_ch[i * m + j];
        }
    }
    ProjectionPair { p_ch, p_orth, epsilon, degenerate }
}

/// NPI extraction at one RE: `w_ch = P_ch y - h x`, `w_orth = P_orth y`.
pub fn extract_npi(
    proj: &ProjectionPair,
    h_hat: &[Complex64],
    x: Complex64,
    y: &[Complex64],
) -> (Vec<Complex64>, Vec<Complex64>) {
    let m = h_hat.len();
    debug_assert_eq!(y.len(), m);
    debug_assert_eq!(proj.p_ch.len(), m * m);
    let mut w_ch = vec![Complex64::ZERO; m];
    let mut w_orth = vec![Complex64::ZERO; m];
    for i in 0..m {
        let mut acc_ch = Complex64::ZERO;
        let mut acc_orth = Complex64::ZERO;
        for j in 0..m {
            acc_ch += proj.p_ch[i * m + j] * y[j];
            acc_orth += proj.p_orth[i * m + j] * y[j];
        }
        w_ch[i] = acc_ch - h_hat[i] * x;
        w_orth[i] = acc_orth;
    }
    (w_ch, w_orth)
}

/// `||est - truth||_F^2 / ||truth||_F^2`.
pub fn nmse(estimate: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "nmse: {} vs {} entries",
            estimate.len(),
            truth.len()
        )));
    }
    let denom: f64 = truth.iter().map(|c| c.norm_sqr()).sum();
    if denom <= 0.0 {
        return Err(Error::DegenerateInput("nmse: zero-norm truth".into()));
    }
    let num: f64 = estimate.iter().zip(truth).map(|(e, t)| (e - t).norm_sqr()).sum();
    Ok(num / denom)
}

/// Mean of per-slot NMSE values.
pub fn batch_nmse(pairs: &[(&[Complex64], &[Complex64])]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::DegenerateInput("nmse over empty batch".into()));
    }
    let mut acc = 0.0;
    for (e, t) in pairs {
        acc += nmse(e, t)?;
    }
    Ok(acc / pairs.len() as f64)
}

/// Fits the separable exponential correlation model to channel realizations
/// by matching lag-1 empirical correlations along time and frequency.
///
/// The fit uses the real part of the normalized complex lag-1 correlation
/// (the projection of the data correlation onto the real exponential model
/// class), clamped into (0, 1]; a non-positive real part falls back to the
/// correlation magnitude.
pub fn fit_exponential_correlation(grids: &[&crate::gridsim::ChannelGrid]) -> (f64, f64) {
    let mut num_t = Complex64::ZERO;
    let mut num_f = Complex64::ZERO;
    let mut power = 0.0f64;
    for g in grids {
        for l in 0..g.l {
            for k in 0..g.k_total {
                let row = g.at(l, k);
                for (mi, &h) in row.iter().enumerate() {
                    power += h.norm_sqr();
                    if l + 1 < g.l {
                        num_t += g.at(l + 1, k)[mi] * h.conj();
                    }
                    if k + 1 < g.k_total {
                        num_f += g.at(l, k + 1)[mi] * h.conj();
                    }
                }
            }
        }
    }
    if power <= 0.0 {
        return (1.0, 1.0);
    }
    let pick = |c: Complex64| -> f64 {
        let r = c.re / power;
        let v = if r > 0.0 { r } else { (c / power).norm() };
        v.clamp(1e-6, 1.0)
    };
    (pick(num_t), pick(num_f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::gridsim::{cnormal, slot_stream};
    use rand::Rng;

    fn pattern_for(cfg: &SimConfig) -> PilotPattern {
        PilotPattern::build(cfg)
    }

    fn single_pilot_pattern() -> PilotPattern {
        let cfg = SimConfig {
            l: 1,
            k: 1,
            pilot_symbols: vec![0],
            pilot_spacing: 1,
            pilot_offset: 0,
            ..SimConfig::default()
        };
        pattern_for(&cfg)
    }

    // --- LS ---

    #[test]
    fn ls_unit_pilot_passthrough() {
        let p = single_pilot_pattern();
        let est = ls_estimate(
            &[Complex64::ONE],
            &[Complex64::new(2.0, 0.0), Complex64::new(0.0, 3.0)],
            &p,
            2,
        )
        .unwrap();
        assert_eq!(est.at(0)[0], Complex64::new(2.0, 0.0));
        assert_eq!(est.at(0)[1], Complex64::new(0.0, 3.0));
    }

    #[test]
    fn ls_noiseless_exactness() {
        let p = single_pilot_pattern();
        let x = Complex64::new(1.0, 1.0) * std::f64::consts::FRAC_1_SQRT_2;
        let h = [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)];
        let y: Vec<Complex64> = h.iter().map(|hv| hv * x).collect();
        let est = ls_estimate(&[x], &y, &p, 2).unwrap();
        for (a, b) in est.at(0).iter().zip(&h) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn ls_error_power_matches_snr() {
        // At 8 dB SNR the LS error NMSE is 10^-0.8 (Monte Carlo, 1e5 trials).
        let p = single_pilot_pattern();
        let m = 4;
        let mut rng = slot_stream(2024, 0, 0);
        let snr = 10f64.powf(0.8);
        let trials = 100_000;
        let mut err_acc = 0.0;
        let mut pow_acc = 0.0;
        for _ in 0..trials {
            let h: Vec<Complex64> = (0..m).map(|_| cnormal(&mut rng)).collect();
            let y: Vec<Complex64> =
                h.iter().map(|hv| hv + cnormal(&mut rng) / snr.sqrt()).collect();
            let est = ls_estimate(&[Complex64::ONE], &y, &p, m).unwrap();
            err_acc += est.at(0).iter().zip(&h).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            pow_acc += h.iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
        let ratio = err_acc / pow_acc;
        let expect = 10f64.powf(-0.8);
        assert!((ratio / expect - 1.0).abs() < 0.05, "LS error ratio {ratio} vs {expect}");
    }

    #[test]
    fn ls_rejects_zero_pilot() {
        let p = single_pilot_pattern();
        assert!(matches!(
            ls_estimate(&[Complex64::ZERO], &[Complex64::ONE], &p, 1),
            Err(Error::DegenerateInput(_))
        ));
    }

    // --- Linear interpolation ---

    fn two_pilot_freq_pattern() -> PilotPattern {
        let cfg = SimConfig {
            l: 1,
            k: 7,
            pilot_symbols: vec![0],
            pilot_spacing: 6,
            pilot_offset: 0,
            ..SimConfig::default()
        };
        pattern_for(&cfg)
    }

    #[test]
    fn interp_midpoint() {
        let p = two_pilot_freq_pattern();
        let est = PilotEstimate {
            h_hat: vec![Complex64::ONE, Complex64::ZERO],
            pattern: p,
            m: 1,
        };
        let grid = linear_interpolate(&est, 1, 7).unwrap();
        assert!((grid[3] - Complex64::new(0.5, 0.0)).norm() < 1e-12);
        assert!((grid[0] - Complex64::ONE).norm() < 1e-12);
        assert!((grid[6]).norm() < 1e-12);
    }

    #[test]
    fn interp_single_symbol_copies_profile() {
        let p = two_pilot_freq_pattern();
        let est = PilotEstimate {
            h_hat: vec![Complex64::ONE, Complex64::new(0.0, 1.0)],
            pattern: p,
            m: 1,
        };
        let grid = linear_interpolate(&est, 3, 7).unwrap();
        for l in 1..3 {
            for k in 0..7 {
                assert!((grid[l * 7 + k] - grid[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn interp_exact_on_affine_channel() {
        // Channel linear in l and k is reconstructed exactly inside the
        // pilot hull; constant extrapolation matches because the pilots
        // cover the full span here.
        let cfg = SimConfig {
            l: 5,
            k: 13,
            m: 2,
            pilot_symbols: vec![0, 4],
            pilot_spacing: 4,
            pilot_offset: 0,
            ..SimConfig::default()
        };
        let p = pattern_for(&cfg);
        let affine = |l: usize, k: usize, mi: usize| {
            Complex64::new(0.3 + 0.1 * l as f64 + 0.05 * k as f64 + mi as f64, 0.2 - 0.02 * k as f64)
        };
        let mut h_hat = Vec::new();
        for &(l, k) in p.positions() {
            for mi in 0..2 {
                h_hat.push(affine(l, k, mi));
            }
        }
        let est = PilotEstimate { h_hat, pattern: p, m: 2 };
        let grid = linear_interpolate(&est, 5, 13).unwrap();
        for l in 0..5 {
            for k in 0..13 {
                for mi in 0..2 {
                    let got = grid[(l * 13 + k) * 2 + mi];
                    let want = affine(l, k, mi);
                    assert!((got - want).norm() < 1e-10, "l={l} k={k} m={mi}");
                }
            }
        }
    }

    // --- LMMSE ---

    #[test]
    fn lmmse_interpolates_pilots_at_zero_noise() {
        let cfg = SimConfig {
            l: 3,
            k: 9,
            m: 1,
            pilot_symbols: vec![1],
            pilot_spacing: 4,
            pilot_offset: 0,
            ..SimConfig::default()
        };
        let p = pattern_for(&cfg);
        let h_hat = vec![
            Complex64::new(1.0, 0.2),
            Complex64::new(-0.5, 0.1),
            Complex64::new(0.3, -0.9),
        ];
        let est = PilotEstimate { h_hat: h_hat.clone(), pattern: p.clone(), m: 1 };
        let res = lmmse_estimate(&est, 0.9, 0.8, 0.0, 3, 9).unwrap();
        assert!(!res.regularized);
        for (r, &(l, k)) in p.positions().iter().enumerate() {
            let got = res.grid[l * 9 + k];
            assert!((got - h_hat[r]).norm() < 1e-8, "pilot RE {r}");
        }
    }

    #[test]
    fn lmmse_shrinks_to_zero_at_huge_noise() {
        let p = single_pilot_pattern();
        let est = PilotEstimate { h_hat: vec![Complex64::ONE], pattern: p, m: 1 };
        let res = lmmse_estimate(&est, 0.9, 0.9, 1e12, 1, 1).unwrap();
        assert!(res.grid[0].norm() < 1e-9);
    }

    #[test]
    fn lmmse_scalar_wiener_weight() {
        // One pilot at k=0, query k=1, rho_f = 0.5, noise 1:
        // weight = 0.5 / (1 + 1) = 0.25.
        let cfg = SimConfig {
            l: 1,
            k: 2,
            m: 1,
            pilot_symbols: vec![0],
            pilot_spacing: 2,
            pilot_offset: 0,
            ..SimConfig::default()
        };
        let p = pattern_for(&cfg);
        let est = PilotEstimate { h_hat: vec![Complex64::ONE], pattern: p, m: 1 };
        let res = lmmse_estimate(&est, 1.0, 0.5, 1.0, 1, 2).unwrap();
        assert!((res.grid[1] - Complex64::new(0.25, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn lmmse_regularizes_singular_system() {
        // rho_t = 1 with two pilots on the same subcarrier makes R_pp
        // singular at zero noise; the solve retries with a ridge and flags
        // the result.
        let cfg = SimConfig {
            l: 2,
            k: 1,
            m: 1,
            pilot_symbols: vec![0, 1],
            pilot_spacing: 1,
            pilot_offset: 0,
            ..SimConfig::default()
        };
        let p = pattern_for(&cfg);
        let est = PilotEstimate {
            h_hat: vec![Complex64::ONE, Complex64::ONE],
            pattern: p,
            m: 1,
        };
        let res = lmmse_estimate(&est, 1.0, 0.9, 0.0, 2, 1).unwrap();
        assert!(res.regularized);
        assert!(res.grid.iter().all(|c| c.norm().is_finite()));
    }

    #[test]
    fn batch_nmse_averages_per_slot() {
        let a_est = vec![Complex64::ZERO; 2];
        let a_truth = vec![Complex64::ONE; 2];
        let b_est = vec![Complex64::ONE; 2];
        let b_truth = vec![Complex64::ONE; 2];
        let pairs: Vec<(&[Complex64], &[Complex64])> =
            vec![(&a_est, &a_truth), (&b_est, &b_truth)];
        // Slot NMSEs are 1 and 0; the batch metric is their mean.
        assert!((batch_nmse(&pairs).unwrap() - 0.5).abs() < 1e-12);
        assert!(batch_nmse(&[]).is_err());
    }

    #[test]
    fn lmmse_rejects_bad_rho() {
        let p = single_pilot_pattern();
        let est = PilotEstimate { h_hat: vec![Complex64::ONE], pattern: p, m: 1 };
        assert!(lmmse_estimate(&est, 0.0, 0.5, 1.0, 1, 1).is_err());
        assert!(lmmse_estimate(&est, 0.5, 1.5, 1.0, 1, 1).is_err());
    }

    // --- Projections ---

    #[test]
    fn projection_axis_aligned() {
        let h = [Complex64::ONE, Complex64::ZERO];
        let proj = projection_matrices(&h, 0.0);
        assert!((proj.p_ch[0] - Complex64::ONE).norm() < 1e-12);
        assert!(proj.p_ch[1].norm() < 1e-12);
        assert!(proj.p_ch[2].norm() < 1e-12);
        assert!(proj.p_ch[3].norm() < 1e-12);
        assert!((proj.p_orth[3] - Complex64::ONE).norm() < 1e-12);
        assert!(!proj.degenerate);
    }

    #[test]
    fn projection_complex_case() {
        // h = (1, j): P_ch = [[0.5, -0.5j], [0.5j, 0.5]].
        let h = [Complex64::ONE, Complex64::new(0.0, 1.0)];
        let proj = projection_matrices(&h, 0.0);
        let expect = [
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, -0.5),
            Complex64::new(0.0, 0.5),
            Complex64::new(0.5, 0.0),
        ];
        for (a, b) in proj.p_ch.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn projection_degenerate_contract() {
        let h = [Complex64::ZERO; 3];
        let proj = projection_matrices(&h, 1e-12);
        assert!(proj.degenerate);
        assert!(proj.p_ch.iter().all(|c| c.norm() == 0.0));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { Complex64::ONE } else { Complex64::ZERO };
                assert_eq!(proj.p_orth[i * 3 + j], want);
            }
        }
    }

    #[test]
    fn projection_algebra_random() {
        // P^2 = P, P^H = P, P h = h, P_ch + P_orth = I, trace P_ch = 1.
        let mut rng = slot_stream(77, 0, 0);
        for &m in &[2usize, 8, 32] {
            for _ in 0..50 {
                let h: Vec<Complex64> = (0..m).map(|_| cnormal(&mut rng)).collect();
                let proj = projection_matrices(&h, 0.0);
                let p = &proj.p_ch;
                let mut max_err = 0.0f64;
                // idempotence and hermiticity
                for i in 0..m {
                    for j in 0..m {
                        let mut pp = Complex64::ZERO;
                        for k in 0..m {
                            pp += p[i * m + k] * p[k * m + j];
                        }
                        max_err = max_err.max((pp - p[i * m + j]).norm());
                        max_err = max_err.max((p[i * m + j] - p[j * m + i].conj()).norm());
                        let id = if i == j { Complex64::ONE } else { Complex64::ZERO };
                        max_err = max_err
                            .max((p[i * m + j] + proj.p_orth[i * m + j] - id).norm());
                    }
                }
                // P h = h
                for i in 0..m {
                    let mut ph = Complex64::ZERO;
                    for j in 0..m {
                        ph += p[i * m + j] * h[j];
                    }
                    max_err = max_err.max((ph - h[i]).norm() / h[i].norm().max(1.0));
                }
                let trace: Complex64 = (0..m).map(|i| p[i * m + i]).sum();
                max_err = max_err.max((trace - Complex64::ONE).norm());
                assert!(max_err < 1e-10, "projection algebra error {max_err} at M={m}");
            }
        }
    }

    // --- NPI extraction ---

    #[test]
    fn extract_zero_for_perfect_noiseless() {
        let mut rng = slot_stream(8, 0, 0);
        let h: Vec<Complex64> = (0..4).map(|_| cnormal(&mut rng)).collect();
        let x = Complex64::new(0.6, -0.8);
        let y: Vec<Complex64> = h.iter().map(|hv| hv * x).collect();
        let proj = projection_matrices(&h, 0.0);
        let (w_ch, w_orth) = extract_npi(&proj, &h, x, &y);
        assert!(w_ch.iter().all(|c| c.norm() < 1e-10));
        assert!(w_orth.iter().all(|c| c.norm() < 1e-10));
    }

    #[test]
    fn extract_decomposition_identity() {
        // With perfect CSI: w_ch + w_orth = w, since P_ch h = h.
        let mut rng = slot_stream(9, 0, 0);
        for _ in 0..100 {
            let m = 6;
            let h: Vec<Complex64> = (0..m).map(|_| cnormal(&mut rng)).collect();
            let w: Vec<Complex64> = (0..m).map(|_| cnormal(&mut rng)).collect();
            let x = Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU);
            let y: Vec<Complex64> = h.iter().zip(&w).map(|(hv, wv)| hv * x + wv).collect();
            let proj = projection_matrices(&h, 0.0);
            let (w_ch, w_orth) = extract_npi(&proj, &h, x, &y);
            for i in 0..m {
                let sum = w_ch[i] + w_orth[i];
                assert!((sum - w[i]).norm() < 1e-10, "component {i}");
            }
        }
    }

    #[test]
    fn extract_orthogonal_only_npi() {
        let h = [Complex64::ONE, Complex64::ZERO];
        let x = Complex64::ONE;
        let y = [Complex64::ONE, Complex64::ONE];
        let proj = projection_matrices(&h, 0.0);
        let (w_ch, w_orth) = extract_npi(&proj, &h, x, &y);
        assert!(w_ch[0].norm() < 1e-12 && w_ch[1].norm() < 1e-12);
        assert!((w_orth[1] - Complex64::ONE).norm() < 1e-12);
        assert!(w_orth[0].norm() < 1e-12);
    }

    // --- NMSE ---

    #[test]
    fn nmse_identities() {
        let t = vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.0)];
        assert!(nmse(&t, &t).unwrap() < 1e-15);
        let zero = vec![Complex64::ZERO; 2];
        assert!((nmse(&zero, &t).unwrap() - 1.0).abs() < 1e-12);
        let double: Vec<Complex64> = t.iter().map(|c| c * 2.0).collect();
        assert!((nmse(&double, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_scale_identity() {
        // nmse(c*t, t) = |c - 1|^2 for any complex scalar c.
        let mut rng = slot_stream(5, 0, 0);
        let t: Vec<Complex64> = (0..32).map(|_| cnormal(&mut rng)).collect();
        for _ in 0..10 {
            let c = cnormal(&mut rng);
            let scaled: Vec<Complex64> = t.iter().map(|v| v * c).collect();
            let got = nmse(&scaled, &t).unwrap();
            let want = (c - Complex64::ONE).norm_sqr();
            assert!((got - want).abs() < 1e-10 * want.max(1.0));
        }
    }

    #[test]
    fn nmse_rejects_zero_truth() {
        let z = vec![Complex64::ZERO; 3];
        let e = vec![Complex64::ONE; 3];
        assert!(matches!(nmse(&e, &z), Err(Error::DegenerateInput(_))));
    }

    // --- correlation fit ---

    #[test]
    fn fit_recovers_separable_exponential() {
        // Synthesize a field with exactly separable exponential covariance:
        // x = A G B^T with A, B Cholesky factors of the per-axis
        // correlation matrices and G iid complex normal.
        let (l_n, k_n) = (40usize, 40usize);
        let (rt, rf) = (0.9f64, 0.7f64);
        let corr_mat = |n: usize, rho: f64| -> Vec<f64> {
            let mut r = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    r[i * n + j] = rho.powi((i as i64 - j as i64).unsigned_abs() as i32);
                }
            }
            r
        };
        let a = cholesky(&corr_mat(l_n, rt), l_n).unwrap();
        let b = cholesky(&corr_mat(k_n, rf), k_n).unwrap();
        let mut rng = slot_stream(31, 0, 0);
        let mut grids = Vec::new();
        for _ in 0..30 {
            let g_iid: Vec<Complex64> = (0..l_n * k_n).map(|_| cnormal(&mut rng)).collect();
            // rows: y = A * G
            let mut y = vec![Complex64::ZERO; l_n * k_n];
            for l in 0..l_n {
                for lp in 0..=l {
                    let alp = a[l * l_n + lp];
                    if alp != 0.0 {
                        for k in 0..k_n {
                            y[l * k_n + k] += g_iid[lp * k_n + k] * alp;
                        }
                    }
                }
            }
            // cols: x = y * B^T
            let mut grid = crate::gridsim::ChannelGrid::zeros(l_n, k_n, 1);
            for l in 0..l_n {
                for k in 0..k_n {
                    let mut acc = Complex64::ZERO;
                    for kp in 0..=k {
                        acc += y[l * k_n + kp] * b[k * k_n + kp];
                    }
                    grid.at_mut(l, k)[0] = acc;
                }
            }
            grids.push(grid);
        }
        let refs: Vec<&crate::gridsim::ChannelGrid> = grids.iter().collect();
        let (ft, ff) = fit_exponential_correlation(&refs);
        assert!((ft - rt).abs() < 0.05, "rho_t fit {ft} vs {rt}");
        assert!((ff - rf).abs() < 0.05, "rho_f fit {ff} vs {rf}");
    }
}
