//! The NPI suppression pipeline.
//!
//! Inference chain per slot: LS pilot estimation, residual CSI refinement,
//! per-RE projection split of the received pilots into channel-subspace and
//! orthogonal NPI components, learned NPI estimation with SINR-conditioned
//! fusion, subtraction and LS re-estimation, and full-grid CSI completion.
//! The attention-based completion baseline lives here too, sharing the
//! dataset and loss conventions.
//!
//! All networks apply shared weights across pilot REs (sub-networks and
//! fusion) or across antennas (completion), so parameter counts are
//! independent of the pilot count and antenna count.

mod bundle;
mod graph;
mod train;

pub use bundle::{load_bundle, load_role, save_bundle, save_role, BundleManifest, BundleRole};
pub use graph::step2_gradient_check;
pub use train::{
    train_clean_completion, train_refine, train_step1_npi, train_step2_completion_only,
    train_step2_joint, train_transformer, LossHistory,
};

use num_complex::Complex64;
use rand::Rng;

use crate::config::{ArchConfig, SimConfig};
use crate::gridsim::{PilotPattern, SlotObservation};
use crate::linest::{self, NpiSplit, PilotEstimate};
use crate::neural::{
    attention, dense, dense_zero, deinterleave, interleave, Activation, Layer, NetworkModel,
    PoolKind, Tensor,
};
use crate::{Error, Result};

/// Grid and pattern dimensions a bundle was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineDims {
    pub l: usize,
    pub k: usize,
    pub m: usize,
    pub k_p: usize,
}

impl PipelineDims {
    pub fn of(cfg: &SimConfig) -> Self {
        PipelineDims { l: cfg.l, k: cfg.k, m: cfg.m, k_p: cfg.k_p() }
    }
}

/// The trainable components of the suppression pipeline.
#[derive(Debug, Clone)]
pub struct PipelineBundle {
    pub refine: NetworkModel,
    pub npi_ch: NetworkModel,
    pub npi_orth: NetworkModel,
    pub fusion: NetworkModel,
    pub completion: NetworkModel,
    /// Projection regularizer scale (effective epsilon is this times
    /// max(1, ||h||^2)).
    pub epsilon_scale: f64,
    pub dims: PipelineDims,
}

/// Where the pipeline gets its SINR conditioning value.
pub enum SinrSource<'a> {
    /// True per-slot label (training / diagnostics).
    Label,
    /// Trained estimator operating on the received slot.
    Estimator(&'a crate::sinrest::SinrModel),
    /// Caller-chosen constant.
    Fixed(f64),
}

/// NPI value injected before subtraction, for ablations.
pub enum NpiVariant<'a> {
    /// The trained estimate.
    Trained,
    /// Zero NPI: subtraction becomes a no-op.
    Zero,
    /// True NPI at pilot REs, `[K_p][M]` row-major.
    Oracle(&'a [Complex64]),
}

// --- builders ---

pub fn build_refine_net(dims: &PipelineDims, arch: &ArchConfig, rng: &mut impl Rng) -> NetworkModel {
    let io = 2 * dims.m * dims.k_p;
    NetworkModel::new(vec![
        dense(io, arch.refine_hidden, Activation::Relu, rng),
        dense(arch.refine_hidden, arch.refine_hidden, Activation::Relu, rng),
        dense_zero(arch.refine_hidden, io, Activation::Linear),
    ])
}

pub fn build_npi_subnet(dims: &PipelineDims, arch: &ArchConfig, rng: &mut impl Rng) -> NetworkModel {
    let io = 2 * dims.m;
    NetworkModel::new(vec![
        dense(io, arch.npi_hidden, Activation::Relu, rng),
        dense(arch.npi_hidden, io, Activation::Linear, rng),
    ])
}

pub fn build_fusion_net(dims: &PipelineDims, arch: &ArchConfig, rng: &mut impl Rng) -> NetworkModel {
    let io = 2 * dims.m;
    NetworkModel::new(vec![
        dense(2 * io + 1, arch.fusion_hidden, Activation::Relu, rng),
        dense(arch.fusion_hidden, arch.fusion_hidden, Activation::Relu, rng),
        dense_zero(arch.fusion_hidden, io, Activation::Linear),
    ])
}

pub fn build_completion_net(
    dims: &PipelineDims,
    arch: &ArchConfig,
    rng: &mut impl Rng,
) -> NetworkModel {
    NetworkModel::new(vec![
        dense(2 * dims.k_p, arch.completion_hidden, Activation::Relu, rng),
        dense(arch.completion_hidden, 2 * dims.l * dims.k, Activation::Linear, rng),
    ])
}

/// Attention baseline: token embedding over per-RE features plus sinusoidal
/// 2-D position encoding, one self-attention block, a per-token decoder, and
/// an order-invariant sum pool feeding the full-grid head. The head starts
/// at zero so the initial output is the zero grid (loss exactly 1); a
/// random wide head makes the initial loss large enough that clipped
/// first steps kill the ReLU stack.
pub fn build_baseline_net(dims: &PipelineDims, arch: &ArchConfig, rng: &mut impl Rng) -> NetworkModel {
    let token = 2 * dims.m + 2 * arch.pos_dims;
    NetworkModel::new(vec![
        dense(token, arch.d_model, Activation::Relu, rng),
        attention(arch.d_model, arch.d_ff, rng),
        dense(arch.d_model, arch.baseline_head_hidden, Activation::Relu, rng),
        Layer::PoolRows(PoolKind::Sum),
        dense_zero(arch.baseline_head_hidden, 2 * dims.l * dims.k * dims.m, Activation::Linear),
    ])
}

/// Fresh bundle with seeded initialization. Residual heads (refinement
/// delta, fusion output) start at zero, so the initial pipeline is exactly
/// LS + an untrained completion.
pub fn new_bundle(cfg: &SimConfig, arch: &ArchConfig, rng: &mut impl Rng) -> PipelineBundle {
    let dims = PipelineDims::of(cfg);
    PipelineBundle {
        refine: build_refine_net(&dims, arch, rng),
        npi_ch: build_npi_subnet(&dims, arch, rng),
        npi_orth: build_npi_subnet(&dims, arch, rng),
        fusion: build_fusion_net(&dims, arch, rng),
        completion: build_completion_net(&dims, arch, rng),
        epsilon_scale: arch.projection_epsilon,
        dims,
    }
}

// --- shared feature plumbing ---

/// RMS of a real feature vector with a tiny floor so zero input stays finite.
pub(crate) fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64 + 1e-12).sqrt()
}

/// Sinusoidal position features for one axis.
pub(crate) fn pos_encoding(pos: usize, dims: usize, out: &mut Vec<f64>) {
    // Wavelengths span 1..=64 geometrically over dims/2 frequencies.
    let pairs = dims / 2;
    for i in 0..pairs {
        let lambda = 64f64.powf(i as f64 / pairs.max(1) as f64);
        let angle = pos as f64 / lambda;
        out.push(angle.sin());
        out.push(angle.cos());
    }
}

/// Token matrix for the attention baseline: per pilot RE the interleaved
/// antenna features followed by the position encodings of (l, k).
pub(crate) fn baseline_tokens(est: &PilotEstimate, arch: &ArchConfig) -> Tensor {
    let k_p = est.k_p();
    let token = 2 * est.m + 2 * arch.pos_dims;
    let mut data = Vec::with_capacity(k_p * token);
    for (r, &(l, k)) in est.pattern.positions().iter().enumerate() {
        for c in est.at(r) {
            data.push(c.re);
            data.push(c.im);
        }
        pos_encoding(l, arch.pos_dims, &mut data);
        pos_encoding(k, arch.pos_dims, &mut data);
    }
    Tensor::matrix(k_p, token, data)
}

/// Per-antenna completion input rows `[M][2*K_p]` from a pilot estimate.
pub(crate) fn completion_rows(est: &PilotEstimate) -> Vec<f64> {
    let (k_p, m) = (est.k_p(), est.m);
    let mut z = vec![0.0; m * 2 * k_p];
    for r in 0..k_p {
        let row = est.at(r);
        for (a, c) in row.iter().enumerate() {
            z[a * 2 * k_p + 2 * r] = c.re;
            z[a * 2 * k_p + 2 * r + 1] = c.im;
        }
    }
    z
}

/// Reassembles `[M][2*L*K]` completion rows into an `[L][K][M]` grid.
pub(crate) fn rows_to_grid(rows: &[f64], l_n: usize, k_n: usize, m: usize) -> Vec<Complex64> {
    let per = 2 * l_n * k_n;
    let mut grid = vec![Complex64::ZERO; l_n * k_n * m];
    for a in 0..m {
        let row = &rows[a * per..(a + 1) * per];
        for idx in 0..l_n * k_n {
            grid[idx * m + a] = Complex64::new(row[2 * idx], row[2 * idx + 1]);
        }
    }
    grid
}

// --- pipeline operations ---

/// Residual CSI refinement: `H_hat = H_ini + net(feat(H_ini))`, with the
/// feature vector RMS-normalized and the scale reapplied at the output.
pub fn refine_csi(est: &PilotEstimate, net: &NetworkModel) -> Result<PilotEstimate> {
    let feat = interleave(&est.h_hat);
    let scale = rms(&feat);
    let input: Vec<f64> = feat.iter().map(|v| v / scale).collect();
    let out = net.infer(&Tensor::vector(input))?;
    if !out.all_finite() {
        return Err(Error::NonFinite("refinement output".into()));
    }
    let delta = deinterleave(&out.data);
    let h_hat: Vec<Complex64> =
        est.h_hat.iter().zip(&delta).map(|(h, d)| h + d * scale).collect();
    Ok(PilotEstimate { h_hat, pattern: est.pattern.clone(), m: est.m })
}

/// Projection split of the received pilots around the refined estimate.
pub fn split_npi(slot: &SlotObservation, h_hat: &PilotEstimate, epsilon_scale: f64) -> NpiSplit {
    let (k_p, m) = (h_hat.k_p(), h_hat.m);
    let mut w_ch = Vec::with_capacity(k_p * m);
    let mut w_orth = Vec::with_capacity(k_p * m);
    let mut degenerate = Vec::with_capacity(k_p);
    for r in 0..k_p {
        let h = h_hat.at(r);
        let proj = linest::projection_matrices(h, epsilon_scale);
        let (ch, orth) = linest::extract_npi(&proj, h, slot.x_p[r], slot.y_p_at(r, m));
        degenerate.push(proj.degenerate);
        w_ch.extend(ch);
        w_orth.extend(orth);
    }
    NpiSplit { w_ch, w_orth, degenerate, m }
}

/// Feature matrices `[K_p][2M]` for both split components.
pub(crate) fn split_feats(split: &NpiSplit) -> (Tensor, Tensor) {
    let k_p = split.w_ch.len() / split.m;
    let ch = Tensor::matrix(k_p, 2 * split.m, interleave(&split.w_ch));
    let orth = Tensor::matrix(k_p, 2 * split.m, interleave(&split.w_orth));
    (ch, orth)
}

/// SINR value scaled into the fusion feature range.
pub(crate) fn sinr_feature(sinr_db: f64) -> f64 {
    sinr_db / 20.0
}

pub(crate) fn fusion_input(u: &Tensor, v: &Tensor, sinr_feat: f64) -> Tensor {
    let rows = u.shape[0];
    let d = u.shape[1];
    let mut data = Vec::with_capacity(rows * (2 * d + 1));
    for r in 0..rows {
        data.extend_from_slice(&u.data[r * d..(r + 1) * d]);
        data.extend_from_slice(&v.data[r * d..(r + 1) * d]);
        data.push(sinr_feat);
    }
    Tensor::matrix(rows, 2 * d + 1, data)
}

/// Learned NPI estimate at every pilot RE, `[K_p][M]`.
pub fn estimate_npi(
    split: &NpiSplit,
    sinr_db: f64,
    bundle: &PipelineBundle,
) -> Result<Vec<Complex64>> {
    if !sinr_db.is_finite() {
        return Err(Error::NonFinite("SINR input".into()));
    }
    let (ch_feat, orth_feat) = split_feats(split);
    let u = bundle.npi_ch.infer(&ch_feat)?;
    let v = bundle.npi_orth.infer(&orth_feat)?;
    let fused = bundle.fusion.infer(&fusion_input(&u, &v, sinr_feature(sinr_db)))?;
    if !fused.all_finite() {
        return Err(Error::NonFinite("NPI estimate".into()));
    }
    Ok(deinterleave(&fused.data))
}

/// Subtracts the NPI estimate from the received pilots and re-runs LS.
pub fn subtract_and_reestimate(
    slot: &SlotObservation,
    w_tilde: &[Complex64],
    pattern: &PilotPattern,
    m: usize,
) -> Result<PilotEstimate> {
    if w_tilde.len() != slot.y_p.len() {
        return Err(Error::ShapeMismatch(format!(
            "NPI estimate has {} entries, received pilots {}",
            w_tilde.len(),
            slot.y_p.len()
        )));
    }
    let cleaned: Vec<Complex64> =
        slot.y_p.iter().zip(w_tilde).map(|(y, w)| y - w).collect();
    linest::ls_estimate(&slot.x_p, &cleaned, pattern, m)
}

/// Full-grid CSI from pilot estimates, per antenna with shared weights and
/// slot-level RMS normalization applied at input and inverted at output.
pub fn complete_csi(
    est: &PilotEstimate,
    net: &NetworkModel,
    l_n: usize,
    k_n: usize,
) -> Result<Vec<Complex64>> {
    let z = completion_rows(est);
    let scale = rms(&z);
    let input: Vec<f64> = z.iter().map(|v| v / scale).collect();
    let out = net.infer(&Tensor::matrix(est.m, 2 * est.k_p(), input))?;
    if !out.all_finite() {
        return Err(Error::NonFinite("completion output".into()));
    }
    let rows: Vec<f64> = out.data.iter().map(|v| v * scale).collect();
    Ok(rows_to_grid(&rows, l_n, k_n, est.m))
}

/// Attention-baseline CSI recovery from LS pilot estimates.
pub fn transformer_baseline(
    est: &PilotEstimate,
    net: &NetworkModel,
    arch: &ArchConfig,
    l_n: usize,
    k_n: usize,
) -> Result<Vec<Complex64>> {
    let tokens = baseline_tokens(est, arch);
    let out = net.infer(&tokens)?;
    if !out.all_finite() {
        return Err(Error::NonFinite("baseline output".into()));
    }
    Ok(rows_to_grid(&out.data, l_n, k_n, est.m))
}

/// Runs the full suppression pipeline on one slot, returning the
/// reconstructed `[L][K][M]` grid.
pub fn run_pipeline(
    slot: &SlotObservation,
    bundle: &PipelineBundle,
    pattern: &PilotPattern,
    sinr: SinrSource<'_>,
) -> Result<Vec<Complex64>> {
    run_pipeline_variant(slot, bundle, pattern, sinr, NpiVariant::Trained)
}

/// Pipeline with an NPI override for bracket ablations.
pub fn run_pipeline_variant(
    slot: &SlotObservation,
    bundle: &PipelineBundle,
    pattern: &PilotPattern,
    sinr: SinrSource<'_>,
    variant: NpiVariant<'_>,
) -> Result<Vec<Complex64>> {
    let est = pilot_estimate_variant(slot, bundle, pattern, sinr, variant)?;
    complete_csi(&est, &bundle.completion, bundle.dims.l, bundle.dims.k)
}

/// The pilot-RE estimate the completion stage sees, exposed separately so
/// the suppression stages can be measured before completion.
pub fn pilot_estimate_variant(
    slot: &SlotObservation,
    bundle: &PipelineBundle,
    pattern: &PilotPattern,
    sinr: SinrSource<'_>,
    variant: NpiVariant<'_>,
) -> Result<PilotEstimate> {
    let m = bundle.dims.m;
    let h_ini = linest::ls_estimate(&slot.x_p, &slot.y_p, pattern, m)?;
    match variant {
        NpiVariant::Zero => subtract_and_reestimate(slot, &vec![Complex64::ZERO; slot.y_p.len()], pattern, m),
        NpiVariant::Oracle(w_pilot) => subtract_and_reestimate(slot, w_pilot, pattern, m),
        NpiVariant::Trained => {
            let refined = refine_csi(&h_ini, &bundle.refine)?;
            let split = split_npi(slot, &refined, bundle.epsilon_scale);
            let sinr_db = match sinr {
                SinrSource::Label => slot.labels()?.sinr_db,
                SinrSource::Estimator(model) => crate::sinrest::estimate_sinr(slot, model)?,
                SinrSource::Fixed(v) => v,
            };
            let w_tilde = estimate_npi(&split, sinr_db, bundle)?;
            subtract_and_reestimate(slot, &w_tilde, pattern, m)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ArchConfig, SimConfig};
    use crate::gridsim::{generate_channel, simulate_slot, slot_stream, streams, cnormal};

    fn small_cfg() -> SimConfig {
        SimConfig {
            l: 4,
            k: 12,
            m: 4,
            k_ext: 4,
            pilot_symbols: vec![0, 3],
            pilot_spacing: 4,
            interferer_count_range: [1, 1],
            ..SimConfig::default()
        }
    }

    fn small_arch() -> ArchConfig {
        ArchConfig {
            refine_hidden: 32,
            npi_hidden: 16,
            fusion_hidden: 16,
            completion_hidden: 32,
            d_model: 16,
            d_ff: 24,
            pos_dims: 4,
            baseline_head_hidden: 32,
            ..ArchConfig::default()
        }
    }

    fn make_slot(cfg: &SimConfig, idx: u64, sinr_db: f64) -> (SlotObservation, PilotPattern) {
        let mut ch_rng = slot_stream(cfg.seed, idx, streams::CHANNEL);
        let h = generate_channel(cfg, &mut ch_rng);
        let pattern = PilotPattern::build(cfg);
        let mut s_rng = slot_stream(cfg.seed, idx, streams::SLOT);
        (simulate_slot(&h, &pattern, cfg, sinr_db, &mut s_rng), pattern)
    }

    #[test]
    fn refine_is_identity_at_init() {
        // The final refinement layer is zero-initialized, so a fresh bundle
        // refines to exactly H_ini.
        let cfg = small_cfg();
        let arch = small_arch();
        let mut rng = slot_stream(1, 0, 0);
        let bundle = new_bundle(&cfg, &arch, &mut rng);
        let (slot, pattern) = make_slot(&cfg, 0, 8.0);
        let h_ini = linest::ls_estimate(&slot.x_p, &slot.y_p, &pattern, cfg.m).unwrap();
        let refined = refine_csi(&h_ini, &bundle.refine).unwrap();
        for (a, b) in refined.h_hat.iter().zip(&h_ini.h_hat) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn fresh_bundle_estimates_zero_npi() {
        let cfg = small_cfg();
        let arch = small_arch();
        let mut rng = slot_stream(2, 0, 0);
        let bundle = new_bundle(&cfg, &arch, &mut rng);
        let (slot, pattern) = make_slot(&cfg, 1, 4.0);
        let h_ini = linest::ls_estimate(&slot.x_p, &slot.y_p, &pattern, cfg.m).unwrap();
        let split = split_npi(&slot, &h_ini, bundle.epsilon_scale);
        let w_tilde = estimate_npi(&split, 4.0, &bundle).unwrap();
        assert!(w_tilde.iter().all(|c| c.norm() < 1e-12));
        // Zero estimate means subtraction is a no-op.
        let est = subtract_and_reestimate(&slot, &w_tilde, &pattern, cfg.m).unwrap();
        for (a, b) in est.h_hat.iter().zip(&h_ini.h_hat) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn split_decomposition_with_perfect_csi() {
        let cfg = small_cfg();
        let (slot, pattern) = make_slot(&cfg, 2, 0.0);
        let labels = slot.labels.as_ref().unwrap();
        let h = labels.h.as_ref().unwrap();
        let mut truth = Vec::new();
        for &(l, k) in pattern.positions() {
            truth.extend_from_slice(h.at(l, k));
        }
        let perfect = PilotEstimate { h_hat: truth, pattern: pattern.clone(), m: cfg.m };
        let split = split_npi(&slot, &perfect, 0.0);
        for r in 0..pattern.len() {
            for (i, w) in labels.w_pilot[r * cfg.m..(r + 1) * cfg.m].iter().enumerate() {
                let sum = split.ch_at(r)[i] + split.orth_at(r)[i];
                assert!((sum - w).norm() < 1e-10, "RE {r} antenna {i}");
            }
        }
    }

    #[test]
    fn noiseless_perfect_split_is_zero() {
        let mut cfg = small_cfg();
        cfg.interferer_count_range = [0, 0];
        let (slot, pattern) = make_slot(&cfg, 3, f64::INFINITY);
        let labels = slot.labels.as_ref().unwrap();
        let h = labels.h.as_ref().unwrap();
        let mut truth = Vec::new();
        for &(l, k) in pattern.positions() {
            truth.extend_from_slice(h.at(l, k));
        }
        let perfect = PilotEstimate { h_hat: truth, pattern: pattern.clone(), m: cfg.m };
        let split = split_npi(&slot, &perfect, 0.0);
        assert!(split.w_ch.iter().all(|c| c.norm() < 1e-9));
        assert!(split.w_orth.iter().all(|c| c.norm() < 1e-9));
    }

    #[test]
    fn degenerate_estimate_flags_and_routes_to_orth() {
        let cfg = small_cfg();
        let (slot, pattern) = make_slot(&cfg, 4, 8.0);
        let mut h_hat = linest::ls_estimate(&slot.x_p, &slot.y_p, &pattern, cfg.m).unwrap();
        for v in &mut h_hat.h_hat[0..cfg.m] {
            *v = Complex64::ZERO;
        }
        let split = split_npi(&slot, &h_hat, 1e-12);
        assert!(split.degenerate[0]);
        assert!(!split.degenerate[1]);
        // With P_ch = 0 the orthogonal component is y itself and the channel
        // component is -h*x = 0.
        for i in 0..cfg.m {
            assert!((split.orth_at(0)[i] - slot.y_p_at(0, cfg.m)[i]).norm() < 1e-12);
            assert!(split.ch_at(0)[i].norm() < 1e-12);
        }
    }

    #[test]
    fn oracle_npi_gives_exact_pilot_recovery() {
        let cfg = small_cfg();
        let arch = small_arch();
        let mut rng = slot_stream(3, 0, 0);
        let bundle = new_bundle(&cfg, &arch, &mut rng);
        let (slot, pattern) = make_slot(&cfg, 5, 0.0);
        let labels = slot.labels.as_ref().unwrap();
        let est = pilot_estimate_variant(
            &slot,
            &bundle,
            &pattern,
            SinrSource::Label,
            NpiVariant::Oracle(&labels.w_pilot),
        )
        .unwrap();
        let h = labels.h.as_ref().unwrap();
        for (r, &(l, k)) in pattern.positions().iter().enumerate() {
            for (i, hv) in h.at(l, k).iter().enumerate() {
                assert!(
                    (est.at(r)[i] - hv).norm() < 1e-9 * hv.norm().max(1.0),
                    "RE {r} antenna {i}"
                );
            }
        }
    }

    #[test]
    fn untrained_completion_maps_consistent_shapes() {
        let cfg = small_cfg();
        let arch = small_arch();
        let mut rng = slot_stream(4, 0, 0);
        let bundle = new_bundle(&cfg, &arch, &mut rng);
        let (slot, pattern) = make_slot(&cfg, 6, 8.0);
        let grid =
            run_pipeline(&slot, &bundle, &pattern, SinrSource::Label).unwrap();
        assert_eq!(grid.len(), cfg.l * cfg.k * cfg.m);
        // Determinism: byte-identical on re-run.
        let grid2 = run_pipeline(&slot, &bundle, &pattern, SinrSource::Label).unwrap();
        assert_eq!(grid, grid2);
    }

    #[test]
    fn zero_completion_net_gives_unit_nmse() {
        let cfg = small_cfg();
        let arch = small_arch();
        let mut rng = slot_stream(5, 0, 0);
        let mut bundle = new_bundle(&cfg, &arch, &mut rng);
        // Zero every completion parameter: output grid is 0, NMSE = 1.
        for layer in &mut bundle.completion.layers {
            for s in layer.param_slices_mut() {
                s.fill(0.0);
            }
        }
        let (slot, pattern) = make_slot(&cfg, 7, 8.0);
        let grid = run_pipeline(&slot, &bundle, &pattern, SinrSource::Label).unwrap();
        let labels = slot.labels.as_ref().unwrap();
        let h = labels.h.as_ref().unwrap();
        let mut truth = Vec::with_capacity(grid.len());
        for l in 0..cfg.l {
            for k in 0..cfg.k {
                truth.extend_from_slice(h.at(l, k));
            }
        }
        let err = linest::nmse(&grid, &truth).unwrap();
        assert!((err - 1.0).abs() < 1e-12);
    }

    #[test]
    fn baseline_single_token_and_permutation_invariance() {
        let cfg = SimConfig {
            l: 2,
            k: 4,
            m: 2,
            k_ext: 0,
            pilot_symbols: vec![0, 1],
            pilot_spacing: 2,
            ..SimConfig::default()
        };
        let arch = small_arch();
        let dims = PipelineDims::of(&cfg);
        let mut rng = slot_stream(6, 0, 0);
        let net = build_baseline_net(&dims, &arch, &mut rng);
        let pattern = PilotPattern::build(&cfg);
        let mut rng2 = slot_stream(7, 0, 0);
        let h_hat: Vec<Complex64> =
            (0..pattern.len() * cfg.m).map(|_| cnormal(&mut rng2)).collect();
        let est = PilotEstimate { h_hat, pattern: pattern.clone(), m: cfg.m };
        let out = transformer_baseline(&est, &net, &arch, cfg.l, cfg.k).unwrap();

        // Permute tokens (features and positions travel together): the sum
        // pool makes the output identical.
        let tokens = baseline_tokens(&est, &arch);
        let t = tokens.shape[0];
        let d = tokens.shape[1];
        let perm: Vec<usize> = (0..t).rev().collect();
        let mut permuted = vec![0.0; t * d];
        for (dst, &src) in perm.iter().enumerate() {
            permuted[dst * d..(dst + 1) * d].copy_from_slice(&tokens.data[src * d..(src + 1) * d]);
        }
        let out_perm = net.infer(&Tensor::matrix(t, d, permuted)).unwrap();
        let direct = net.infer(&tokens).unwrap();
        for (a, b) in direct.data.iter().zip(&out_perm.data) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(out.len(), cfg.l * cfg.k * cfg.m);
    }
}
