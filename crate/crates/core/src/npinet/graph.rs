//! Differentiable composites for the training phases.
//!
//! The trainable stages (sub-networks, fusion, completion) are chained
//! through fixed linear signal-processing maps: complex subtraction, the
//! per-RE LS rescale, and the slot RMS normalization around the completion
//! network. Gradients through the RMS scale are exact: for
//! `o = r * f(z / r)` with `r = sqrt(mean(z^2) + eps)`,
//!
//! ```text
//! dL/dz_i = gin_i / r + z_i / (N * r) * S,
//! S = sum_j dL/do_j * f_j - (1/r) * sum_k gin_k * in_k,
//! ```
//!
//! where `gin = J_f^T (dL/do * r)` is the network input gradient under the
//! upstream gradient that also produces the parameter gradients. Projection
//! matrices and the refined estimate they come from are constants here;
//! nothing differentiates through the projector build.

use num_complex::Complex64;

use crate::config::{ArchConfig, SimConfig};
use crate::gridsim::{ChannelGrid, PilotPattern, SlotObservation};
use crate::linest;
use crate::neural::{
    composite_gradient_check, deinterleave, interleave, GradCheckReport, Grads, NetworkModel,
    Tensor, FD_STEP,
};
use crate::{Error, Result};

use super::{
    completion_rows, fusion_input, new_bundle, rms, sinr_feature, split_feats, split_npi,
    PipelineBundle, PipelineDims,
};

/// Target rows `[M][2*L*K]` for completion-style outputs, from the true
/// channel restricted to the transmission band.
pub(crate) fn grid_target_rows(h: &ChannelGrid, l_n: usize, k_n: usize) -> Vec<f64> {
    let m = h.m;
    let mut rows = vec![0.0; m * 2 * l_n * k_n];
    for l in 0..l_n {
        for k in 0..k_n {
            let hv = h.at(l, k);
            for (a, c) in hv.iter().enumerate() {
                let base = a * 2 * l_n * k_n + 2 * (l * k_n + k);
                rows[base] = c.re;
                rows[base + 1] = c.im;
            }
        }
    }
    rows
}

/// True channel at pilot REs, `[K_p][M]` row-major.
pub(crate) fn pilot_truth(h: &ChannelGrid, pattern: &PilotPattern) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(pattern.len() * h.m);
    for &(l, k) in pattern.positions() {
        out.extend_from_slice(h.at(l, k));
    }
    out
}

// --- refinement graph ---

pub(crate) struct RefinePrep {
    pub input: Tensor,
    pub feat: Vec<f64>,
    pub scale: f64,
    pub target_feat: Vec<f64>,
    pub target_norm_sq: f64,
}

pub(crate) fn refine_prep(
    slot: &SlotObservation,
    pattern: &PilotPattern,
    m: usize,
) -> Result<RefinePrep> {
    let est = linest::ls_estimate(&slot.x_p, &slot.y_p, pattern, m)?;
    let feat = interleave(&est.h_hat);
    let scale = rms(&feat);
    let input = Tensor::vector(feat.iter().map(|v| v / scale).collect());
    let labels = slot.labels()?;
    let h = labels.h.as_ref().ok_or_else(|| Error::MissingPrerequisite("H label".into()))?;
    let target_feat = interleave(&pilot_truth(h, pattern));
    let target_norm_sq: f64 = target_feat.iter().map(|v| v * v).sum();
    if target_norm_sq <= 0.0 {
        return Err(Error::DegenerateInput("zero-power channel label".into()));
    }
    Ok(RefinePrep { input, feat, scale, target_feat, target_norm_sq })
}

/// Per-slot refinement loss and gradient: NMSE of the refined pilot CSI.
/// Accumulates into `grads`.
pub(crate) fn refine_loss_grads(
    net: &NetworkModel,
    prep: &RefinePrep,
    grads: &mut Grads,
) -> Result<f64> {
    let (out, caches) = net.forward(&prep.input)?;
    let mut loss = 0.0;
    let mut dout = vec![0.0; out.len()];
    for i in 0..out.len() {
        let refined = prep.feat[i] + prep.scale * out.data[i];
        let diff = refined - prep.target_feat[i];
        loss += diff * diff;
        dout[i] = 2.0 * diff * prep.scale / prep.target_norm_sq;
    }
    loss /= prep.target_norm_sq;
    net.backward_acc(&caches, &Tensor::vector(dout), grads)?;
    Ok(loss)
}

// --- suppression graphs (step 1 and step 2) ---

/// Per-slot constants for the NPI training phases: the projection split
/// around the frozen refined estimate plus targets.
pub(crate) struct SuppressionPrep {
    pub ch_feat: Tensor,
    pub orth_feat: Tensor,
    pub y_p: Vec<Complex64>,
    /// LS rescale coefficient `conj(x)/|x|^2` per pilot RE.
    pub ls_coeff: Vec<Complex64>,
    pub sinr_db: f64,
    /// Step-1 target: true NPI features `[K_p][2M]`.
    pub w_feat: Vec<f64>,
    pub w_norm_sq: f64,
    /// Step-2 target: true channel rows `[M][2LK]`; empty when the full
    /// grid label was not loaded.
    pub target_rows: Vec<f64>,
    pub target_norm_sq: f64,
}

pub(crate) fn suppression_prep(
    slot: &SlotObservation,
    pattern: &PilotPattern,
    bundle: &PipelineBundle,
    with_grid_target: bool,
) -> Result<SuppressionPrep> {
    let m = bundle.dims.m;
    let h_ini = linest::ls_estimate(&slot.x_p, &slot.y_p, pattern, m)?;
    let refined = super::refine_csi(&h_ini, &bundle.refine)?;
    let split = split_npi(slot, &refined, bundle.epsilon_scale);
    let (ch_feat, orth_feat) = split_feats(&split);
    let labels = slot.labels()?;
    let w_feat = interleave(&labels.w_pilot);
    let w_norm_sq: f64 = w_feat.iter().map(|v| v * v).sum();
    let ls_coeff: Vec<Complex64> =
        slot.x_p.iter().map(|x| x.conj() / x.norm_sqr()).collect();
    let (target_rows, target_norm_sq) = if with_grid_target {
        let h = labels.h.as_ref().ok_or_else(|| Error::MissingPrerequisite("H label".into()))?;
        let rows = grid_target_rows(h, bundle.dims.l, bundle.dims.k);
        let norm: f64 = rows.iter().map(|v| v * v).sum();
        (rows, norm)
    } else {
        (Vec::new(), 0.0)
    };
    Ok(SuppressionPrep {
        ch_feat,
        orth_feat,
        y_p: slot.y_p.clone(),
        ls_coeff,
        sinr_db: labels.sinr_db,
        w_feat,
        w_norm_sq,
        target_rows,
        target_norm_sq,
    })
}

/// Runs the sub-networks and fusion, returning the fused output and caches.
struct FusionTrace {
    fused: Tensor,
    u_caches: Vec<crate::neural::LayerCache>,
    v_caches: Vec<crate::neural::LayerCache>,
    f_caches: Vec<crate::neural::LayerCache>,
}

fn fusion_forward(
    npi_ch: &NetworkModel,
    npi_orth: &NetworkModel,
    fusion: &NetworkModel,
    prep: &SuppressionPrep,
    sinr_feat: f64,
) -> Result<FusionTrace> {
    let (u, u_caches) = npi_ch.forward(&prep.ch_feat)?;
    let (v, v_caches) = npi_orth.forward(&prep.orth_feat)?;
    let (fused, f_caches) = fusion.forward(&fusion_input(&u, &v, sinr_feat))?;
    Ok(FusionTrace { fused, u_caches, v_caches, f_caches })
}

/// Backpropagates a gradient on the fused output into the three networks,
/// accumulating parameter gradients.
fn fusion_backward(
    npi_ch: &NetworkModel,
    npi_orth: &NetworkModel,
    fusion: &NetworkModel,
    trace: &FusionTrace,
    dfused: &Tensor,
    g_ch: &mut Grads,
    g_orth: &mut Grads,
    g_fus: &mut Grads,
) -> Result<()> {
    let dfin = fusion.backward_acc(&trace.f_caches, dfused, g_fus)?;
    // fusion input rows are [u | v | sinr]; the sinr column is data.
    let rows = dfin.shape[0];
    let d = (dfin.shape[1] - 1) / 2;
    let mut du = vec![0.0; rows * d];
    let mut dv = vec![0.0; rows * d];
    for r in 0..rows {
        let row = &dfin.data[r * (2 * d + 1)..(r + 1) * (2 * d + 1)];
        du[r * d..(r + 1) * d].copy_from_slice(&row[..d]);
        dv[r * d..(r + 1) * d].copy_from_slice(&row[d..2 * d]);
    }
    npi_ch.backward_acc(&trace.u_caches, &Tensor::matrix(rows, d, du), g_ch)?;
    npi_orth.backward_acc(&trace.v_caches, &Tensor::matrix(rows, d, dv), g_orth)?;
    Ok(())
}

/// Step-1 supervised NPI loss: batch NMSE of the fused estimate against the
/// true NPI over pilot REs. The batch normalizer `inv_norm` (the reciprocal
/// of the batch's pooled NPI energy) weights slots by their NPI power, so
/// high-SINR slots whose NPI sits below the CSI-error floor do not dominate
/// the objective. Returns this slot's squared-error contribution.
pub(crate) fn step1_loss_grads(
    npi_ch: &NetworkModel,
    npi_orth: &NetworkModel,
    fusion: &NetworkModel,
    prep: &SuppressionPrep,
    sinr_feat: f64,
    inv_norm: f64,
    g_ch: &mut Grads,
    g_orth: &mut Grads,
    g_fus: &mut Grads,
) -> Result<f64> {
    let trace = fusion_forward(npi_ch, npi_orth, fusion, prep, sinr_feat)?;
    let mut err = 0.0;
    let mut dfused = vec![0.0; trace.fused.len()];
    for i in 0..dfused.len() {
        let diff = trace.fused.data[i] - prep.w_feat[i];
        err += diff * diff;
        dfused[i] = 2.0 * diff * inv_norm;
    }
    let dfused = Tensor::new(trace.fused.shape.clone(), dfused);
    fusion_backward(npi_ch, npi_orth, fusion, &trace, &dfused, g_ch, g_orth, g_fus)?;
    Ok(err)
}

/// Step-2 joint forward: suppression, subtraction, LS re-estimation, and
/// completion, evaluated to the reconstruction NMSE over all REs.
pub(crate) struct Step2Trace {
    pub loss: f64,
    fusion: FusionTrace,
    comp_caches: Vec<crate::neural::LayerCache>,
    comp_in: Tensor,
    comp_out: Tensor,
    z: Vec<f64>,
    scale: f64,
}

pub(crate) fn step2_forward(
    npi_ch: &NetworkModel,
    npi_orth: &NetworkModel,
    fusion: &NetworkModel,
    completion: &NetworkModel,
    dims: &PipelineDims,
    prep: &SuppressionPrep,
    sinr_feat: f64,
) -> Result<Step2Trace> {
    let (k_p, m) = (dims.k_p, dims.m);
    let trace = fusion_forward(npi_ch, npi_orth, fusion, prep, sinr_feat)?;
    let w_tilde = deinterleave(&trace.fused.data);

    // Subtract, rescale by the LS coefficient, and regroup per antenna.
    let mut z = vec![0.0; m * 2 * k_p];
    for r in 0..k_p {
        let c = prep.ls_coeff[r];
        for a in 0..m {
            let y = prep.y_p[r * m + a];
            let h = (y - w_tilde[r * m + a]) * c;
            z[a * 2 * k_p + 2 * r] = h.re;
            z[a * 2 * k_p + 2 * r + 1] = h.im;
        }
    }
    let scale = rms(&z);
    let comp_in = Tensor::matrix(m, 2 * k_p, z.iter().map(|v| v / scale).collect());
    let (comp_out, comp_caches) = completion.forward(&comp_in)?;

    let mut loss = 0.0;
    for i in 0..comp_out.len() {
        let diff = comp_out.data[i] * scale - prep.target_rows[i];
        loss += diff * diff;
    }
    loss /= prep.target_norm_sq;
    Ok(Step2Trace { loss, fusion: trace, comp_caches, comp_in, comp_out, z, scale })
}

pub(crate) fn step2_backward(
    npi_ch: &NetworkModel,
    npi_orth: &NetworkModel,
    fusion: &NetworkModel,
    completion: &NetworkModel,
    dims: &PipelineDims,
    prep: &SuppressionPrep,
    trace: &Step2Trace,
    g_ch: &mut Grads,
    g_orth: &mut Grads,
    g_fus: &mut Grads,
    g_comp: &mut Grads,
) -> Result<()> {
    let (k_p, m) = (dims.k_p, dims.m);
    let scale = trace.scale;

    // dL/do where o = comp_out * scale.
    let n_out = trace.comp_out.len();
    let mut dlo = vec![0.0; n_out];
    for i in 0..n_out {
        dlo[i] = 2.0 * (trace.comp_out.data[i] * scale - prep.target_rows[i])
            / prep.target_norm_sq;
    }
    // Parameter gradients need upstream dL/df = dL/do * scale.
    let upstream =
        Tensor::new(trace.comp_out.shape.clone(), dlo.iter().map(|g| g * scale).collect());
    let gin = completion.backward_acc(&trace.comp_caches, &upstream, g_comp)?;

    // Exact gradient through the RMS normalization.
    let s_term: f64 = {
        let a: f64 = dlo.iter().zip(&trace.comp_out.data).map(|(g, f)| g * f).sum();
        let b: f64 =
            gin.data.iter().zip(&trace.comp_in.data).map(|(g, x)| g * x).sum::<f64>() / scale;
        a - b
    };
    let n_z = trace.z.len() as f64;
    let mut dz = vec![0.0; trace.z.len()];
    for i in 0..dz.len() {
        dz[i] = gin.data[i] / scale + trace.z[i] / (n_z * scale) * s_term;
    }

    // z -> h_tilde -> y_tilde -> w_tilde (complex chains are linear).
    let mut dfused = vec![0.0; k_p * 2 * m];
    for r in 0..k_p {
        let c = prep.ls_coeff[r];
        for a in 0..m {
            let gh = Complex64::new(dz[a * 2 * k_p + 2 * r], dz[a * 2 * k_p + 2 * r + 1]);
            // h = (y - w) * c  =>  dL/dw = -conj(c) * dL/dh
            let gw = -(c.conj() * gh);
            dfused[(r * m + a) * 2] = gw.re;
            dfused[(r * m + a) * 2 + 1] = gw.im;
        }
    }
    let dfused = Tensor::matrix(k_p, 2 * m, dfused);
    fusion_backward(npi_ch, npi_orth, fusion, &trace.fusion, &dfused, g_ch, g_orth, g_fus)?;
    Ok(())
}

// --- completion-only graph (clean-pilot training for the perfect-CSI path) ---

pub(crate) struct CompletionPrep {
    pub comp_in: Tensor,
    pub scale: f64,
    pub target_rows: Vec<f64>,
    pub target_norm_sq: f64,
}

pub(crate) fn completion_prep(
    slot: &SlotObservation,
    pattern: &PilotPattern,
    dims: &PipelineDims,
) -> Result<CompletionPrep> {
    let labels = slot.labels()?;
    let h = labels.h.as_ref().ok_or_else(|| Error::MissingPrerequisite("H label".into()))?;
    let est = linest::PilotEstimate {
        h_hat: pilot_truth(h, pattern),
        pattern: pattern.clone(),
        m: dims.m,
    };
    let z = completion_rows(&est);
    let scale = rms(&z);
    let comp_in = Tensor::matrix(dims.m, 2 * dims.k_p, z.iter().map(|v| v / scale).collect());
    let target_rows = grid_target_rows(h, dims.l, dims.k);
    let target_norm_sq: f64 = target_rows.iter().map(|v| v * v).sum();
    Ok(CompletionPrep { comp_in, scale, target_rows, target_norm_sq })
}

pub(crate) fn completion_loss_grads(
    net: &NetworkModel,
    prep: &CompletionPrep,
    grads: &mut Grads,
) -> Result<f64> {
    let (out, caches) = net.forward(&prep.comp_in)?;
    let mut loss = 0.0;
    let mut dout = vec![0.0; out.len()];
    for i in 0..out.len() {
        let diff = out.data[i] * prep.scale - prep.target_rows[i];
        loss += diff * diff;
        dout[i] = 2.0 * diff * prep.scale / prep.target_norm_sq;
    }
    loss /= prep.target_norm_sq;
    net.backward_acc(&caches, &Tensor::new(out.shape.clone(), dout), grads)?;
    Ok(loss)
}

// --- baseline graph ---

pub(crate) struct BaselinePrep {
    pub tokens: Tensor,
    pub target_rows: Vec<f64>,
    pub target_norm_sq: f64,
}

pub(crate) fn baseline_prep(
    slot: &SlotObservation,
    pattern: &PilotPattern,
    dims: &PipelineDims,
    arch: &ArchConfig,
) -> Result<BaselinePrep> {
    let est = linest::ls_estimate(&slot.x_p, &slot.y_p, pattern, dims.m)?;
    let tokens = super::baseline_tokens(&est, arch);
    let labels = slot.labels()?;
    let h = labels.h.as_ref().ok_or_else(|| Error::MissingPrerequisite("H label".into()))?;
    let target_rows = grid_target_rows(h, dims.l, dims.k);
    let target_norm_sq: f64 = target_rows.iter().map(|v| v * v).sum();
    Ok(BaselinePrep { tokens, target_rows, target_norm_sq })
}

pub(crate) fn baseline_loss_grads(
    net: &NetworkModel,
    prep: &BaselinePrep,
    grads: &mut Grads,
) -> Result<f64> {
    let (out, caches) = net.forward(&prep.tokens)?;
    let mut loss = 0.0;
    let mut dout = vec![0.0; out.len()];
    for i in 0..out.len() {
        let diff = out.data[i] - prep.target_rows[i];
        loss += diff * diff;
        dout[i] = 2.0 * diff / prep.target_norm_sq;
    }
    loss /= prep.target_norm_sq;
    net.backward_acc(&caches, &Tensor::new(out.shape.clone(), dout), grads)?;
    Ok(loss)
}

// --- finite-difference verification of the joint graph ---

/// Builds a small pipeline on a random slot and verifies the full step-2
/// analytic gradient against central finite differences.
pub fn step2_gradient_check(
    cfg: &SimConfig,
    arch: &ArchConfig,
    seed: u64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let pattern = PilotPattern::build(cfg);
    let dims = PipelineDims::of(cfg);
    let mut rng = crate::gridsim::slot_stream(seed, 0, 0);
    let bundle = new_bundle(cfg, arch, &mut rng);

    let mut ch_rng = crate::gridsim::slot_stream(cfg.seed, 0, crate::gridsim::streams::CHANNEL);
    let h = crate::gridsim::generate_channel(cfg, &mut ch_rng);
    let mut s_rng = crate::gridsim::slot_stream(cfg.seed, 0, crate::gridsim::streams::SLOT);
    let slot = crate::gridsim::simulate_slot(&h, &pattern, cfg, 6.0, &mut s_rng);

    // Random-ish nonzero weights everywhere: zero-initialized residual heads
    // would hide gradient paths behind zero activations. The refinement net
    // must be nonzero too, otherwise the refined estimate stays colinear
    // with y and both split components are identically zero.
    let mut bundle = bundle;
    for net in [
        &mut bundle.refine,
        &mut bundle.npi_ch,
        &mut bundle.npi_orth,
        &mut bundle.fusion,
        &mut bundle.completion,
    ] {
        for layer in &mut net.layers {
            for slice in layer.param_slices_mut() {
                for v in slice.iter_mut() {
                    if *v == 0.0 {
                        *v = crate::gridsim::normal(&mut rng) * 0.05;
                    }
                }
            }
        }
    }

    let prep = suppression_prep(&slot, &pattern, &bundle, true)?;
    let sinr_feat = sinr_feature(prep.sinr_db);

    let trace = step2_forward(
        &bundle.npi_ch,
        &bundle.npi_orth,
        &bundle.fusion,
        &bundle.completion,
        &dims,
        &prep,
        sinr_feat,
    )?;
    let mut g_ch = Grads::zeros_like(&bundle.npi_ch);
    let mut g_orth = Grads::zeros_like(&bundle.npi_orth);
    let mut g_fus = Grads::zeros_like(&bundle.fusion);
    let mut g_comp = Grads::zeros_like(&bundle.completion);
    step2_backward(
        &bundle.npi_ch,
        &bundle.npi_orth,
        &bundle.fusion,
        &bundle.completion,
        &dims,
        &prep,
        &trace,
        &mut g_ch,
        &mut g_orth,
        &mut g_fus,
        &mut g_comp,
    )?;

    let mut models =
        vec![bundle.npi_ch.clone(), bundle.npi_orth.clone(), bundle.fusion.clone(), bundle.completion.clone()];
    let analytic = vec![g_ch, g_orth, g_fus, g_comp];
    let mut eval = |ms: &[NetworkModel]| -> f64 {
        step2_forward(&ms[0], &ms[1], &ms[2], &ms[3], &dims, &prep, sinr_feat)
            .expect("step2 forward in finite-difference check")
            .loss
    };
    composite_gradient_check(&mut models, &mut eval, &analytic, FD_STEP, tolerance)
}
