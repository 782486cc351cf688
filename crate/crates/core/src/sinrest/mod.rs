//! Per-slot average SINR estimation from received I/Q statistics.
//!
//! Two branches feed a combiner: a 2-D histogram of RMS-normalized I/Q
//! samples over the whole slot (all REs, all antennas) processed by a small
//! conv stack, and a point-network branch that encodes every payload RE
//! (its M received samples plus a modulation one-hot) and max-pools
//! column-wise into a fluctuation vector. Pilot REs carry known symbols
//! with different statistics, so the point branch sees payload REs only;
//! the histogram uses every received sample.

mod train;

pub use train::train_sinr;

use num_complex::Complex64;
use rand::Rng;

use crate::config::{ArchConfig, Modulation, SimConfig};
use crate::gridsim::SlotObservation;
use crate::neural::{
    conv2d, dense, load_model, save_model, Activation, Layer, NetworkModel, PoolKind, Tensor,
};
use crate::{Error, Result};

/// Output clip range in dB applied at inference.
pub const SINR_CLIP_DB: (f64, f64) = (-10.0, 40.0);

/// Normalized 2-D histogram of I/Q samples.
#[derive(Debug, Clone)]
pub struct IqHistogram {
    /// `[B][B]` row-major over (I bin, Q bin); sums to 1 for non-empty input.
    pub bins: Vec<f64>,
    pub b: usize,
    /// Symmetric half-width in RMS-normalized units.
    pub range: f64,
}

/// Bins RMS-normalized samples over `[-range, range]^2`; out-of-range
/// samples clamp to the edge bins.
pub fn histogram_2d(samples: &[Complex64], b: usize, range: f64) -> Result<IqHistogram> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput("histogram over empty sample set".into()));
    }
    if b == 0 || range <= 0.0 {
        return Err(Error::InvalidConfig("histogram needs bins >= 1 and range > 0".into()));
    }
    let rms = (samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / samples.len() as f64)
        .sqrt()
        .max(1e-300);
    let mut bins = vec![0.0; b * b];
    let cell = |v: f64| -> usize {
        let idx = ((v / rms + range) / (2.0 * range) * b as f64).floor();
        (idx.max(0.0) as usize).min(b - 1)
    };
    for s in samples {
        bins[cell(s.re) * b + cell(s.im)] += 1.0;
    }
    let total = samples.len() as f64;
    for v in &mut bins {
        *v /= total;
    }
    Ok(IqHistogram { bins, b, range })
}

/// The four trainable pieces of the estimator.
#[derive(Debug, Clone)]
pub struct SinrModel {
    /// Per-RE encoder ending in the column-wise max pool, so its output is
    /// the fluctuation vector.
    pub point_mlp: NetworkModel,
    pub post_pool_mlp: NetworkModel,
    pub conv_stack: NetworkModel,
    pub head_mlp: NetworkModel,
    pub bins: usize,
    pub range: f64,
    pub m: usize,
    /// Ablation fixture: when false the modulation one-hot features are
    /// zeroed out of the point tokens.
    pub use_mod_onehot: bool,
}

pub fn build_sinr_model(cfg: &SimConfig, arch: &ArchConfig, rng: &mut impl Rng) -> SinrModel {
    let d = arch.sinr_point_dim;
    let in_dim = 2 * cfg.m + 2;
    let mut point_layers = vec![dense(in_dim, d, Activation::Relu, rng)];
    for _ in 1..arch.sinr_depth.max(1) {
        point_layers.push(dense(d, d, Activation::Relu, rng));
    }
    point_layers.push(dense(d, d, Activation::Linear, rng));
    point_layers.push(Layer::PoolRows(PoolKind::Max));

    let mut post_layers = Vec::new();
    for _ in 0..arch.sinr_depth.max(1) {
        post_layers.push(dense(d, d, Activation::Relu, rng));
    }

    let conv_stack = NetworkModel::new(vec![
        conv2d(1, 8, 3, 2, 1, Activation::Relu, rng),
        conv2d(8, 16, 3, 2, 1, Activation::Relu, rng),
    ]);
    let b = arch.histogram_bins;
    let conv_flat = {
        let o1 = (b + 2 - 3) / 2 + 1;
        let o2 = (o1 + 2 - 3) / 2 + 1;
        16 * o2 * o2
    };
    let head_mlp = NetworkModel::new(vec![
        dense(conv_flat + d, arch.sinr_head_hidden, Activation::Relu, rng),
        dense(arch.sinr_head_hidden, 1, Activation::Linear, rng),
    ]);

    SinrModel {
        point_mlp: NetworkModel::new(point_layers),
        post_pool_mlp: NetworkModel::new(post_layers),
        conv_stack,
        head_mlp,
        bins: b,
        range: arch.histogram_range,
        m: cfg.m,
        use_mod_onehot: true,
    }
}

fn modulation_onehot(m: Modulation) -> [f64; 2] {
    match m {
        Modulation::Qpsk => [1.0, 0.0],
        Modulation::Qam16 => [0.0, 1.0],
    }
}

/// Point-branch tokens: one row per payload RE with the interleaved antenna
/// samples and the modulation one-hot.
pub(crate) fn point_tokens(slot: &SlotObservation, m: usize, use_onehot: bool) -> Result<Tensor> {
    if slot.y_d.is_empty() {
        return Err(Error::DegenerateInput("slot has no payload REs".into()));
    }
    let n_re = slot.y_d.len() / m;
    let width = 2 * m + 2;
    let onehot =
        if use_onehot { modulation_onehot(slot.modulation) } else { [0.0, 0.0] };
    let mut data = Vec::with_capacity(n_re * width);
    for r in 0..n_re {
        for c in &slot.y_d[r * m..(r + 1) * m] {
            data.push(c.re);
            data.push(c.im);
        }
        data.extend_from_slice(&onehot);
    }
    Ok(Tensor::matrix(n_re, width, data))
}

/// All received samples of the slot (pilot and payload REs, every antenna).
pub(crate) fn slot_samples(slot: &SlotObservation) -> Vec<Complex64> {
    let mut samples = Vec::with_capacity(slot.y_p.len() + slot.y_d.len());
    samples.extend_from_slice(&slot.y_p);
    samples.extend_from_slice(&slot.y_d);
    samples
}

/// Fluctuation vector of a slot: the column-wise max over per-RE encodings.
pub fn point_features(slot: &SlotObservation, model: &SinrModel) -> Result<Tensor> {
    let tokens = point_tokens(slot, model.m, model.use_mod_onehot)?;
    model.point_mlp.infer(&tokens)
}

pub(crate) fn histogram_tensor(slot: &SlotObservation, model: &SinrModel) -> Result<Tensor> {
    let hist = histogram_2d(&slot_samples(slot), model.bins, model.range)?;
    Ok(Tensor::new(vec![1, model.bins, model.bins], hist.bins))
}

pub(crate) fn head_input(conv_out: &Tensor, post_out: &Tensor) -> Tensor {
    let mut data = Vec::with_capacity(conv_out.len() + post_out.len());
    data.extend_from_slice(&conv_out.data);
    data.extend_from_slice(&post_out.data);
    Tensor::vector(data)
}

/// Estimated average SINR of a slot in dB, clipped to [-10, 40].
pub fn estimate_sinr(slot: &SlotObservation, model: &SinrModel) -> Result<f64> {
    let conv_out = model.conv_stack.infer(&histogram_tensor(slot, model)?)?;
    let fluct = point_features(slot, model)?;
    let post = model.post_pool_mlp.infer(&fluct)?;
    let out = model.head_mlp.infer(&head_input(&conv_out, &post))?;
    let v = out.data[0];
    if !v.is_finite() {
        return Err(Error::NonFinite("SINR estimate".into()));
    }
    Ok(v.clamp(SINR_CLIP_DB.0, SINR_CLIP_DB.1))
}

impl SinrModel {
    /// Saves the four component models into a directory.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_model(&self.point_mlp, &dir.join("sinr_point.npim"))?;
        save_model(&self.post_pool_mlp, &dir.join("sinr_post.npim"))?;
        save_model(&self.conv_stack, &dir.join("sinr_conv.npim"))?;
        save_model(&self.head_mlp, &dir.join("sinr_head.npim"))
    }

    /// Loads the four component models; histogram parameters come from the
    /// caller's config (they are recorded in the bundle manifest).
    pub fn load(dir: &std::path::Path, cfg: &SimConfig, arch: &ArchConfig) -> Result<Self> {
        let need = |name: &str| -> Result<NetworkModel> {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::MissingPrerequisite(format!(
                    "model file {name} not found in {}",
                    dir.display()
                )));
            }
            load_model(&path)
        };
        Ok(SinrModel {
            point_mlp: need("sinr_point.npim")?,
            post_pool_mlp: need("sinr_post.npim")?,
            conv_stack: need("sinr_conv.npim")?,
            head_mlp: need("sinr_head.npim")?,
            bins: arch.histogram_bins,
            range: arch.histogram_range,
            m: cfg.m,
            use_mod_onehot: true,
        })
    }
}
