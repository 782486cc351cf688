//! Supervised SINR estimator training.
//!
//! The loss is squared error on dB-scale SINR normalized by the batch
//! target variance (the scalar reading of an NMSE loss); a batch with
//! (near-)constant targets falls back to plain MSE. The inference-time
//! output clip is not applied during training.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::gridsim::SlotObservation;
use crate::neural::{AdamState, Grads, Tensor};
use crate::npinet::LossHistory;
use crate::{Error, Result};

use super::{head_input, histogram_tensor, point_tokens, SinrModel};

struct SinrPrep {
    tokens: Tensor,
    hist: Tensor,
    target: f64,
}

fn prep(slot: &SlotObservation, model: &SinrModel) -> Result<SinrPrep> {
    let labels = slot.labels()?;
    if !labels.sinr_db.is_finite() {
        return Err(Error::InvalidConfig(
            "SINR training needs finite labels (noise-free slots excluded)".into(),
        ));
    }
    Ok(SinrPrep {
        tokens: point_tokens(slot, model.m, model.use_mod_onehot)?,
        hist: histogram_tensor(slot, model)?,
        target: labels.sinr_db,
    })
}

fn loss_grads(
    model: &SinrModel,
    p: &SinrPrep,
    inv_norm: f64,
    g_point: &mut Grads,
    g_post: &mut Grads,
    g_conv: &mut Grads,
    g_head: &mut Grads,
) -> Result<f64> {
    let (conv_out, conv_caches) = model.conv_stack.forward(&p.hist)?;
    let (fluct, point_caches) = model.point_mlp.forward(&p.tokens)?;
    let (post, post_caches) = model.post_pool_mlp.forward(&fluct)?;
    let hin = head_input(&conv_out, &post);
    let (pred, head_caches) = model.head_mlp.forward(&hin)?;
    let err = pred.data[0] - p.target;
    let loss = err * err * inv_norm;
    let dpred = 2.0 * err * inv_norm;

    let dhin = model.head_mlp.backward_acc(&head_caches, &Tensor::vector(vec![dpred]), g_head)?;
    let n_conv = conv_out.len();
    let dconv = Tensor::new(conv_out.shape.clone(), dhin.data[..n_conv].to_vec());
    let dpost = Tensor::vector(dhin.data[n_conv..].to_vec());
    model.conv_stack.backward_acc(&conv_caches, &dconv, g_conv)?;
    let dfluct = model.post_pool_mlp.backward_acc(&post_caches, &dpost, g_post)?;
    model.point_mlp.backward_acc(&point_caches, &dfluct, g_point)?;
    Ok(loss)
}

/// Trains the estimator; the returned history holds the mean per-slot loss
/// per epoch.
pub fn train_sinr(
    slots: &[SlotObservation],
    model: &mut SinrModel,
    cfg: &TrainConfig,
) -> Result<LossHistory> {
    cfg.validate()?;
    let preps: Vec<SinrPrep> =
        slots.par_iter().map(|s| prep(s, model)).collect::<Result<Vec<_>>>()?;
    let mut history = LossHistory::default();
    let mut st_point = AdamState::new(&model.point_mlp);
    let mut st_post = AdamState::new(&model.post_pool_mlp);
    let mut st_conv = AdamState::new(&model.conv_stack);
    let mut st_head = AdamState::new(&model.head_mlp);
    // The batch partition is fixed across epochs: the loss normalizer is
    // the batch target variance, so stable batches keep the loss history
    // comparable between epochs.
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x73696e72);
    let mut order: Vec<usize> = (0..preps.len()).collect();
    order.shuffle(&mut order_rng);
    for epoch in 0..cfg.epochs {
        let _ = epoch;
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mean = batch.iter().map(|&i| preps[i].target).sum::<f64>() / batch.len() as f64;
            let var = batch
                .iter()
                .map(|&i| (preps[i].target - mean).powi(2))
                .sum::<f64>()
                / batch.len() as f64;
            let inv_norm = if var < 1e-9 { 1.0 } else { 1.0 / var };
            let chunks: Vec<&[usize]> = batch.chunks(8).collect();
            type Acc = (f64, Grads, Grads, Grads, Grads);
            let results: Vec<Acc> = chunks
                .par_iter()
                .map(|chunk| {
                    let mut g_point = Grads::zeros_like(&model.point_mlp);
                    let mut g_post = Grads::zeros_like(&model.post_pool_mlp);
                    let mut g_conv = Grads::zeros_like(&model.conv_stack);
                    let mut g_head = Grads::zeros_like(&model.head_mlp);
                    let mut loss = 0.0;
                    for &i in *chunk {
                        loss += loss_grads(
                            model, &preps[i], inv_norm, &mut g_point, &mut g_post, &mut g_conv,
                            &mut g_head,
                        )?;
                    }
                    Ok((loss, g_point, g_post, g_conv, g_head))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut iter = results.into_iter();
            let (mut batch_loss, mut g_point, mut g_post, mut g_conv, mut g_head) =
                iter.next().expect("non-empty batch");
            for (l, a, b, c, d) in iter {
                batch_loss += l;
                g_point.add_assign(&a);
                g_post.add_assign(&b);
                g_conv.add_assign(&c);
                g_head.add_assign(&d);
            }
            epoch_loss += batch_loss;
            let inv = 1.0 / batch.len() as f64;
            g_point.scale(inv);
            g_post.scale(inv);
            g_conv.scale(inv);
            g_head.scale(inv);
            st_point.step(&mut model.point_mlp, &g_point, cfg)?;
            st_post.step(&mut model.post_pool_mlp, &g_post, cfg)?;
            st_conv.step(&mut model.conv_stack, &g_conv, cfg)?;
            st_head.step(&mut model.head_mlp, &g_head, cfg)?;
        }
        let mean = epoch_loss / preps.len() as f64;
        if !mean.is_finite() {
            return Err(Error::TrainingDiverged("sinr: non-finite loss".into()));
        }
        history.per_epoch.push(mean);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ArchConfig, SimConfig};
    use crate::gridsim::{generate_dataset, DatasetSpec, SinrSampling, SplitRatios};
    use crate::sinrest::{build_sinr_model, estimate_sinr};

    fn cfg() -> SimConfig {
        SimConfig {
            l: 4,
            k: 8,
            m: 2,
            k_ext: 0,
            pilot_symbols: vec![0],
            pilot_spacing: 4,
            interferer_count_range: [0, 1],
            ..SimConfig::default()
        }
    }

    fn arch() -> ArchConfig {
        ArchConfig {
            sinr_point_dim: 16,
            histogram_bins: 8,
            sinr_head_hidden: 16,
            sinr_depth: 1,
            ..ArchConfig::default()
        }
    }

    fn slots(cfg: &SimConfig, n: usize, sampling: SinrSampling) -> Vec<SlotObservation> {
        let spec = DatasetSpec {
            count: n,
            ratios: SplitRatios { pretrain: 1.0, downstream_train: 0.0 },
            train_sampling: sampling,
            test_sampling: SinrSampling::Uniform,
        };
        generate_dataset(cfg, &spec).unwrap().slots
    }

    #[test]
    fn zero_learning_rate_constant_history() {
        let c = cfg();
        let a = arch();
        let data = slots(&c, 10, SinrSampling::Uniform);
        let mut rng = crate::gridsim::slot_stream(1, 0, 0);
        let mut model = build_sinr_model(&c, &a, &mut rng);
        let t = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 5, ..TrainConfig::default() };
        let h = train_sinr(&data, &mut model, &t).unwrap();
        assert!(h.per_epoch.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    #[test]
    fn constant_sinr_converges_to_constant_predictor() {
        let c = cfg();
        let a = arch();
        let data = slots(&c, 48, SinrSampling::Fixed(8.0));
        let mut rng = crate::gridsim::slot_stream(2, 0, 0);
        let mut model = build_sinr_model(&c, &a, &mut rng);
        let t = TrainConfig { epochs: 40, batch_size: 16, learning_rate: 3e-3, ..TrainConfig::default() };
        train_sinr(&data, &mut model, &t).unwrap();
        // Held-out slots at the same SINR: squared error under 0.5 dB^2.
        let held = slots(&SimConfig { seed: 77, ..c.clone() }, 20, SinrSampling::Fixed(8.0));
        let mse = held
            .iter()
            .map(|s| (estimate_sinr(s, &model).unwrap() - 8.0).powi(2))
            .sum::<f64>()
            / held.len() as f64;
        assert!(mse < 0.5, "constant-target MSE {mse}");
    }

    #[test]
    fn training_reduces_loss() {
        let c = cfg();
        let a = arch();
        let data = slots(&c, 96, SinrSampling::Uniform);
        let mut rng = crate::gridsim::slot_stream(3, 0, 0);
        let mut model = build_sinr_model(&c, &a, &mut rng);
        let t = TrainConfig { epochs: 25, batch_size: 16, learning_rate: 2e-3, ..TrainConfig::default() };
        let h = train_sinr(&data, &mut model, &t).unwrap();
        assert!(
            h.last().unwrap() < 0.5 * h.initial().unwrap(),
            "history {:?}",
            h.per_epoch
        );
    }

    #[test]
    fn rejects_noise_free_labels() {
        let c = SimConfig { interferer_count_range: [0, 0], ..cfg() };
        let mut data = slots(&c, 4, SinrSampling::Uniform);
        data[0].labels.as_mut().unwrap().sinr_db = f64::INFINITY;
        let mut rng = crate::gridsim::slot_stream(4, 0, 0);
        let mut model = build_sinr_model(&c, &arch(), &mut rng);
        let t = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(train_sinr(&data, &mut model, &t).is_err());
    }

    #[test]
    fn modulation_onehot_is_never_harmful() {
        // Mixed-modulation corpus, one model with the one-hot and one with
        // it zeroed: MSE(with) <= 1.1 * MSE(without).
        let base = cfg();
        let qpsk = slots(&base, 48, SinrSampling::Uniform);
        let qam_cfg = SimConfig {
            modulation: crate::config::Modulation::Qam16,
            seed: 11,
            ..base.clone()
        };
        let qam = slots(&qam_cfg, 48, SinrSampling::Uniform);
        let mut train_set: Vec<SlotObservation> = Vec::new();
        train_set.extend(qpsk.iter().cloned());
        train_set.extend(qam.iter().cloned());
        let held_q = slots(&SimConfig { seed: 21, ..base.clone() }, 16, SinrSampling::Uniform);
        let held_a = slots(&SimConfig { seed: 22, ..qam_cfg.clone() }, 16, SinrSampling::Uniform);
        let mut held: Vec<SlotObservation> = Vec::new();
        held.extend(held_q);
        held.extend(held_a);

        let a = arch();
        let t = TrainConfig { epochs: 15, batch_size: 16, learning_rate: 2e-3, ..TrainConfig::default() };
        let mse_for = |use_onehot: bool| -> f64 {
            let mut rng = crate::gridsim::slot_stream(5, 0, 0);
            let mut model = build_sinr_model(&base, &a, &mut rng);
            model.use_mod_onehot = use_onehot;
            train_sinr(&train_set, &mut model, &t).unwrap();
            held.iter()
                .map(|s| {
                    let l = s.labels.as_ref().unwrap().sinr_db;
                    (estimate_sinr(s, &model).unwrap() - l).powi(2)
                })
                .sum::<f64>()
                / held.len() as f64
        };
        let with = mse_for(true);
        let without = mse_for(false);
        assert!(
            with <= 1.1 * without,
            "one-hot hurt accuracy: with {with} vs without {without}"
        );
    }
}
