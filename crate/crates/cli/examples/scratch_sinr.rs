// Dev scratch: SINR estimator accuracy vs schedule/capacity at full scale.

use npisim_core::config::{ArchConfig, SimConfig, TrainConfig};
use npisim_core::gridsim::{generate_dataset, DatasetSpec, SinrSampling, Split, SplitRatios};
use npisim_core::sinrest;

fn main() {
    let cfg = SimConfig::default();
    let spec = DatasetSpec {
        count: 6000,
        ratios: SplitRatios { pretrain: 1.0, downstream_train: 0.0 },
        train_sampling: SinrSampling::Uniform,
        test_sampling: SinrSampling::Uniform,
    };
    let ds = generate_dataset(&cfg, &spec).unwrap();
    let train = ds.slots_in(Split::Pretrain);
    let held_cfg = SimConfig { seed: 99, ..cfg.clone() };
    let held = generate_dataset(
        &held_cfg,
        &DatasetSpec {
            count: 500,
            ratios: SplitRatios { pretrain: 1.0, downstream_train: 0.0 },
            train_sampling: SinrSampling::Uniform,
            test_sampling: SinrSampling::Uniform,
        },
    )
    .unwrap();

    let targets: Vec<f64> =
        held.slots.iter().map(|s| s.labels.as_ref().unwrap().sinr_db).collect();
    let mean_t = targets.iter().sum::<f64>() / targets.len() as f64;
    let var_t =
        targets.iter().map(|t| (t - mean_t).powi(2)).sum::<f64>() / targets.len() as f64;
    println!("held-out target variance {var_t:.2}, budget 0.25*var = {:.2}", 0.25 * var_t);

    for (name, head, epochs, batch, lr) in [
        ("head128 e16 b32 lr1e-3", 128usize, 16usize, 32usize, 1e-3),
        ("head64  e16 b32 lr1e-3", 64, 16, 32, 1e-3),
        ("head64  e20 b64 lr1e-3", 64, 20, 64, 1e-3),
    ] {
        let arch = ArchConfig { sinr_head_hidden: head, ..ArchConfig::default() };
        let tcfg = TrainConfig {
            epochs,
            batch_size: batch,
            learning_rate: lr,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let mut rng = npisim_core::gridsim::slot_stream(7, 0, 7);
        let mut model = sinrest::build_sinr_model(&cfg, &arch, &mut rng);
        let hist = sinrest::train_sinr(train, &mut model, &tcfg).unwrap();
        let mse = held
            .slots
            .iter()
            .zip(&targets)
            .map(|(s, t)| (sinrest::estimate_sinr(s, &model).unwrap() - t).powi(2))
            .sum::<f64>()
            / targets.len() as f64;
        // mean estimates at the extremes (separate fixed-SINR sets)
        let sep_at = |sinr: f64, seed: u64| -> f64 {
            let c = SimConfig { seed, ..cfg.clone() };
            let d = generate_dataset(
                &c,
                &DatasetSpec {
                    count: 100,
                    ratios: SplitRatios { pretrain: 1.0, downstream_train: 0.0 },
                    train_sampling: SinrSampling::Fixed(sinr),
                    test_sampling: SinrSampling::Uniform,
                },
            )
            .unwrap();
            d.slots.iter().map(|s| sinrest::estimate_sinr(s, &model).unwrap()).sum::<f64>()
                / d.slots.len() as f64
        };
        let hi = sep_at(16.0, 333);
        let lo = sep_at(0.0, 334);
        println!(
            "{name}: train loss {:.4}->{:.4}, test MSE {mse:.3} dB^2, est@16 {hi:.2}, est@0 {lo:.2}, sep {:.2}, {:.0}s",
            hist.initial().unwrap(),
            hist.last().unwrap(),
            hi - lo,
            t0.elapsed().as_secs_f64()
        );
    }
}
