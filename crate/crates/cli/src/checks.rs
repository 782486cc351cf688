//! `gradcheck` and `selftest`: built-in verification commands.

use num_complex::Complex64;

use npisim_core::config::{ArchConfig, SimConfig};
use npisim_core::gridsim::{
    cnormal, generate_channel, simulate_slot, slot_stream, streams, Dataset, DatasetSpec,
    PilotPattern,
};
use npisim_core::linest;
use npisim_core::neural::{
    attention, conv2d, dense, gradient_check, Activation, Layer, NetworkModel, PoolKind, Tensor,
};
use npisim_core::npinet::step2_gradient_check;

use crate::{CliError, CliResult};

fn report_line(pass: bool, text: &str) -> bool {
    println!("[{}] {}", if pass { "PASS" } else { "FAIL" }, text);
    pass
}

fn sq_loss(out: &Tensor) -> (f64, Tensor) {
    let loss: f64 = out.data.iter().map(|v| v * v).sum::<f64>() * 0.5;
    (loss, Tensor::new(out.shape.clone(), out.data.clone()))
}

/// Finite-difference verification of every layer type plus the joint
/// suppression graph, at three seeds each.
pub fn cmd_gradcheck() -> CliResult<()> {
    let tolerance = 1e-4;
    let mut all = true;

    for seed in [1u64, 2, 3] {
        let mut rng = slot_stream(seed, 0, 0);
        let cases: Vec<(&str, NetworkModel, Vec<usize>)> = vec![
            (
                "dense",
                NetworkModel::new(vec![
                    dense(5, 7, Activation::Relu, &mut rng),
                    dense(7, 3, Activation::Linear, &mut rng),
                ]),
                vec![5],
            ),
            (
                "dense-rowwise",
                NetworkModel::new(vec![dense(4, 6, Activation::Relu, &mut rng)]),
                vec![3, 4],
            ),
            (
                "conv2d",
                NetworkModel::new(vec![
                    conv2d(2, 3, 3, 2, 1, Activation::Relu, &mut rng),
                    conv2d(3, 2, 3, 1, 0, Activation::Linear, &mut rng),
                ]),
                vec![2, 7, 7],
            ),
            (
                "attention",
                NetworkModel::new(vec![attention(6, 10, &mut rng)]),
                vec![4, 6],
            ),
            (
                "maxpool",
                NetworkModel::new(vec![
                    dense(3, 8, Activation::Relu, &mut rng),
                    Layer::PoolRows(PoolKind::Max),
                    dense(8, 2, Activation::Linear, &mut rng),
                ]),
                vec![5, 3],
            ),
            (
                "sumpool",
                NetworkModel::new(vec![
                    dense(3, 8, Activation::Relu, &mut rng),
                    Layer::PoolRows(PoolKind::Sum),
                    dense(8, 2, Activation::Linear, &mut rng),
                ]),
                vec![5, 3],
            ),
        ];
        for (name, mut model, shape) in cases {
            let mut in_rng = slot_stream(seed + 100, 0, 0);
            let len: usize = shape.iter().product();
            let input = Tensor::new(
                shape,
                (0..len).map(|_| npisim_core::gridsim::normal(&mut in_rng)).collect(),
            );
            let report = gradient_check(&mut model, &input, &sq_loss, tolerance)?;
            all &= report_line(
                report.pass,
                &format!(
                    "layer {name} seed {seed}: max relative error {:.3e} (tolerance {tolerance:.0e})",
                    report.max_rel_error
                ),
            );
        }
    }

    // Joint suppression graph at tiny dimensions (M=2, K_p=2, L=2, K=4).
    let cfg = SimConfig {
        l: 2,
        k: 4,
        m: 2,
        k_ext: 2,
        pilot_symbols: vec![0],
        pilot_spacing: 2,
        interferer_count_range: [1, 1],
        ..SimConfig::default()
    };
    let arch = ArchConfig {
        refine_hidden: 8,
        npi_hidden: 6,
        fusion_hidden: 6,
        completion_hidden: 8,
        ..ArchConfig::default()
    };
    for seed in [1u64, 2, 3] {
        let report = step2_gradient_check(&cfg, &arch, seed, tolerance)?;
        all &= report_line(
            report.pass,
            &format!(
                "joint suppression graph seed {seed}: max relative error {:.3e}",
                report.max_rel_error
            ),
        );
    }

    if all {
        Ok(())
    } else {
        Err(CliError::Check("gradient verification failed".into()))
    }
}

/// Fast invariant checks over the closed-form core and the simulator.
pub fn cmd_selftest() -> CliResult<()> {
    let mut all = true;

    // Projection algebra on random draws.
    {
        let mut rng = slot_stream(101, 0, 0);
        let mut worst = 0.0f64;
        for &m in &[2usize, 8] {
            for _ in 0..100 {
                let h: Vec<Complex64> = (0..m).map(|_| cnormal(&mut rng)).collect();
                let proj = linest::projection_matrices(&h, 0.0);
                for i in 0..m {
                    for j in 0..m {
                        let mut pp = Complex64::ZERO;
                        for k in 0..m {
                            pp += proj.p_ch[i * m + k] * proj.p_ch[k * m + j];
                        }
                        worst = worst.max((pp - proj.p_ch[i * m + j]).norm());
                        let id = if i == j { Complex64::ONE } else { Complex64::ZERO };
                        worst = worst
                            .max((proj.p_ch[i * m + j] + proj.p_orth[i * m + j] - id).norm());
                    }
                }
            }
        }
        all &= report_line(worst < 1e-10, &format!("projection algebra: worst error {worst:.2e}"));
    }

    // Perfect-CSI NPI decomposition on simulated slots.
    {
        let cfg = SimConfig { m: 4, ..SimConfig::default() };
        let pattern = PilotPattern::build(&cfg);
        let mut worst = 0.0f64;
        for idx in 0..20 {
            let mut ch = slot_stream(cfg.seed, idx, streams::CHANNEL);
            let h = generate_channel(&cfg, &mut ch);
            let mut sr = slot_stream(cfg.seed, idx, streams::SLOT);
            let slot = simulate_slot(&h, &pattern, &cfg, 6.0, &mut sr);
            let labels = slot.labels.as_ref().expect("labels");
            for (r, &(l, k)) in pattern.positions().iter().enumerate() {
                let hv = h.at(l, k);
                let proj = linest::projection_matrices(hv, 0.0);
                let (w_ch, w_orth) =
                    linest::extract_npi(&proj, hv, slot.x_p[r], slot.y_p_at(r, cfg.m));
                for i in 0..cfg.m {
                    let sum = w_ch[i] + w_orth[i];
                    worst = worst.max((sum - labels.w_pilot[r * cfg.m + i]).norm());
                }
            }
        }
        all &= report_line(worst < 1e-10, &format!("NPI decomposition: worst error {worst:.2e}"));
    }

    // Simulator calibration: reconstruction identity and realized SINR.
    {
        let cfg = SimConfig { m: 4, ..SimConfig::default() };
        let pattern = PilotPattern::build(&cfg);
        let mut worst_rel = 0.0f64;
        let mut worst_sinr = 0.0f64;
        for idx in 0..20 {
            let target = 2.0 + idx as f64;
            let mut ch = slot_stream(cfg.seed, idx, streams::CHANNEL);
            let h = generate_channel(&cfg, &mut ch);
            let mut sr = slot_stream(cfg.seed, idx, streams::SLOT);
            let slot = simulate_slot(&h, &pattern, &cfg, target, &mut sr);
            let labels = slot.labels.as_ref().expect("labels");
            let w = labels.w.as_ref().expect("w");
            for (r, &(l, k)) in pattern.positions().iter().enumerate() {
                let hv = h.at(l, k);
                for i in 0..cfg.m {
                    let y = slot.y_p[r * cfg.m + i];
                    let rhs = hv[i] * slot.x_p[r] + w[(l * cfg.k + k) * cfg.m + i];
                    worst_rel = worst_rel.max((y - rhs).norm() / y.norm().max(1e-12));
                }
            }
            // Realized SINR from stored labels.
            let p_w: f64 = w.iter().map(|c| c.norm_sqr()).sum();
            let mut p_s = 0.0;
            let mut data_row = 0;
            let mut pilot_row = 0;
            for l in 0..cfg.l {
                for k in 0..cfg.k {
                    let base = (l * cfg.k + k) * cfg.m;
                    let y: &[Complex64] = if pattern.contains(l, k) {
                        let r = &slot.y_p[pilot_row * cfg.m..(pilot_row + 1) * cfg.m];
                        pilot_row += 1;
                        r
                    } else {
                        let r = &slot.y_d[data_row * cfg.m..(data_row + 1) * cfg.m];
                        data_row += 1;
                        r
                    };
                    for i in 0..cfg.m {
                        p_s += (y[i] - w[base + i]).norm_sqr();
                    }
                }
            }
            let realized = 10.0 * (p_s / p_w).log10();
            worst_sinr = worst_sinr.max((realized - target).abs());
        }
        all &= report_line(
            worst_rel < 1e-6,
            &format!("reconstruction identity: worst relative error {worst_rel:.2e}"),
        );
        all &= report_line(
            worst_sinr < 0.1,
            &format!("SINR calibration: worst deviation {worst_sinr:.2e} dB"),
        );
    }

    // Dataset determinism.
    {
        let cfg = SimConfig {
            l: 4,
            k: 8,
            m: 2,
            k_ext: 2,
            pilot_symbols: vec![1, 3],
            pilot_spacing: 4,
            ..SimConfig::default()
        };
        let tmp = tempfile::tempdir()?;
        let spec = DatasetSpec::uniform(10);
        Dataset::generate_to_dir(&cfg, &spec, &tmp.path().join("a"))?;
        Dataset::generate_to_dir(&cfg, &spec, &tmp.path().join("b"))?;
        let a = std::fs::read(tmp.path().join("a/dataset.npis"))?;
        let b = std::fs::read(tmp.path().join("b/dataset.npis"))?;
        all &= report_line(a == b, "dataset generation is byte-deterministic");
    }

    // LS exactness without noise.
    {
        let mut rng = slot_stream(102, 0, 0);
        let cfg = SimConfig { l: 1, k: 1, pilot_symbols: vec![0], pilot_spacing: 1, ..SimConfig::default() };
        let pattern = PilotPattern::build(&cfg);
        let h: Vec<Complex64> = (0..4).map(|_| cnormal(&mut rng)).collect();
        let x = Complex64::from_polar(1.0, 0.7);
        let y: Vec<Complex64> = h.iter().map(|hv| hv * x).collect();
        let est = linest::ls_estimate(&[x], &y, &pattern, 4)?;
        let worst = est
            .h_hat
            .iter()
            .zip(&h)
            .map(|(a, b)| (a - b).norm() / b.norm())
            .fold(0.0f64, f64::max);
        all &= report_line(worst < 1e-12, &format!("LS noiseless exactness: worst {worst:.2e}"));
    }

    if all {
        Ok(())
    } else {
        Err(CliError::Check("selftest failed".into()))
    }
}
