// Dev scratch: medium-scale end-to-end run to measure method NMSEs and
// phase timings before freezing acceptance-scale hyperparameters.

use std::time::Instant;

use npisim_cli::eval::{fit_rho, recon_nmse, Method, MethodContext};
use npisim_core::config::{RunConfig, TrainConfig};
use npisim_core::gridsim::{generate_dataset, DatasetSpec, PilotPattern, SinrSampling, Split, SplitRatios};
use npisim_core::npinet::{self, PipelineDims};
use npisim_core::sinrest;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_train: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let n_test: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);

    let mut run = RunConfig::default();
    run.sim.seed = 1;
    let total = n_train + n_test;
    let spec = DatasetSpec {
        count: total,
        ratios: SplitRatios {
            pretrain: n_train as f64 / total as f64,
            downstream_train: 0.0,
        },
        train_sampling: SinrSampling::Uniform,
        test_sampling: SinrSampling::GridCycle(vec![0.0, 4.0, 8.0, 12.0, 16.0]),
    };
    let t0 = Instant::now();
    let dataset = generate_dataset(&run.sim, &spec).unwrap();
    println!("gen {total} slots: {:.1}s", t0.elapsed().as_secs_f64());

    let pattern = PilotPattern::build(&dataset.config);
    let dims = PipelineDims::of(&dataset.config);
    let slots = dataset.slots_in(Split::Pretrain);
    let mut rng = npisim_core::gridsim::slot_stream(run.train.seed, 0, 7);
    let mut bundle = npinet::new_bundle(&dataset.config, &run.arch, &mut rng);

    let phase = |name: &str, epochs: usize| -> TrainConfig {
        let _ = name;
        TrainConfig { epochs, ..run.train.clone() }
    };

    let t = Instant::now();
    let h = npinet::train_refine(slots, &pattern, &mut bundle, &phase("refine", run.schedule.refine_epochs)).unwrap();
    println!("refine: {:.1}s, loss {:.4} -> {:.4}", t.elapsed().as_secs_f64(), h.initial().unwrap(), h.last().unwrap());

    let t = Instant::now();
    let h = npinet::train_step1_npi(slots, &pattern, &mut bundle, &phase("npi1", run.schedule.npi1_epochs)).unwrap();
    println!("npi1: {:.1}s, loss {:.4} -> {:.4}", t.elapsed().as_secs_f64(), h.initial().unwrap(), h.last().unwrap());

    let t = Instant::now();
    let h = npinet::train_step2_joint(slots, &pattern, &mut bundle, &phase("npi2", run.schedule.npi2_epochs)).unwrap();
    println!("npi2: {:.1}s, loss {:.4} -> {:.4}", t.elapsed().as_secs_f64(), h.initial().unwrap(), h.last().unwrap());

    let t = Instant::now();
    let mut sinr_model = sinrest::build_sinr_model(&dataset.config, &run.arch, &mut rng);
    let h = sinrest::train_sinr(slots, &mut sinr_model, &phase("sinr", run.schedule.sinr_epochs)).unwrap();
    println!("sinr: {:.1}s, loss {:.4} -> {:.4}", t.elapsed().as_secs_f64(), h.initial().unwrap(), h.last().unwrap());

    let t = Instant::now();
    let mut baseline = npinet::build_baseline_net(&dims, &run.arch, &mut rng);
    let h = npinet::train_transformer(slots, &pattern, &mut baseline, &dims, &run.arch, &phase("baseline", run.schedule.baseline_epochs)).unwrap();
    println!("baseline: {:.1}s, loss {:.4} -> {:.4}", t.elapsed().as_secs_f64(), h.initial().unwrap(), h.last().unwrap());

    let t = Instant::now();
    let mut clean = npinet::build_completion_net(&dims, &run.arch, &mut rng);
    let h = npinet::train_clean_completion(slots, &pattern, &mut clean, &dims, &phase("clean", run.schedule.clean_completion_epochs)).unwrap();
    println!("clean: {:.1}s, loss {:.4} -> {:.4}", t.elapsed().as_secs_f64(), h.initial().unwrap(), h.last().unwrap());

    // Evaluation per SINR grid point.
    let rho = fit_rho(&dataset, 200);
    println!("fitted rho_t {:.4} rho_f {:.4}", rho.0, rho.1);
    let ctx = MethodContext {
        pattern: pattern.clone(),
        l: dataset.config.l,
        k: dataset.config.k,
        m: dataset.config.m,
        rho_t: rho.0,
        rho_f: rho.1,
        bundle: Some(bundle),
        sinr_model: Some(sinr_model),
        baseline: Some(baseline),
        clean_completion: Some(clean),
        arch: run.arch.clone(),
        use_sinr_estimator: true,
    };
    let test = dataset.slots_in(Split::Test);
    let t = Instant::now();
    for method in Method::ALL {
        let mut per_sinr: Vec<(f64, Vec<f64>)> = vec![];
        for slot in test {
            let sinr = slot.labels.as_ref().unwrap().sinr_db;
            let nmse = recon_nmse(method, slot, &ctx).unwrap();
            match per_sinr.iter_mut().find(|(s, _)| (*s - sinr).abs() < 1e-9) {
                Some((_, v)) => v.push(nmse),
                None => per_sinr.push((sinr, vec![nmse])),
            }
        }
        per_sinr.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let line: Vec<String> = per_sinr
            .iter()
            .map(|(s, v)| format!("{s:>2.0}dB {:.4}", v.iter().sum::<f64>() / v.len() as f64))
            .collect();
        println!("{:<12} {}", method.name(), line.join("  "));
    }
    println!("eval: {:.1}s", t.elapsed().as_secs_f64());

    // SINR estimator quality on test slots.
    let ctx_sinr = ctx.sinr_model.as_ref().unwrap();
    let mut se = 0.0;
    let mut per_point: Vec<(f64, Vec<f64>)> = vec![];
    for slot in test {
        let truth = slot.labels.as_ref().unwrap().sinr_db;
        let est = sinrest::estimate_sinr(slot, ctx_sinr).unwrap();
        se += (est - truth).powi(2);
        match per_point.iter_mut().find(|(s, _)| (*s - truth).abs() < 1e-9) {
            Some((_, v)) => v.push(est),
            None => per_point.push((truth, vec![est])),
        }
    }
    per_point.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    println!("sinr estimator MSE {:.3} dB^2", se / test.len() as f64);
    for (s, v) in per_point {
        println!("  true {s:>2.0} dB -> mean est {:.2} dB", v.iter().sum::<f64>() / v.len() as f64);
    }
}
