// Dev scratch: build the desk-scale fixture into a persistent directory and
// print everything criteria 5-9 look at, including bracket variants.

use std::path::PathBuf;
use std::time::Instant;

use npisim_cli::eval::{fit_rho, Method, MethodContext};
use npisim_cli::{
    cmd_downstream, cmd_eval, cmd_gen, cmd_train, DownstreamArgs, EvalArgs, GenArgs, Phase,
    TrainArgs,
};
use npisim_core::config::{RunConfig, SimConfig};
use npisim_core::gridsim::{
    generate_channel, simulate_slot, slot_stream, streams, Dataset, LoadOptions, PilotPattern,
};
use npisim_core::linest;
use npisim_core::npinet::{self, NpiVariant, SinrSource};

fn main() {
    let root = PathBuf::from("/root/fixture_dev");
    let data = root.join("data");
    let models = root.join("models");
    let run = RunConfig::default();
    let t0 = Instant::now();

    if !data.join("dataset.npis").exists() {
        cmd_gen(&GenArgs { count: 8000, out: data.clone(), ..GenArgs::default() }).unwrap();
        println!("gen: {:.0}s", t0.elapsed().as_secs_f64());
    }
    if !models.join("baseline.npim").exists() {
        for phase in [Phase::Refine, Phase::Npi1, Phase::Npi2, Phase::Sinr, Phase::Baseline] {
            let t = Instant::now();
            cmd_train(&TrainArgs {
                config: None,
                phase,
                data: data.clone(),
                models: models.clone(),
                epochs: None,
                seed: None,
            })
            .unwrap();
            println!("phase {:?}: {:.0}s", phase, t.elapsed().as_secs_f64());
        }
    }

    let t = Instant::now();
    let eval_rows = cmd_eval(&EvalArgs {
        config: None,
        data: data.clone(),
        models: Some(models.clone()),
        methods: Method::ALL.to_vec(),
        out: root.join("eval.csv"),
        sinr_from_label: false,
    })
    .unwrap();
    println!("eval: {:.0}s", t.elapsed().as_secs_f64());
    for r in &eval_rows {
        if r.metric == "recon_nmse" {
            println!("  {} @ {:?} dB: {:.4}", r.method, r.sinr_db.unwrap(), r.value);
        }
    }

    let t = Instant::now();
    let down_rows = cmd_downstream(&DownstreamArgs {
        config: None,
        data: data.clone(),
        models: Some(models.clone()),
        methods: Method::ALL.to_vec(),
        np_list: vec![4, 8, 16],
        rt_list: vec![0.25, 0.5, 0.8],
        sinr_db: 8.0,
        out: root.join("downstream.csv"),
        sinr_from_label: false,
    })
    .unwrap();
    println!("downstream: {:.0}s", t.elapsed().as_secs_f64());
    for r in &down_rows {
        if r.metric == "downstream_nmse" {
            println!(
                "  {} np={} rt={}: {:.5}",
                r.method,
                r.n_p.unwrap(),
                r.r_t.unwrap(),
                r.value
            );
        }
    }

    // Criterion-9 bracket with both conditioning sources.
    let dataset = Dataset::load(&data, LoadOptions::default()).unwrap();
    let rho = fit_rho(&dataset, 200);
    let ctx = MethodContext::build(&run, &dataset, Some(&models), &[Method::Proposed], rho, true)
        .unwrap();
    let bundle = ctx.bundle.as_ref().unwrap();
    let sinr_model = ctx.sinr_model.as_ref().unwrap();
    let cfg = SimConfig { seed: 77, ..run.sim.clone() };
    let pattern = PilotPattern::build(&cfg);
    for (name, use_est) in [("estimator", true), ("label", false)] {
        let mut zero = 0.0;
        let mut trained = 0.0;
        let mut oracle = 0.0;
        let n = 500;
        for idx in 0..n {
            let mut ch = slot_stream(cfg.seed, idx, streams::CHANNEL);
            let h = generate_channel(&cfg, &mut ch);
            let mut sr = slot_stream(cfg.seed, idx, streams::SLOT);
            let slot = simulate_slot(&h, &pattern, &cfg, 8.0, &mut sr);
            let labels = slot.labels.as_ref().unwrap();
            let mut truth = Vec::new();
            for l in 0..cfg.l {
                for k in 0..cfg.k {
                    truth.extend_from_slice(labels.h.as_ref().unwrap().at(l, k));
                }
            }
            let w_pilot = labels.w_pilot.clone();
            let mut run_v = |variant: NpiVariant<'_>| -> f64 {
                let src = if use_est {
                    SinrSource::Estimator(sinr_model)
                } else {
                    SinrSource::Label
                };
                let grid =
                    npinet::run_pipeline_variant(&slot, bundle, &pattern, src, variant).unwrap();
                linest::nmse(&grid, &truth).unwrap()
            };
            zero += run_v(NpiVariant::Zero);
            trained += run_v(NpiVariant::Trained);
            oracle += run_v(NpiVariant::Oracle(&w_pilot));
        }
        println!(
            "bracket ({name}): zero {:.4}, trained {:.4}, oracle {:.4}",
            zero / n as f64,
            trained / n as f64,
            oracle / n as f64
        );
    }
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}
