//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (`cargo test --test acceptance -- --nocapture` to see them all).
//!
//! Criteria 5-9 share one desk-scale trained fixture (M=8, 6000 train /
//! 1000 test slots, SINR grid {0,4,8,12,16} dB) built once through the
//! actual CLI command path: gen -> train (all phases) -> eval ->
//! downstream. Expect the first fixture-backed test to spend several
//! minutes training; everything is seeded and deterministic.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use num_complex::Complex64;

use npisim_cli::eval::{EvalRow, Method, MethodContext};
use npisim_cli::{
    checks, cmd_downstream, cmd_eval, cmd_gen, cmd_train, DownstreamArgs, EvalArgs, GenArgs,
    Phase, TrainArgs,
};
use npisim_core::config::{RunConfig, SimConfig};
use npisim_core::gridsim::{
    cnormal, generate_channel, generate_dataset, simulate_slot, slot_stream, streams, Dataset,
    DatasetSpec, PilotPattern, SinrSampling, SplitRatios,
};
use npisim_core::linest;
use npisim_core::npinet::{self, NpiVariant};
use npisim_core::sinrest;

fn pass_line(criterion: &str, pass: bool, detail: &str) {
    println!("criterion {criterion}: [{}] {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Shared desk-scale fixture
// ---------------------------------------------------------------------------

struct Fixture {
    _tmp: tempfile::TempDir,
    data: PathBuf,
    models: PathBuf,
    /// Snapshot of the bundle right after the supervised NPI step, before
    /// joint training re-targets the networks.
    models_step1: PathBuf,
    eval_rows: Vec<EvalRow>,
    down_rows: Vec<EvalRow>,
    run: RunConfig,
    full_secs: f64,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let t0 = Instant::now();
        let tmp = tempfile::tempdir().expect("tempdir");
        let data = tmp.path().join("data");
        let models = tmp.path().join("models");
        let run = RunConfig::default();

        cmd_gen(&GenArgs { count: 8000, out: data.clone(), ..GenArgs::default() })
            .expect("fixture gen");
        let models_step1 = tmp.path().join("models_step1");
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
            .unwrap_or_else(|e| panic!("fixture train {:?}: {e}", phase));
            println!("fixture: phase {:?} took {:.0}s", phase, t.elapsed().as_secs_f64());
            if phase == Phase::Npi1 {
                std::fs::create_dir_all(&models_step1).unwrap();
                for entry in std::fs::read_dir(&models).unwrap() {
                    let entry = entry.unwrap();
                    std::fs::copy(entry.path(), models_step1.join(entry.file_name())).unwrap();
                }
            }
        }

        let eval_csv = tmp.path().join("eval.csv");
        let eval_rows = cmd_eval(&EvalArgs {
            config: None,
            data: data.clone(),
            models: Some(models.clone()),
            methods: Method::ALL.to_vec(),
            out: eval_csv,
            sinr_from_label: false,
        })
        .expect("fixture eval");

        let down_csv = tmp.path().join("downstream.csv");
        let t = Instant::now();
        let down_rows = cmd_downstream(&DownstreamArgs {
            config: None,
            data: data.clone(),
            models: Some(models.clone()),
            methods: Method::ALL.to_vec(),
            np_list: vec![4, 8, 16],
            rt_list: vec![0.25, 0.5, 0.8],
            sinr_db: 8.0,
            out: down_csv,
            sinr_from_label: false,
        })
        .expect("fixture downstream");
        println!("fixture: downstream took {:.0}s", t.elapsed().as_secs_f64());

        let full_secs = t0.elapsed().as_secs_f64();
        println!("fixture: full gen+train+eval+downstream took {full_secs:.0}s");
        Fixture { _tmp: tmp, data, models, models_step1, eval_rows, down_rows, run, full_secs }
    })
}

fn mean_at(rows: &[EvalRow], method: &str, sinr: f64) -> f64 {
    rows.iter()
        .find(|r| {
            r.metric == "recon_nmse" && r.method == method && r.sinr_db == Some(sinr)
        })
        .map(|r| r.value)
        .unwrap_or(f64::NAN)
}

fn stderr_at(rows: &[EvalRow], method: &str, sinr: f64) -> f64 {
    rows.iter()
        .find(|r| {
            r.metric == "recon_nmse_stderr" && r.method == method && r.sinr_db == Some(sinr)
        })
        .map(|r| r.value)
        .unwrap_or(f64::NAN)
}

fn downstream_at(rows: &[EvalRow], method: &str, np: usize, rt: f64) -> f64 {
    rows.iter()
        .find(|r| {
            r.metric == "downstream_nmse"
                && r.method == method
                && r.n_p == Some(np)
                && r.r_t.map(|v| (v - rt).abs() < 1e-9) == Some(true)
        })
        .map(|r| r.value)
        .unwrap_or(f64::NAN)
}

// ---------------------------------------------------------------------------
// Criterion 1: projection algebra
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_projection_algebra() {
    let t0 = Instant::now();
    let mut rng = slot_stream(4242, 0, 0);
    let mut worst = 0.0f64;
    for &m in &[2usize, 8, 32] {
        for _ in 0..1000 {
            let h: Vec<Complex64> = (0..m).map(|_| cnormal(&mut rng)).collect();
            let proj = linest::projection_matrices(&h, 0.0);
            let p = &proj.p_ch;
            let p_norm: f64 =
                p.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt().max(1e-30);
            let mut e_idem = 0.0f64;
            let mut e_herm = 0.0f64;
            let mut e_sum = 0.0f64;
            for i in 0..m {
                for j in 0..m {
                    let mut pp = Complex64::ZERO;
                    for k in 0..m {
                        pp += p[i * m + k] * p[k * m + j];
                    }
                    e_idem += (pp - p[i * m + j]).norm_sqr();
                    e_herm += (p[i * m + j] - p[j * m + i].conj()).norm_sqr();
                    let id = if i == j { Complex64::ONE } else { Complex64::ZERO };
                    e_sum += (p[i * m + j] + proj.p_orth[i * m + j] - id).norm_sqr();
                }
            }
            worst = worst.max(e_idem.sqrt() / p_norm);
            worst = worst.max(e_herm.sqrt() / p_norm);
            worst = worst.max(e_sum.sqrt() / (m as f64).sqrt());
            let h_norm: f64 = h.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            let mut e_fix = 0.0f64;
            for i in 0..m {
                let mut ph = Complex64::ZERO;
                for j in 0..m {
                    ph += p[i * m + j] * h[j];
                }
                e_fix += (ph - h[i]).norm_sqr();
            }
            worst = worst.max(e_fix.sqrt() / h_norm);
            let trace: Complex64 = (0..m).map(|i| p[i * m + i]).sum();
            worst = worst.max((trace - Complex64::ONE).norm());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    pass_line(
        "1 (projection algebra)",
        worst < 1e-10 && secs < 5.0,
        &format!("worst relative error {worst:.2e} over 3000 draws in {secs:.2}s (budget 5s)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: perfect-CSI NPI decomposition
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_npi_decomposition() {
    let t0 = Instant::now();
    let cfg = SimConfig::default();
    let pattern = PilotPattern::build(&cfg);
    let spec = DatasetSpec {
        count: 1000,
        ratios: SplitRatios { pretrain: 1.0, downstream_train: 0.0 },
        train_sampling: SinrSampling::Uniform,
        test_sampling: SinrSampling::Uniform,
    };
    let ds = generate_dataset(&cfg, &spec).expect("dataset");
    let mut worst = 0.0f64;
    for slot in &ds.slots {
        let labels = slot.labels.as_ref().unwrap();
        let h = labels.h.as_ref().unwrap();
        for (r, &(l, k)) in pattern.positions().iter().enumerate() {
            let hv = h.at(l, k);
            let proj = linest::projection_matrices(hv, 0.0);
            let (w_ch, w_orth) =
                linest::extract_npi(&proj, hv, slot.x_p[r], slot.y_p_at(r, cfg.m));
            let w_norm: f64 = labels.w_pilot[r * cfg.m..(r + 1) * cfg.m]
                .iter()
                .map(|c| c.norm_sqr())
                .sum::<f64>()
                .sqrt()
                .max(1e-30);
            let mut err = 0.0f64;
            for i in 0..cfg.m {
                let sum = w_ch[i] + w_orth[i];
                err += (sum - labels.w_pilot[r * cfg.m + i]).norm_sqr();
            }
            worst = worst.max(err.sqrt() / w_norm);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    pass_line(
        "2 (NPI decomposition)",
        worst < 1e-10 && secs < 10.0,
        &format!("worst relative error {worst:.2e} over 1000 slots in {secs:.2}s (budget 10s)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: gradient verification
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_gradient_verification() {
    let t0 = Instant::now();
    let result = checks::cmd_gradcheck();
    let secs = t0.elapsed().as_secs_f64();
    pass_line(
        "3 (gradient verification)",
        result.is_ok() && secs < 60.0,
        &format!("all layer types and the joint graph at 3 seeds in {secs:.2}s (budget 60s)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: simulator calibration
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_simulator_calibration() {
    let t0 = Instant::now();
    let cfg = SimConfig { seed: 11, ..SimConfig::default() };
    let pattern = PilotPattern::build(&cfg);
    let spec = DatasetSpec {
        count: 1000,
        ratios: SplitRatios { pretrain: 1.0, downstream_train: 0.0 },
        train_sampling: SinrSampling::Uniform,
        test_sampling: SinrSampling::Uniform,
    };
    let ds = generate_dataset(&cfg, &spec).expect("dataset");
    let mut worst_sinr = 0.0f64;
    let mut worst_rel = 0.0f64;
    for (idx, slot) in ds.slots.iter().enumerate() {
        let labels = slot.labels.as_ref().unwrap();
        let h = labels.h.as_ref().unwrap();
        let w = labels.w.as_ref().unwrap();
        let target = ds.manifest.target_sinr(&cfg, idx);
        // Payload symbols are not stored in the slot; replay the documented
        // draw order so the identity is checked on every RE.
        let mut replay = slot_stream(cfg.seed, idx as u64, streams::SLOT);
        let x_p = npisim_core::gridsim::random_qpsk(&mut replay, pattern.len());
        let payload = npisim_core::gridsim::random_symbols(
            &mut replay,
            cfg.modulation,
            cfg.l * cfg.k - pattern.len(),
        );
        for (r, &x) in x_p.iter().enumerate() {
            assert_eq!(x, slot.x_p[r], "pilot replay mismatch");
        }
        let mut p_s = 0.0;
        let mut pilot_row = 0;
        let mut data_row = 0;
        let mut payload_iter = payload.iter();
        for l in 0..cfg.l {
            for k in 0..cfg.k {
                let base = (l * cfg.k + k) * cfg.m;
                let (y, x): (&[Complex64], Complex64) = if let Some(r) = pattern.index_of(l, k) {
                    let row = &slot.y_p[pilot_row * cfg.m..(pilot_row + 1) * cfg.m];
                    pilot_row += 1;
                    (row, slot.x_p[r])
                } else {
                    let row = &slot.y_d[data_row * cfg.m..(data_row + 1) * cfg.m];
                    data_row += 1;
                    (row, *payload_iter.next().unwrap())
                };
                let hv = h.at(l, k);
                for i in 0..cfg.m {
                    let signal = y[i] - w[base + i];
                    p_s += signal.norm_sqr();
                    let rhs = hv[i] * x + w[base + i];
                    worst_rel = worst_rel.max((y[i] - rhs).norm() / y[i].norm().max(1e-9));
                }
            }
        }
        let p_w: f64 = w.iter().map(|c| c.norm_sqr()).sum();
        let realized = 10.0 * (p_s / p_w).log10();
        worst_sinr = worst_sinr.max((realized - target).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    pass_line(
        "4 (simulator calibration)",
        worst_sinr < 0.1 && worst_rel < 1e-6 && secs < 30.0,
        &format!(
            "worst SINR deviation {worst_sinr:.2e} dB, worst identity error {worst_rel:.2e} over 1000 slots in {secs:.1}s (budget 30s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: Fig-6-style trend and ordering at desk scale
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_sinr_trend_and_ordering() {
    let fx = fixture();
    let grid = [0.0, 4.0, 8.0, 12.0, 16.0];

    // Strict decrease for every signal-dependent method. The perfect-CSI
    // reference uses true pilot CSI, so its reconstruction error has no
    // SINR dependence by construction and is excluded from the trend check
    // (its role here is the 8 dB ordering bound).
    let mut all = true;
    let mut detail = String::new();
    for method in ["ls-li", "lmmse", "transformer", "proposed"] {
        let means: Vec<f64> = grid.iter().map(|&s| mean_at(&fx.eval_rows, method, s)).collect();
        let monotone = means.windows(2).all(|w| w[1] < w[0]);
        all &= monotone;
        detail.push_str(&format!(
            "{method}: [{}]{} ",
            means.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
            if monotone { "" } else { " NOT DECREASING" }
        ));
    }

    let perfect = mean_at(&fx.eval_rows, "perfect", 8.0);
    let proposed = mean_at(&fx.eval_rows, "proposed", 8.0);
    let transformer = mean_at(&fx.eval_rows, "transformer", 8.0);
    let lmmse = mean_at(&fx.eval_rows, "lmmse", 8.0);
    let lsli = mean_at(&fx.eval_rows, "ls-li", 8.0);
    let ordering = perfect < proposed
        && proposed < transformer
        && transformer < lmmse.min(lsli);
    all &= ordering;
    detail.push_str(&format!(
        "| 8 dB: perfect {perfect:.4} < proposed {proposed:.4} < transformer {transformer:.4} < min(lmmse {lmmse:.4}, ls-li {lsli:.4})"
    ));

    let se_prop = stderr_at(&fx.eval_rows, "proposed", 8.0);
    let se_lsli = stderr_at(&fx.eval_rows, "ls-li", 8.0);
    let separated = proposed + 1.96 * se_prop < lsli - 1.96 * se_lsli;
    all &= separated;
    detail.push_str(&format!(
        " | CI separation proposed vs ls-li: {}",
        if separated { "yes" } else { "NO" }
    ));

    let in_budget = fx.full_secs < 45.0 * 60.0;
    all &= in_budget;
    detail.push_str(&format!(" | full run {:.0}s (budget 2700s)", fx.full_secs));

    pass_line("5 (SINR trend + ordering)", all, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 6: downstream N_p trend
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_np_trend() {
    let fx = fixture();
    let nps = [4usize, 8, 16];
    let rt = 0.5;
    let mut all = true;
    let mut detail = String::new();
    for method in Method::ALL {
        let vals: Vec<f64> =
            nps.iter().map(|&np| downstream_at(&fx.down_rows, method.name(), np, rt)).collect();
        let monotone = vals.windows(2).all(|w| w[1] >= w[0]);
        all &= monotone;
        detail.push_str(&format!(
            "{}: [{}]{} ",
            method.name(),
            vals.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
            if monotone { "" } else { " NOT NON-DECREASING" }
        ));
    }
    for &np in &nps {
        let p = downstream_at(&fx.down_rows, "proposed", np, rt);
        let l = downstream_at(&fx.down_rows, "ls-li", np, rt);
        let ok = p < l;
        all &= ok;
        if !ok {
            detail.push_str(&format!("| proposed !< ls-li at N_p={np} ({p:.4} vs {l:.4}) "));
        }
    }
    pass_line("6 (N_p trend)", all, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 7: downstream R_t trend
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_rt_trend() {
    let fx = fixture();
    let rts = [0.25, 0.5, 0.8];
    let np = 16;
    let mut all = true;
    let mut detail = String::new();
    for method in Method::ALL {
        let vals: Vec<f64> =
            rts.iter().map(|&rt| downstream_at(&fx.down_rows, method.name(), np, rt)).collect();
        let monotone = vals.windows(2).all(|w| w[1] <= w[0]);
        all &= monotone;
        detail.push_str(&format!(
            "{}: [{}]{} ",
            method.name(),
            vals.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
            if monotone { "" } else { " NOT NON-INCREASING" }
        ));
    }
    let low = downstream_at(&fx.down_rows, "proposed", np, 0.25);
    let high = downstream_at(&fx.down_rows, "ls-li", np, 0.8);
    let cross = low < high;
    all &= cross;
    detail.push_str(&format!(
        "| proposed@0.25 ({low:.4}) < ls-li@0.8 ({high:.4}): {}",
        if cross { "yes" } else { "NO" }
    ));
    pass_line("7 (R_t trend)", all, &detail);
}

// ---------------------------------------------------------------------------
// Criterion 8: SINR estimator accuracy and separability
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_sinr_estimator() {
    let fx = fixture();
    let model = sinrest::SinrModel::load(&fx.models, &fx.run.sim, &fx.run.arch)
        .expect("trained sinr model");

    // Held-out uniform-SINR slots (fresh seed, same config otherwise).
    let cfg = SimConfig { seed: 99, ..fx.run.sim.clone() };
    let spec = DatasetSpec {
        count: 500,
        ratios: SplitRatios { pretrain: 1.0, downstream_train: 0.0 },
        train_sampling: SinrSampling::Uniform,
        test_sampling: SinrSampling::Uniform,
    };
    let ds = generate_dataset(&cfg, &spec).expect("held-out set");
    let targets: Vec<f64> =
        ds.slots.iter().map(|s| s.labels.as_ref().unwrap().sinr_db).collect();
    let ests: Vec<f64> =
        ds.slots.iter().map(|s| sinrest::estimate_sinr(s, &model).unwrap()).collect();
    let mse = targets.iter().zip(&ests).map(|(t, e)| (t - e).powi(2)).sum::<f64>()
        / targets.len() as f64;
    let mean_t = targets.iter().sum::<f64>() / targets.len() as f64;
    let var_t = targets.iter().map(|t| (t - mean_t).powi(2)).sum::<f64>()
        / targets.len() as f64;

    // Separability on the fixture's test split (200 slots per grid point).
    let test = Dataset::load(&fx.data, npisim_core::gridsim::LoadOptions::default())
        .expect("fixture dataset");
    let mean_est = |sinr: f64| -> (f64, usize) {
        let slots: Vec<_> = test
            .slots_in(npisim_core::gridsim::Split::Test)
            .iter()
            .filter(|s| (s.labels.as_ref().unwrap().sinr_db - sinr).abs() < 1e-6)
            .collect();
        let sum: f64 =
            slots.iter().map(|s| sinrest::estimate_sinr(s, &model).unwrap()).sum();
        (sum / slots.len() as f64, slots.len())
    };
    let (hi, n_hi) = mean_est(16.0);
    let (lo, n_lo) = mean_est(0.0);

    let ok = mse < 0.25 * var_t && hi - lo >= 8.0 && n_hi >= 200 && n_lo >= 200;
    pass_line(
        "8 (SINR estimator)",
        ok,
        &format!(
            "held-out MSE {mse:.3} dB^2 vs 0.25*var {:.3}; mean@16dB {hi:.2} - mean@0dB {lo:.2} = {:.2} dB (need >= 8) over {n_hi}/{n_lo} slots",
            0.25 * var_t,
            hi - lo
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: ablation bracket
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_ablation_bracket() {
    let fx = fixture();
    let dataset = Dataset::load(&fx.data, npisim_core::gridsim::LoadOptions::default())
        .expect("fixture dataset");
    let rho = npisim_cli::eval::fit_rho(&dataset, 200);
    let ctx = MethodContext::build(
        &fx.run,
        &dataset,
        Some(&fx.models),
        &[Method::Proposed],
        rho,
        true,
    )
    .expect("context");

    // 500 fresh slots at exactly 8 dB.
    let cfg = SimConfig { seed: 77, ..fx.run.sim.clone() };
    let pattern = PilotPattern::build(&cfg);
    let bundle = ctx.bundle.as_ref().unwrap();
    let mut zero_sum = 0.0;
    let mut trained_sum = 0.0;
    let mut oracle_sum = 0.0;
    let n = 500;
    for idx in 0..n {
        let mut ch = slot_stream(cfg.seed, idx, streams::CHANNEL);
        let h = generate_channel(&cfg, &mut ch);
        let mut sr = slot_stream(cfg.seed, idx, streams::SLOT);
        let slot = simulate_slot(&h, &pattern, &cfg, 8.0, &mut sr);
        let labels = slot.labels.as_ref().unwrap();
        let truth = npisim_cli::eval::truth_grid(labels.h.as_ref().unwrap(), cfg.l, cfg.k);
        let w_pilot = labels.w_pilot.clone();
        let run_variant = |variant: NpiVariant<'_>| -> f64 {
            let grid = npinet::run_pipeline_variant(
                &slot,
                bundle,
                &pattern,
                npinet::SinrSource::Estimator(ctx.sinr_model.as_ref().unwrap()),
                variant,
            )
            .unwrap();
            linest::nmse(&grid, &truth).unwrap()
        };
        zero_sum += run_variant(NpiVariant::Zero);
        trained_sum += run_variant(NpiVariant::Trained);
        oracle_sum += run_variant(NpiVariant::Oracle(&w_pilot));
    }
    let (zero, trained, oracle) =
        (zero_sum / n as f64, trained_sum / n as f64, oracle_sum / n as f64);
    let ok = zero >= trained && trained >= oracle && zero > oracle;
    pass_line(
        "9 (ablation bracket)",
        ok,
        &format!(
            "mean NMSE over 500 slots at 8 dB: zero-NPI {zero:.4} >= trained {trained:.4} >= oracle {oracle:.4} (outer strict)"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: end-to-end determinism
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_determinism() {
    // Small-scale rerun of the full chain; every artifact byte-identical.
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("run.toml");
    std::fs::write(
        &config_path,
        r#"
[sim]
l = 6
k = 12
m = 4
k_ext = 4
pilot_symbols = [1, 4]
pilot_spacing = 4
seed = 3

[train]
epochs = 2
batch_size = 8

[arch]
refine_hidden = 32
npi_hidden = 16
fusion_hidden = 16
completion_hidden = 32
d_model = 16
d_ff = 16
pos_dims = 4
baseline_head_hidden = 16
sinr_point_dim = 16
histogram_bins = 8
sinr_head_hidden = 16

[schedule]
refine_epochs = 2
npi1_epochs = 2
npi2_epochs = 2
sinr_epochs = 2
baseline_epochs = 2
clean_completion_epochs = 2
"#,
    )
    .unwrap();

    let run_once = |root: &std::path::Path| {
        let data = root.join("data");
        let models = root.join("models");
        cmd_gen(&GenArgs {
            config: Some(config_path.clone()),
            count: 120,
            eval_grid: vec![0.0, 8.0],
            ratios: vec![0.5, 0.25, 0.25],
            ..GenArgs {
                out: data.clone(),
                ..GenArgs::default()
            }
        })
        .unwrap();
        for phase in [Phase::Refine, Phase::Npi1, Phase::Npi2, Phase::Sinr, Phase::Baseline] {
            cmd_train(&TrainArgs {
                config: Some(config_path.clone()),
                phase,
                data: data.clone(),
                models: models.clone(),
                epochs: None,
                seed: None,
            })
            .unwrap();
        }
        cmd_eval(&EvalArgs {
            config: Some(config_path.clone()),
            data: data.clone(),
            models: Some(models.clone()),
            methods: Method::ALL.to_vec(),
            out: root.join("eval.csv"),
            sinr_from_label: false,
        })
        .unwrap();
    };
    run_once(&tmp.path().join("a"));
    run_once(&tmp.path().join("b"));

    let mut compared = 0;
    let mut identical = true;
    let mut mismatch = String::new();
    for rel in [
        "data/dataset.npis",
        "data/manifest.txt",
        "models/refine.npim",
        "models/npi_ch.npim",
        "models/npi_orth.npim",
        "models/fusion.npim",
        "models/completion.npim",
        "models/clean_completion.npim",
        "models/baseline.npim",
        "models/sinr_point.npim",
        "models/sinr_post.npim",
        "models/sinr_conv.npim",
        "models/sinr_head.npim",
        "models/refine_loss.csv",
        "models/npi2_loss.csv",
        "eval.csv",
    ] {
        let a = std::fs::read(tmp.path().join("a").join(rel)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(rel)).unwrap();
        if a != b {
            identical = false;
            mismatch.push_str(rel);
            mismatch.push(' ');
        }
        compared += 1;
    }
    pass_line(
        "10 (determinism)",
        identical,
        &format!("{compared} artifacts byte-identical across reruns {mismatch}"),
    );
}


// ---------------------------------------------------------------------------
// Desk-scale spec examples beyond the numbered criteria
// ---------------------------------------------------------------------------

/// After the supervised NPI step, the learned estimate must beat the raw
/// split sum as an NPI estimate on held-out pilots (pooled over slots).
#[test]
fn example_step1_npi_beats_raw_split_sum() {
    let fx = fixture();
    let dataset = Dataset::load(&fx.data, npisim_core::gridsim::LoadOptions::default())
        .expect("fixture dataset");
    let (bundle, _) =
        npinet::load_bundle(&fx.models_step1, &fx.run.sim).expect("step-1 bundle");
    let pattern = PilotPattern::build(&fx.run.sim);
    let m = fx.run.sim.m;
    let mut raw_err = 0.0;
    let mut learned_err = 0.0;
    let mut norm = 0.0;
    for slot in dataset
        .slots_in(npisim_core::gridsim::Split::Test)
        .iter()
        .filter(|s| (s.labels.as_ref().unwrap().sinr_db - 8.0).abs() < 1e-6)
    {
        let labels = slot.labels.as_ref().unwrap();
        let h_ini = linest::ls_estimate(&slot.x_p, &slot.y_p, &pattern, m).unwrap();
        let refined = npinet::refine_csi(&h_ini, &bundle.refine).unwrap();
        let split = npinet::split_npi(slot, &refined, bundle.epsilon_scale);
        let w_tilde = npinet::estimate_npi(&split, labels.sinr_db, &bundle).unwrap();
        for (i, w) in labels.w_pilot.iter().enumerate() {
            let raw = split.w_ch[i] + split.w_orth[i];
            raw_err += (raw - w).norm_sqr();
            learned_err += (w_tilde[i] - w).norm_sqr();
            norm += w.norm_sqr();
        }
    }
    println!(
        "step-1 NPI estimate at 8 dB: learned NMSE {:.4}, raw split sum NMSE {:.4}",
        learned_err / norm,
        raw_err / norm
    );
    assert!(
        learned_err < raw_err,
        "learned NPI NMSE {} >= raw split sum NMSE {}",
        learned_err / norm,
        raw_err / norm
    );
}

/// With the oracle NPI injected, the pilot-RE NMSE after subtraction is
/// strictly below the trained estimate's: the learned estimator operates
/// between the zero and oracle brackets at the pilot level too.
#[test]
fn example_pilot_level_oracle_bound() {
    let fx = fixture();
    let dataset = Dataset::load(&fx.data, npisim_core::gridsim::LoadOptions::default())
        .expect("fixture dataset");
    let rho = npisim_cli::eval::fit_rho(&dataset, 50);
    let ctx = MethodContext::build(
        &fx.run,
        &dataset,
        Some(&fx.models),
        &[Method::Proposed],
        rho,
        true,
    )
    .expect("context");
    let mut zero = 0.0;
    let mut trained = 0.0;
    let mut oracle = 0.0;
    let slots: Vec<_> = dataset
        .slots_in(npisim_core::gridsim::Split::Test)
        .iter()
        .filter(|s| (s.labels.as_ref().unwrap().sinr_db - 8.0).abs() < 1e-6)
        .collect();
    for slot in &slots {
        let w_pilot = slot.labels.as_ref().unwrap().w_pilot.clone();
        zero += npisim_cli::eval::pilot_nmse_variant(slot, &ctx, NpiVariant::Zero).unwrap();
        trained += npisim_cli::eval::pilot_nmse_variant(slot, &ctx, NpiVariant::Trained).unwrap();
        oracle +=
            npisim_cli::eval::pilot_nmse_variant(slot, &ctx, NpiVariant::Oracle(&w_pilot)).unwrap();
    }
    let n = slots.len() as f64;
    println!(
        "pilot-RE NMSE at 8 dB: zero {:.4} > trained {:.4} > oracle {:.2e}",
        zero / n,
        trained / n,
        oracle / n
    );
    assert!(oracle < trained && trained < zero);
}


/// Joint step-2 training (gradients into the NPI networks) must beat the
/// ablation that trains only the completion on the step-1 suppressed
/// estimates, under the same epoch budget.
#[test]
fn example_joint_step2_beats_completion_only() {
    let fx = fixture();
    let dataset = Dataset::load(
        &fx.data,
        npisim_core::gridsim::LoadOptions { keep_y_d: false, keep_h: true, keep_w_full: false },
    )
    .expect("fixture dataset");
    let pattern = PilotPattern::build(&fx.run.sim);
    let (mut ablated, _) =
        npinet::load_bundle(&fx.models_step1, &fx.run.sim).expect("step-1 bundle");
    let tcfg = fx.run.train.with_epochs(fx.run.schedule.npi2_epochs);
    npinet::train_step2_completion_only(
        dataset.slots_in(npisim_core::gridsim::Split::Pretrain),
        &pattern,
        &mut ablated,
        &tcfg,
    )
    .expect("completion-only training");

    let (joint, _) = npinet::load_bundle(&fx.models, &fx.run.sim).expect("joint bundle");
    let mut joint_sum = 0.0;
    let mut ablated_sum = 0.0;
    let mut n = 0usize;
    for slot in dataset.slots_in(npisim_core::gridsim::Split::Test) {
        let labels = slot.labels.as_ref().unwrap();
        let h = labels.h.as_ref().unwrap();
        let truth = npisim_cli::eval::truth_grid(h, fx.run.sim.l, fx.run.sim.k);
        let g_joint =
            npinet::run_pipeline(slot, &joint, &pattern, npinet::SinrSource::Label).unwrap();
        let g_ablated =
            npinet::run_pipeline(slot, &ablated, &pattern, npinet::SinrSource::Label).unwrap();
        joint_sum += linest::nmse(&g_joint, &truth).unwrap();
        ablated_sum += linest::nmse(&g_ablated, &truth).unwrap();
        n += 1;
    }
    println!(
        "held-out all-RE NMSE: joint {:.4} vs completion-only {:.4} over {n} slots",
        joint_sum / n as f64,
        ablated_sum / n as f64
    );
    assert!(
        joint_sum < ablated_sum,
        "joint step 2 must beat completion-only: {} vs {}",
        joint_sum / n as f64,
        ablated_sum / n as f64
    );
}

/// The trained completion must beat linear interpolation on identical
/// pilot inputs (the suppressed estimates) at 8 dB.
#[test]
fn example_completion_beats_interpolation_on_same_inputs() {
    let fx = fixture();
    let dataset = Dataset::load(&fx.data, npisim_core::gridsim::LoadOptions::default())
        .expect("fixture dataset");
    let rho = npisim_cli::eval::fit_rho(&dataset, 50);
    let ctx = MethodContext::build(
        &fx.run,
        &dataset,
        Some(&fx.models),
        &[Method::Proposed],
        rho,
        true,
    )
    .expect("context");
    let bundle = ctx.bundle.as_ref().unwrap();
    let mut completion_sum = 0.0;
    let mut li_sum = 0.0;
    let mut n = 0usize;
    for slot in dataset
        .slots_in(npisim_core::gridsim::Split::Test)
        .iter()
        .filter(|s| (s.labels.as_ref().unwrap().sinr_db - 8.0).abs() < 1e-6)
    {
        let labels = slot.labels.as_ref().unwrap();
        let truth = npisim_cli::eval::truth_grid(
            labels.h.as_ref().unwrap(),
            fx.run.sim.l,
            fx.run.sim.k,
        );
        let est = npinet::pilot_estimate_variant(
            slot,
            bundle,
            &ctx.pattern,
            npinet::SinrSource::Estimator(ctx.sinr_model.as_ref().unwrap()),
            NpiVariant::Trained,
        )
        .unwrap();
        let completed =
            npinet::complete_csi(&est, &bundle.completion, fx.run.sim.l, fx.run.sim.k).unwrap();
        let interpolated = linest::linear_interpolate(&est, fx.run.sim.l, fx.run.sim.k).unwrap();
        completion_sum += linest::nmse(&completed, &truth).unwrap();
        li_sum += linest::nmse(&interpolated, &truth).unwrap();
        n += 1;
    }
    println!(
        "same-input all-RE NMSE at 8 dB: completion {:.4} vs interpolation {:.4} over {n} slots",
        completion_sum / n as f64,
        li_sum / n as f64
    );
    assert!(completion_sum < li_sum);
}
