//! `downstream`: adjacent-subcarrier prediction over recovered CSI.
//!
//! Every method feeds the same closed-form ridge regressor: per antenna,
//! the symbol-averaged recovered CSI over the K transmission subcarriers
//! predicts the true CSI on the N_p adjacent extension subcarriers. The
//! regressor recipe (fit fraction, lambda grid, validation split) is
//! identical across methods; only the recovered CSI differs.

use std::path::PathBuf;

use num_complex::Complex64;
use rayon::prelude::*;

use npisim_core::gridsim::{Dataset, LoadOptions, SlotObservation, Split};
use npisim_core::linest::spd_solve;

use crate::eval::{fit_rho, recover, EvalRow, Method, MethodContext};
use crate::gen::load_run_config;
use crate::{CliError, CliResult};

pub const LAMBDA_GRID: [f64; 3] = [1e-4, 1e-2, 1.0];

/// Per-slot regression sample: inputs and targets for every antenna.
pub struct SlotSample {
    /// `[M][2K]` row-major symbol-averaged recovered CSI.
    pub x: Vec<f64>,
    /// `[M][2K_ext]` row-major symbol-averaged true extension CSI.
    pub y: Vec<f64>,
    pub m: usize,
    pub x_width: usize,
    pub y_width: usize,
}

/// Builds the regression sample for one slot under one method.
pub fn slot_sample(
    method: Method,
    slot: &SlotObservation,
    ctx: &MethodContext,
    k_ext: usize,
) -> CliResult<SlotSample> {
    let (l_n, k_n, m) = (ctx.l, ctx.k, ctx.m);
    let grid = recover(method, slot, ctx)?;
    let mut x = vec![0.0; m * 2 * k_n];
    for k in 0..k_n {
        for a in 0..m {
            let mut acc = Complex64::ZERO;
            for l in 0..l_n {
                acc += grid[(l * k_n + k) * m + a];
            }
            acc /= l_n as f64;
            x[a * 2 * k_n + 2 * k] = acc.re;
            x[a * 2 * k_n + 2 * k + 1] = acc.im;
        }
    }
    let labels = slot.labels()?;
    let h = labels.h.as_ref().ok_or_else(|| CliError::Usage("slot lacks H labels".into()))?;
    let mut y = vec![0.0; m * 2 * k_ext];
    for j in 0..k_ext {
        for a in 0..m {
            let mut acc = Complex64::ZERO;
            for l in 0..l_n {
                acc += h.at(l, k_n + j)[a];
            }
            acc /= l_n as f64;
            y[a * 2 * k_ext + 2 * j] = acc.re;
            y[a * 2 * k_ext + 2 * j + 1] = acc.im;
        }
    }
    Ok(SlotSample { x, y, m, x_width: 2 * k_n, y_width: 2 * k_ext })
}

/// Closed-form multi-output ridge with intercept via centering.
pub struct RidgeModel {
    /// `[d_in][d_out]` row-major.
    pub w: Vec<f64>,
    pub x_mean: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub d_in: usize,
    pub d_out: usize,
}

pub fn ridge_fit(rows_x: &[&[f64]], rows_y: &[&[f64]], d_out: usize, lambda: f64) -> RidgeModel {
    let n = rows_x.len();
    let d_in = rows_x[0].len();
    let mut x_mean = vec![0.0; d_in];
    let mut y_mean = vec![0.0; d_out];
    for r in rows_x {
        for (i, v) in r.iter().enumerate() {
            x_mean[i] += v;
        }
    }
    for r in rows_y {
        for (i, v) in r.iter().take(d_out).enumerate() {
            y_mean[i] += v;
        }
    }
    for v in &mut x_mean {
        *v /= n as f64;
    }
    for v in &mut y_mean {
        *v /= n as f64;
    }
    // Gram and cross-covariance on centered data.
    let mut gram = vec![0.0; d_in * d_in];
    let mut cross = vec![0.0; d_in * d_out];
    let mut xc = vec![0.0; d_in];
    for (rx, ry) in rows_x.iter().zip(rows_y) {
        for i in 0..d_in {
            xc[i] = rx[i] - x_mean[i];
        }
        for i in 0..d_in {
            let xi = xc[i];
            if xi != 0.0 {
                for j in i..d_in {
                    gram[i * d_in + j] += xi * xc[j];
                }
                for t in 0..d_out {
                    cross[i * d_out + t] += xi * (ry[t] - y_mean[t]);
                }
            }
        }
    }
    for i in 0..d_in {
        for j in 0..i {
            gram[i * d_in + j] = gram[j * d_in + i];
        }
        gram[i * d_in + i] += lambda;
    }
    let mut w = vec![0.0; d_in * d_out];
    let mut rhs = vec![0.0; d_in];
    for t in 0..d_out {
        for i in 0..d_in {
            rhs[i] = cross[i * d_out + t];
        }
        let col = spd_solve(&gram, d_in, &rhs).expect("ridge system is positive definite");
        for i in 0..d_in {
            w[i * d_out + t] = col[i];
        }
    }
    RidgeModel { w, x_mean, y_mean, d_in, d_out }
}

impl RidgeModel {
    pub fn predict(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.y_mean);
        for i in 0..self.d_in {
            let xi = x[i] - self.x_mean[i];
            if xi != 0.0 {
                let row = &self.w[i * self.d_out..(i + 1) * self.d_out];
                for (o, wv) in out.iter_mut().zip(row) {
                    *o += xi * wv;
                }
            }
        }
    }
}

/// Per-antenna regressors for one (method, N_p, R_t) cell.
pub struct DownstreamRegressor {
    pub per_antenna: Vec<RidgeModel>,
    pub lambda: f64,
    pub n_p: usize,
}

/// Fits the per-antenna ridge regressors on the first `n_fit` samples,
/// selecting lambda on an 80/20 split of those samples.
pub fn fit_downstream(samples: &[SlotSample], n_fit: usize, n_p: usize) -> DownstreamRegressor {
    let n_fit = n_fit.clamp(1, samples.len());
    let m = samples[0].m;
    let d_out = 2 * n_p;
    let n_val = (n_fit / 5).min(n_fit.saturating_sub(1));
    let n_core = n_fit - n_val;

    let antenna_rows = |range: std::ops::Range<usize>, a: usize| -> (Vec<&[f64]>, Vec<&[f64]>) {
        let xs: Vec<&[f64]> = samples[range.clone()]
            .iter()
            .map(|s| &s.x[a * s.x_width..(a + 1) * s.x_width])
            .collect();
        let ys: Vec<&[f64]> = samples[range]
            .iter()
            .map(|s| &s.y[a * s.y_width..a * s.y_width + d_out])
            .collect();
        (xs, ys)
    };

    let lambda = if n_val == 0 {
        LAMBDA_GRID[1]
    } else {
        let mut best = (f64::INFINITY, LAMBDA_GRID[1]);
        for &lambda in &LAMBDA_GRID {
            let mut err = 0.0;
            let mut norm = 0.0;
            for a in 0..m {
                let (xs, ys) = antenna_rows(0..n_core, a);
                let model = ridge_fit(&xs, &ys, d_out, lambda);
                let mut pred = vec![0.0; d_out];
                for s in &samples[n_core..n_fit] {
                    model.predict(&s.x[a * s.x_width..(a + 1) * s.x_width], &mut pred);
                    let truth = &s.y[a * s.y_width..a * s.y_width + d_out];
                    for (p, t) in pred.iter().zip(truth) {
                        err += (p - t).powi(2);
                        norm += t * t;
                    }
                }
            }
            let score = if norm > 0.0 { err / norm } else { err };
            if score < best.0 {
                best = (score, lambda);
            }
        }
        best.1
    };

    let per_antenna = (0..m)
        .map(|a| {
            let (xs, ys) = antenna_rows(0..n_fit, a);
            ridge_fit(&xs, &ys, d_out, lambda)
        })
        .collect();
    DownstreamRegressor { per_antenna, lambda, n_p }
}

/// Per-slot downstream NMSE of a fitted regressor.
pub fn downstream_slot_nmse(reg: &DownstreamRegressor, sample: &SlotSample) -> f64 {
    let d_out = 2 * reg.n_p;
    let mut err = 0.0;
    let mut norm = 0.0;
    let mut pred = vec![0.0; d_out];
    for (a, model) in reg.per_antenna.iter().enumerate() {
        model.predict(&sample.x[a * sample.x_width..(a + 1) * sample.x_width], &mut pred);
        let truth = &sample.y[a * sample.y_width..a * sample.y_width + d_out];
        for (p, t) in pred.iter().zip(truth) {
            err += (p - t).powi(2);
            norm += t * t;
        }
    }
    if norm > 0.0 {
        err / norm
    } else {
        err
    }
}

#[derive(Debug, Clone)]
pub struct DownstreamArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub models: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub np_list: Vec<usize>,
    pub rt_list: Vec<f64>,
    /// Test slots are filtered to this SINR grid point.
    pub sinr_db: f64,
    pub out: PathBuf,
    pub sinr_from_label: bool,
}

pub fn cmd_downstream(args: &DownstreamArgs) -> CliResult<Vec<EvalRow>> {
    if args.methods.is_empty() || args.np_list.is_empty() || args.rt_list.is_empty() {
        return Err(CliError::Usage("methods, --np and --rt must be non-empty".into()));
    }
    if args.rt_list.iter().any(|&r| !(0.0..=1.0).contains(&r) || r <= 0.0) {
        return Err(CliError::Usage("R_t fractions must be in (0, 1]".into()));
    }
    let run = load_run_config(&args.config)?;
    let dataset = Dataset::load(&args.data, LoadOptions::default())?;
    if dataset.config.hash() != run.sim.hash() {
        return Err(CliError::Usage("dataset was generated with a different sim config".into()));
    }
    let k_ext = dataset.config.k_ext;
    if let Some(&bad) = args.np_list.iter().find(|&&np| np == 0 || np > k_ext) {
        return Err(CliError::Usage(format!(
            "N_p {bad} outside 1..={k_ext} (the dataset's extension width)"
        )));
    }
    let rho = fit_rho(&dataset, 200);
    let ctx = MethodContext::build(
        &run,
        &dataset,
        args.models.as_deref(),
        &args.methods,
        rho,
        !args.sinr_from_label,
    )?;

    let fit_slots = dataset.slots_in(Split::DownstreamTrain);
    let test_slots: Vec<&SlotObservation> = dataset
        .slots_in(Split::Test)
        .iter()
        .filter(|s| {
            s.labels.as_ref().map(|l| (l.sinr_db - args.sinr_db).abs() < 1e-6).unwrap_or(false)
        })
        .collect();
    if fit_slots.is_empty() || test_slots.is_empty() {
        return Err(CliError::Usage(format!(
            "need downstream-train slots and test slots at {} dB",
            args.sinr_db
        )));
    }

    let seed = dataset.config.seed;
    let mut rows = Vec::new();
    for &method in &args.methods {
        let fit_samples: Vec<SlotSample> = fit_slots
            .par_iter()
            .map(|s| slot_sample(method, s, &ctx, k_ext))
            .collect::<CliResult<Vec<_>>>()?;
        let test_samples: Vec<SlotSample> = test_slots
            .par_iter()
            .map(|s| slot_sample(method, s, &ctx, k_ext))
            .collect::<CliResult<Vec<_>>>()?;
        for &n_p in &args.np_list {
            for &r_t in &args.rt_list {
                let n_fit = ((fit_samples.len() as f64) * r_t).ceil() as usize;
                let reg = fit_downstream(&fit_samples, n_fit, n_p);
                let nmses: Vec<f64> =
                    test_samples.iter().map(|s| downstream_slot_nmse(&reg, s)).collect();
                let n = nmses.len();
                let mean = nmses.iter().sum::<f64>() / n as f64;
                let var = nmses.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (n.max(2) - 1) as f64;
                let stderr = (var / n as f64).sqrt();
                rows.push(EvalRow {
                    method: method.name().into(),
                    sinr_db: Some(args.sinr_db),
                    n_p: Some(n_p),
                    r_t: Some(r_t),
                    metric: "downstream_nmse".into(),
                    value: mean,
                    slot_count: n,
                    seed,
                });
                rows.push(EvalRow {
                    method: method.name().into(),
                    sinr_db: Some(args.sinr_db),
                    n_p: Some(n_p),
                    r_t: Some(r_t),
                    metric: "downstream_nmse_stderr".into(),
                    value: stderr,
                    slot_count: n,
                    seed,
                });
            }
        }
    }
    crate::eval::write_rows(&args.out, &rows)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(rows)
}
