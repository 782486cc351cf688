//! `eval`: per-method reconstruction NMSE over the test split.
//!
//! Every method maps the same slot inputs (pilot pairs plus received
//! payload) to a full `[L][K][M]` CSI grid; the report aggregates per-slot
//! NMSE against the true grid, grouped by the slot's SINR grid point.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;

use npisim_core::config::RunConfig;
use npisim_core::gridsim::{ChannelGrid, Dataset, LoadOptions, PilotPattern, SlotObservation, Split};
use npisim_core::linest;
use npisim_core::npinet::{
    self, load_bundle, load_role, BundleRole, NpiVariant, PipelineBundle, SinrSource,
};
use npisim_core::sinrest::SinrModel;

use crate::gen::load_run_config;
use crate::{CliError, CliResult};

/// The benchmarked recovery methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    LsLi,
    Lmmse,
    Transformer,
    Proposed,
    Perfect,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::LsLi, Method::Lmmse, Method::Transformer, Method::Proposed, Method::Perfect];

    pub fn name(self) -> &'static str {
        match self {
            Method::LsLi => "ls-li",
            Method::Lmmse => "lmmse",
            Method::Transformer => "transformer",
            Method::Proposed => "proposed",
            Method::Perfect => "perfect",
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        match text {
            "ls-li" => Ok(Method::LsLi),
            "lmmse" => Ok(Method::Lmmse),
            "transformer" => Ok(Method::Transformer),
            "proposed" => Ok(Method::Proposed),
            "perfect" => Ok(Method::Perfect),
            other => Err(CliError::Usage(format!(
                "unknown method '{other}' (expected ls-li|lmmse|transformer|proposed|perfect)"
            ))),
        }
    }

    pub fn parse_list(text: &str) -> CliResult<Vec<Method>> {
        text.split(',').filter(|s| !s.trim().is_empty()).map(|s| Method::parse(s.trim())).collect()
    }
}

/// Everything the method runners need besides the slot itself.
pub struct MethodContext {
    pub pattern: PilotPattern,
    pub l: usize,
    pub k: usize,
    pub m: usize,
    pub rho_t: f64,
    pub rho_f: f64,
    pub bundle: Option<PipelineBundle>,
    pub sinr_model: Option<SinrModel>,
    pub baseline: Option<npisim_core::neural::NetworkModel>,
    pub clean_completion: Option<npisim_core::neural::NetworkModel>,
    pub arch: npisim_core::config::ArchConfig,
    /// SINR conditioning source for the proposed pipeline.
    pub use_sinr_estimator: bool,
}

impl MethodContext {
    /// Loads whatever models the requested methods need.
    pub fn build(
        run: &RunConfig,
        dataset: &Dataset,
        models_dir: Option<&Path>,
        methods: &[Method],
        rho: (f64, f64),
        use_sinr_estimator: bool,
    ) -> CliResult<Self> {
        let needs_bundle = methods.contains(&Method::Proposed);
        let needs_sinr = needs_bundle && use_sinr_estimator;
        let needs_baseline = methods.contains(&Method::Transformer);
        let needs_clean = methods.contains(&Method::Perfect);
        let dir = models_dir.ok_or(());
        let require_dir = |what: &str| -> CliResult<&Path> {
            dir.map_err(|_| CliError::Usage(format!("method set requires --models for {what}")))
        };
        let bundle = if needs_bundle {
            let (b, _) = load_bundle(require_dir("the proposed pipeline")?, &dataset.config)?;
            Some(b)
        } else {
            None
        };
        let sinr_model = if needs_sinr {
            Some(SinrModel::load(require_dir("the SINR estimator")?, &dataset.config, &run.arch)?)
        } else {
            None
        };
        let baseline = if needs_baseline {
            Some(load_role(require_dir("the transformer baseline")?, BundleRole::Baseline)?)
        } else {
            None
        };
        let clean_completion = if needs_clean {
            Some(load_role(require_dir("the perfect-CSI benchmark")?, BundleRole::CleanCompletion)?)
        } else {
            None
        };
        Ok(MethodContext {
            pattern: PilotPattern::build(&dataset.config),
            l: dataset.config.l,
            k: dataset.config.k,
            m: dataset.config.m,
            rho_t: rho.0,
            rho_f: rho.1,
            bundle,
            sinr_model,
            baseline,
            clean_completion,
            arch: run.arch.clone(),
            use_sinr_estimator,
        })
    }
}

/// True grid restricted to the transmission band, `[L][K][M]`.
pub fn truth_grid(h: &ChannelGrid, l_n: usize, k_n: usize) -> Vec<Complex64> {
    let mut t = Vec::with_capacity(l_n * k_n * h.m);
    for l in 0..l_n {
        for k in 0..k_n {
            t.extend_from_slice(h.at(l, k));
        }
    }
    t
}

/// Per-coefficient NPI variance at pilot REs, the noise term the pilot-domain
/// LMMSE needs.
pub fn pilot_noise_variance(slot: &SlotObservation) -> f64 {
    let labels = slot.labels.as_ref().expect("labeled slot");
    let n = labels.w_pilot.len().max(1);
    labels.w_pilot.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64
}

/// Runs one method on one slot.
pub fn recover(method: Method, slot: &SlotObservation, ctx: &MethodContext) -> CliResult<Vec<Complex64>> {
    let grid = match method {
        Method::LsLi => {
            let est = linest::ls_estimate(&slot.x_p, &slot.y_p, &ctx.pattern, ctx.m)?;
            linest::linear_interpolate(&est, ctx.l, ctx.k)?
        }
        Method::Lmmse => {
            let est = linest::ls_estimate(&slot.x_p, &slot.y_p, &ctx.pattern, ctx.m)?;
            let noise = pilot_noise_variance(slot);
            linest::lmmse_estimate(&est, ctx.rho_t, ctx.rho_f, noise, ctx.l, ctx.k)?.grid
        }
        Method::Transformer => {
            let net = ctx
                .baseline
                .as_ref()
                .ok_or_else(|| CliError::Usage("transformer model not loaded".into()))?;
            let est = linest::ls_estimate(&slot.x_p, &slot.y_p, &ctx.pattern, ctx.m)?;
            npinet::transformer_baseline(&est, net, &ctx.arch, ctx.l, ctx.k)?
        }
        Method::Proposed => {
            let bundle = ctx
                .bundle
                .as_ref()
                .ok_or_else(|| CliError::Usage("pipeline bundle not loaded".into()))?;
            let sinr = match (&ctx.sinr_model, ctx.use_sinr_estimator) {
                (Some(model), true) => SinrSource::Estimator(model),
                _ => SinrSource::Label,
            };
            npinet::run_pipeline(slot, bundle, &ctx.pattern, sinr)?
        }
        Method::Perfect => {
            let net = ctx
                .clean_completion
                .as_ref()
                .ok_or_else(|| CliError::Usage("clean completion model not loaded".into()))?;
            let labels = slot.labels()?;
            let h = labels
                .h
                .as_ref()
                .ok_or_else(|| CliError::Usage("perfect method needs H labels".into()))?;
            let mut h_hat = Vec::with_capacity(ctx.pattern.len() * ctx.m);
            for &(l, k) in ctx.pattern.positions() {
                h_hat.extend_from_slice(h.at(l, k));
            }
            let est = linest::PilotEstimate { h_hat, pattern: ctx.pattern.clone(), m: ctx.m };
            npinet::complete_csi(&est, net, ctx.l, ctx.k)?
        }
    };
    Ok(grid)
}

/// Reconstruction NMSE of one method on one slot.
pub fn recon_nmse(method: Method, slot: &SlotObservation, ctx: &MethodContext) -> CliResult<f64> {
    let grid = recover(method, slot, ctx)?;
    let labels = slot.labels()?;
    let h = labels.h.as_ref().ok_or_else(|| CliError::Usage("slot lacks H labels".into()))?;
    let truth = truth_grid(h, ctx.l, ctx.k);
    Ok(linest::nmse(&grid, &truth)?)
}

/// Pilot-RE NMSE of the suppression stages, before completion.
pub fn pilot_nmse_variant(
    slot: &SlotObservation,
    ctx: &MethodContext,
    variant: NpiVariant<'_>,
) -> CliResult<f64> {
    let bundle =
        ctx.bundle.as_ref().ok_or_else(|| CliError::Usage("pipeline bundle not loaded".into()))?;
    let sinr = match (&ctx.sinr_model, ctx.use_sinr_estimator) {
        (Some(model), true) => SinrSource::Estimator(model),
        _ => SinrSource::Label,
    };
    let est = npinet::pilot_estimate_variant(slot, bundle, &ctx.pattern, sinr, variant)?;
    let labels = slot.labels()?;
    let h = labels.h.as_ref().ok_or_else(|| CliError::Usage("slot lacks H labels".into()))?;
    let mut truth = Vec::with_capacity(ctx.pattern.len() * ctx.m);
    for &(l, k) in ctx.pattern.positions() {
        truth.extend_from_slice(h.at(l, k));
    }
    Ok(linest::nmse(&est.h_hat, &truth)?)
}

/// One CSV row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub method: String,
    pub sinr_db: Option<f64>,
    pub n_p: Option<usize>,
    pub r_t: Option<f64>,
    pub metric: String,
    pub value: f64,
    pub slot_count: usize,
    pub seed: u64,
}

pub const EVAL_HEADER: &str = "method,sinr_db,np,rt,metric,value,slot_count,seed";

impl EvalRow {
    pub fn to_csv(&self) -> String {
        let opt_f = |v: &Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let opt_u = |v: &Option<usize>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:e},{},{}",
            self.method,
            opt_f(&self.sinr_db),
            opt_u(&self.n_p),
            opt_f(&self.r_t),
            self.metric,
            self.value,
            self.slot_count,
            self.seed
        )
    }

    pub fn parse(line: &str) -> CliResult<EvalRow> {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(CliError::Io(format!("bad eval row '{line}'")));
        }
        let opt_f = |s: &str| -> CliResult<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| CliError::Io(format!("bad number '{s}'")))
            }
        };
        Ok(EvalRow {
            method: parts[0].to_string(),
            sinr_db: opt_f(parts[1])?,
            n_p: if parts[2].is_empty() {
                None
            } else {
                Some(parts[2].parse().map_err(|_| CliError::Io("bad np".into()))?)
            },
            r_t: opt_f(parts[3])?,
            metric: parts[4].to_string(),
            value: parts[5].parse().map_err(|_| CliError::Io("bad value".into()))?,
            slot_count: parts[6].parse().map_err(|_| CliError::Io("bad slot_count".into()))?,
            seed: parts[7].parse().map_err(|_| CliError::Io("bad seed".into()))?,
        })
    }
}

pub fn write_rows(path: &Path, rows: &[EvalRow]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{EVAL_HEADER}")?;
    for row in rows {
        writeln!(f, "{}", row.to_csv())?;
    }
    Ok(())
}

pub fn read_rows(path: &Path) -> CliResult<Vec<EvalRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == EVAL_HEADER => {}
        other => return Err(CliError::Io(format!("bad eval header {other:?}"))),
    }
    lines.map(EvalRow::parse).collect()
}

/// Fits the exponential correlation model on pretrain-split channels.
pub fn fit_rho(dataset: &Dataset, max_slots: usize) -> (f64, f64) {
    let slots = dataset.slots_in(Split::Pretrain);
    let grids: Vec<&ChannelGrid> = slots
        .iter()
        .take(max_slots)
        .filter_map(|s| s.labels.as_ref().and_then(|l| l.h.as_ref()))
        .collect();
    if grids.is_empty() {
        return (0.99, 0.9);
    }
    linest::fit_exponential_correlation(&grids)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub config: Option<PathBuf>,
    pub data: PathBuf,
    pub models: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub out: PathBuf,
    /// Use the trained SINR estimator (default) or the label for the
    /// proposed pipeline's conditioning input.
    pub sinr_from_label: bool,
}

/// Mean and standard error of per-slot NMSE per (method, SINR) cell.
pub fn cmd_eval(args: &EvalArgs) -> CliResult<Vec<EvalRow>> {
    if args.methods.is_empty() {
        return Err(CliError::Usage("no methods requested".into()));
    }
    let run = load_run_config(&args.config)?;
    let dataset = Dataset::load(&args.data, LoadOptions::default())?;
    if dataset.config.hash() != run.sim.hash() {
        return Err(CliError::Usage(
            "dataset was generated with a different sim config".into(),
        ));
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
    let test = dataset.slots_in(Split::Test);
    if test.is_empty() {
        return Err(CliError::Usage("dataset has an empty test split".into()));
    }

    // Group test slots by their SINR label (the grid value).
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for (i, slot) in test.iter().enumerate() {
        let sinr = slot.labels.as_ref().map(|l| l.sinr_db).unwrap_or(f64::NAN);
        match groups.iter_mut().find(|(g, _)| (*g - sinr).abs() < 1e-6) {
            Some((_, v)) => v.push(i),
            None => groups.push((sinr, vec![i])),
        }
    }
    groups.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let seed = dataset.config.seed;
    let mut rows = Vec::new();
    for &method in &args.methods {
        for (sinr, idx) in &groups {
            let nmses: Vec<f64> = idx
                .par_iter()
                .map(|&i| recon_nmse(method, &test[i], &ctx))
                .collect::<CliResult<Vec<f64>>>()?;
            let n = nmses.len();
            let mean = nmses.iter().sum::<f64>() / n as f64;
            let var = nmses.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (n.max(2) - 1) as f64;
            let stderr = (var / n as f64).sqrt();
            rows.push(EvalRow {
                method: method.name().into(),
                sinr_db: Some(*sinr),
                n_p: None,
                r_t: None,
                metric: "recon_nmse".into(),
                value: mean,
                slot_count: n,
                seed,
            });
            rows.push(EvalRow {
                method: method.name().into(),
                sinr_db: Some(*sinr),
                n_p: None,
                r_t: None,
                metric: "recon_nmse_stderr".into(),
                value: stderr,
                slot_count: n,
                seed,
            });
        }
    }
    write_rows(&args.out, &rows)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(rows)
}
