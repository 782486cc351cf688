//! `report`: plot-ready per-axis CSVs plus ordering/trend verification.
//!
//! Produces one CSV per figure axis (`sinr.csv`, `np.csv`, `rt.csv`) with
//! header `method,x,value,ci95`, prints a pass/fail summary of the expected
//! orderings and monotone trends, and exits with code 4 when any check
//! fails.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::eval::{read_rows, EvalRow};
use crate::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct ReportArgs {
    pub eval: Option<PathBuf>,
    pub downstream: Option<PathBuf>,
    pub out: PathBuf,
    /// Reference SINR grid point for ordering checks.
    pub ref_sinr: f64,
    /// R_t slice used for the N_p axis (default: median available).
    pub np_axis_rt: Option<f64>,
    /// N_p slice used for the R_t axis (default: max available).
    pub rt_axis_np: Option<usize>,
}

/// One aggregated (method, x) point with its half-width confidence interval.
#[derive(Debug, Clone)]
pub struct AxisPoint {
    pub method: String,
    pub x: f64,
    pub value: f64,
    pub ci95: f64,
}

fn pair_mean_stderr<'a>(
    rows: &'a [EvalRow],
    metric: &str,
    key: impl Fn(&EvalRow) -> Option<f64> + 'a,
) -> Vec<AxisPoint> {
    let stderr_metric = format!("{metric}_stderr");
    let mut points = Vec::new();
    for row in rows.iter().filter(|r| r.metric == metric) {
        let Some(x) = key(row) else { continue };
        let se = rows
            .iter()
            .find(|r| {
                r.metric == stderr_metric
                    && r.method == row.method
                    && key(r) == Some(x)
                    && r.sinr_db == row.sinr_db
                    && r.n_p == row.n_p
                    && r.r_t == row.r_t
            })
            .map(|r| r.value)
            .unwrap_or(0.0);
        points.push(AxisPoint { method: row.method.clone(), x, value: row.value, ci95: 1.96 * se });
    }
    points.sort_by(|a, b| a.method.cmp(&b.method).then(a.x.partial_cmp(&b.x).unwrap()));
    points
}

fn write_axis_csv(path: &Path, points: &[AxisPoint]) -> CliResult<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "method,x,value,ci95")?;
    for p in points {
        writeln!(f, "{},{},{:e},{:e}", p.method, p.x, p.value, p.ci95)?;
    }
    Ok(())
}

fn methods_of(points: &[AxisPoint]) -> Vec<String> {
    let mut m: Vec<String> = points.iter().map(|p| p.method.clone()).collect();
    m.sort();
    m.dedup();
    m
}

fn series_for<'a>(points: &'a [AxisPoint], method: &str) -> Vec<&'a AxisPoint> {
    let mut s: Vec<&AxisPoint> = points.iter().filter(|p| p.method == method).collect();
    s.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap());
    s
}

fn value_at(points: &[AxisPoint], method: &str, x: f64) -> Option<AxisPoint> {
    points.iter().find(|p| p.method == method && (p.x - x).abs() < 1e-9).cloned()
}

struct Summary {
    lines: Vec<(bool, String)>,
}

impl Summary {
    fn new() -> Self {
        Summary { lines: Vec::new() }
    }

    fn check(&mut self, pass: bool, text: String) {
        self.lines.push((pass, text));
    }

    fn all_pass(&self) -> bool {
        self.lines.iter().all(|(p, _)| *p)
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for (pass, text) in &self.lines {
            let tag = if *pass { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "[{tag}] {text}");
        }
        out
    }
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<String> {
    let eval_rows = match &args.eval {
        Some(p) => read_rows(p)?,
        None => Vec::new(),
    };
    let down_rows = match &args.downstream {
        Some(p) => read_rows(p)?,
        None => Vec::new(),
    };
    if eval_rows.is_empty() && down_rows.is_empty() {
        return Err(CliError::Usage("report needs at least one non-empty input CSV".into()));
    }
    std::fs::create_dir_all(&args.out)?;
    let mut summary = Summary::new();

    // --- SINR axis ---
    if !eval_rows.is_empty() {
        let points = pair_mean_stderr(&eval_rows, "recon_nmse", |r| r.sinr_db);
        if points.is_empty() {
            return Err(CliError::Usage("eval CSV has no recon_nmse rows".into()));
        }
        write_axis_csv(&args.out.join("sinr.csv"), &points)?;
        for method in methods_of(&points) {
            let series = series_for(&points, &method);
            let monotone =
                series.windows(2).all(|w| w[1].value < w[0].value);
            summary.check(
                monotone,
                format!("reconstruction NMSE strictly decreasing in SINR for {method}"),
            );
        }
        // Ordering at the reference SINR.
        let at = |name: &str| value_at(&points, name, args.ref_sinr);
        if let (Some(perfect), Some(proposed), Some(transformer)) =
            (at("perfect"), at("proposed"), at("transformer"))
        {
            let classical = [at("lmmse"), at("ls-li")];
            let classical_min = classical
                .iter()
                .flatten()
                .map(|p| p.value)
                .fold(f64::INFINITY, f64::min);
            summary.check(
                perfect.value < proposed.value,
                format!(
                    "perfect ({:.4}) < proposed ({:.4}) at {} dB",
                    perfect.value, proposed.value, args.ref_sinr
                ),
            );
            summary.check(
                proposed.value < transformer.value,
                format!(
                    "proposed ({:.4}) < transformer ({:.4}) at {} dB",
                    proposed.value, transformer.value, args.ref_sinr
                ),
            );
            if classical_min.is_finite() {
                summary.check(
                    transformer.value < classical_min,
                    format!(
                        "transformer ({:.4}) < best classical ({:.4}) at {} dB",
                        transformer.value, classical_min, args.ref_sinr
                    ),
                );
            }
            if let Some(lsli) = at("ls-li") {
                let sep = proposed.value + proposed.ci95 < lsli.value - lsli.ci95;
                summary.check(
                    sep,
                    format!(
                        "95% CIs of proposed ({:.4}+/-{:.4}) and ls-li ({:.4}+/-{:.4}) do not overlap at {} dB",
                        proposed.value, proposed.ci95, lsli.value, lsli.ci95, args.ref_sinr
                    ),
                );
            }
        }
    }

    // --- downstream axes ---
    if !down_rows.is_empty() {
        let mut rts: Vec<f64> = down_rows.iter().filter_map(|r| r.r_t).collect();
        rts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let mut nps: Vec<usize> = down_rows.iter().filter_map(|r| r.n_p).collect();
        nps.sort_unstable();
        nps.dedup();
        if rts.is_empty() || nps.is_empty() {
            return Err(CliError::Usage("downstream CSV has no np/rt rows".into()));
        }
        let np_rt = args.np_axis_rt.unwrap_or(rts[rts.len() / 2]);
        let rt_np = args.rt_axis_np.unwrap_or(*nps.last().expect("non-empty"));

        let np_points = pair_mean_stderr(&down_rows, "downstream_nmse", |r| {
            (r.r_t.map(|v| (v - np_rt).abs() < 1e-9) == Some(true))
                .then_some(r.n_p.map(|v| v as f64))
                .flatten()
        });
        write_axis_csv(&args.out.join("np.csv"), &np_points)?;
        for method in methods_of(&np_points) {
            let series = series_for(&np_points, &method);
            if series.len() >= 2 {
                let monotone = series.windows(2).all(|w| w[1].value >= w[0].value);
                summary.check(
                    monotone,
                    format!("downstream NMSE non-decreasing in N_p for {method} (R_t={np_rt})"),
                );
            }
        }
        if let (Some(prop), Some(lsli)) = (
            np_points.iter().find(|p| p.method == "proposed"),
            np_points.iter().find(|p| p.method == "ls-li"),
        ) {
            let _ = (prop, lsli);
            for &np in &nps {
                let p = value_at(&np_points, "proposed", np as f64);
                let l = value_at(&np_points, "ls-li", np as f64);
                if let (Some(p), Some(l)) = (p, l) {
                    summary.check(
                        p.value < l.value,
                        format!("proposed ({:.4}) < ls-li ({:.4}) at N_p={np}", p.value, l.value),
                    );
                }
            }
        }

        let rt_points = pair_mean_stderr(&down_rows, "downstream_nmse", |r| {
            (r.n_p == Some(rt_np)).then_some(r.r_t).flatten()
        });
        write_axis_csv(&args.out.join("rt.csv"), &rt_points)?;
        for method in methods_of(&rt_points) {
            let series = series_for(&rt_points, &method);
            if series.len() >= 2 {
                let monotone = series.windows(2).all(|w| w[1].value <= w[0].value);
                summary.check(
                    monotone,
                    format!("downstream NMSE non-increasing in R_t for {method} (N_p={rt_np})"),
                );
            }
        }
        if rts.len() >= 2 {
            let lo = value_at(&rt_points, "proposed", rts[0]);
            let hi = value_at(&rt_points, "ls-li", *rts.last().expect("non-empty"));
            if let (Some(lo), Some(hi)) = (lo, hi) {
                summary.check(
                    lo.value < hi.value,
                    format!(
                        "proposed at R_t={} ({:.4}) < ls-li at R_t={} ({:.4})",
                        rts[0],
                        lo.value,
                        rts.last().expect("non-empty"),
                        hi.value
                    ),
                );
            }
        }
    }

    let text = summary.render();
    std::fs::write(args.out.join("summary.txt"), &text)?;
    print!("{text}");
    if summary.all_pass() {
        Ok(text)
    } else {
        Err(CliError::Check("one or more trend checks failed (see summary)".into()))
    }
}
