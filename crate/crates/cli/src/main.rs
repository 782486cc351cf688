use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use npisim_cli::{
    checks, cmd_downstream, cmd_eval, cmd_gen, cmd_report, cmd_train, parse_list, CliError,
    DownstreamArgs, EvalArgs, GenArgs, Method, Phase, ReportArgs, TrainArgs,
};

/// Link-level MIMO-OFDM channel estimation benchmark harness with
/// noise-plus-interference suppression.
#[derive(Parser)]
#[command(name = "npisim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled slot dataset.
    Gen {
        /// TOML run config (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8000)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Lower edge of the per-slot uniform SINR range (dB).
        #[arg(long)]
        sinr_min: Option<f64>,
        /// Upper edge of the per-slot uniform SINR range (dB).
        #[arg(long)]
        sinr_max: Option<f64>,
        /// Comma-separated SINR grid cycled over the test split.
        #[arg(long, default_value = "0,4,8,12,16")]
        eval_grid: String,
        /// pretrain,downstream,test split fractions.
        #[arg(long, default_value = "0.75,0.125,0.125")]
        ratios: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one phase: refine | npi1 | npi2 | sinr | baseline.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        phase: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate reconstruction NMSE per method over the test split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Comma-separated: ls-li,lmmse,transformer,proposed,perfect.
        #[arg(long, default_value = "ls-li,lmmse,transformer,proposed,perfect")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
        /// Condition the proposed pipeline on the SINR label instead of the
        /// trained estimator.
        #[arg(long, default_value_t = false)]
        sinr_from_label: bool,
    },
    /// Downstream subcarrier-prediction task over N_p and R_t.
    Downstream {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, default_value = "ls-li,lmmse,transformer,proposed,perfect")]
        methods: String,
        /// Comma-separated predicted-subcarrier counts.
        #[arg(long, default_value = "4,8,16")]
        np: String,
        /// Comma-separated downstream training fractions.
        #[arg(long, default_value = "0.25,0.5,0.8")]
        rt: String,
        /// Test-split SINR grid point to evaluate at.
        #[arg(long, default_value_t = 8.0)]
        sinr: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = false)]
        sinr_from_label: bool,
    },
    /// Aggregate eval/downstream CSVs into per-axis plot data and verify
    /// orderings and trends (exit 4 on failure).
    Report {
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        downstream: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8.0)]
        ref_sinr: f64,
        /// R_t slice for the N_p axis (default: median available).
        #[arg(long)]
        np_axis_rt: Option<f64>,
        /// N_p slice for the R_t axis (default: max available).
        #[arg(long)]
        rt_axis_np: Option<usize>,
    },
    /// Finite-difference verification of every layer type and the joint
    /// suppression graph.
    Gradcheck,
    /// Fast invariant checks over the simulator and the closed-form core.
    Selftest,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { config, count, seed, sinr_min, sinr_max, eval_grid, ratios, out } => {
            cmd_gen(&GenArgs {
                config,
                count,
                seed,
                sinr_min,
                sinr_max,
                eval_grid: parse_list(&eval_grid, "eval grid")?,
                ratios: parse_list(&ratios, "ratios")?,
                out,
            })
        }
        Command::Train { config, phase, data, models, epochs, seed } => cmd_train(&TrainArgs {
            config,
            phase: Phase::parse(&phase)?,
            data,
            models,
            epochs,
            seed,
        }),
        Command::Eval { config, data, models, methods, out, sinr_from_label } => {
            cmd_eval(&EvalArgs {
                config,
                data,
                models,
                methods: Method::parse_list(&methods)?,
                out,
                sinr_from_label,
            })
            .map(|_| ())
        }
        Command::Downstream {
            config,
            data,
            models,
            methods,
            np,
            rt,
            sinr,
            out,
            sinr_from_label,
        } => cmd_downstream(&DownstreamArgs {
            config,
            data,
            models,
            methods: Method::parse_list(&methods)?,
            np_list: parse_list(&np, "np")?,
            rt_list: parse_list(&rt, "rt")?,
            sinr_db: sinr,
            out,
            sinr_from_label,
        })
        .map(|_| ()),
        Command::Report { eval, downstream, out, ref_sinr, np_axis_rt, rt_axis_np } => {
            cmd_report(&ReportArgs { eval, downstream, out, ref_sinr, np_axis_rt, rt_axis_np })
                .map(|_| ())
        }
        Command::Gradcheck => checks::cmd_gradcheck(),
        Command::Selftest => checks::cmd_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("npisim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
