//! `gen`: dataset generation.

use std::path::PathBuf;

use npisim_core::config::RunConfig;
use npisim_core::gridsim::{Dataset, DatasetSpec, SinrSampling, SplitRatios};

use crate::{parse_list, CliError, CliResult};

#[derive(Debug, Clone)]
pub struct GenArgs {
    /// Optional TOML run config; defaults apply when absent.
    pub config: Option<PathBuf>,
    pub count: usize,
    /// Overrides the config seed when set.
    pub seed: Option<u64>,
    pub sinr_min: Option<f64>,
    pub sinr_max: Option<f64>,
    /// Test-split SINR grid; empty means the test split samples uniformly
    /// like the training splits.
    pub eval_grid: Vec<f64>,
    /// pretrain,downstream_train,test fractions.
    pub ratios: Vec<f64>,
    pub out: PathBuf,
}

impl Default for GenArgs {
    fn default() -> Self {
        GenArgs {
            config: None,
            count: 8000,
            seed: None,
            sinr_min: None,
            sinr_max: None,
            eval_grid: vec![0.0, 4.0, 8.0, 12.0, 16.0],
            ratios: vec![0.75, 0.125, 0.125],
            out: PathBuf::from("data"),
        }
    }
}

pub fn load_run_config(path: &Option<PathBuf>) -> CliResult<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

pub fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be >= 1".into()));
    }
    if args.ratios.len() != 3 {
        return Err(CliError::Usage("--ratios needs pretrain,downstream,test".into()));
    }
    let ratio_sum: f64 = args.ratios.iter().sum();
    if args.ratios.iter().any(|&r| r < 0.0) || (ratio_sum - 1.0).abs() > 1e-9 {
        return Err(CliError::Usage(format!("--ratios must sum to 1, got {ratio_sum}")));
    }
    let mut run = load_run_config(&args.config)?;
    if let Some(seed) = args.seed {
        run.sim.seed = seed;
    }
    if let Some(lo) = args.sinr_min {
        run.sim.sinr_range_db[0] = lo;
    }
    if let Some(hi) = args.sinr_max {
        run.sim.sinr_range_db[1] = hi;
    }
    run.sim.validate()?;
    let spec = DatasetSpec {
        count: args.count,
        ratios: SplitRatios { pretrain: args.ratios[0], downstream_train: args.ratios[1] },
        train_sampling: SinrSampling::Uniform,
        test_sampling: if args.eval_grid.is_empty() {
            SinrSampling::Uniform
        } else {
            SinrSampling::GridCycle(args.eval_grid.clone())
        },
    };
    let manifest = Dataset::generate_to_dir(&run.sim, &spec, &args.out)?;
    println!(
        "generated {} slots into {} (pretrain {}, downstream {}, test {})",
        manifest.count,
        args.out.display(),
        manifest.pretrain.len(),
        manifest.downstream_train.len(),
        manifest.test.len()
    );
    Ok(())
}

/// Shared flag-parsing helper for grids like "0,4,8".
pub fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    parse_list(text, "grid")
}
