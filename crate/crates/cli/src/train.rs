//! `train`: phase-ordered training of the harness models.
//!
//! Phases: `refine` (CSI refinement), `npi1` (supervised NPI estimation,
//! requires refine), `npi2` (joint NPI + completion, requires npi1),
//! `sinr` (the SINR estimator), and `baseline` (the attention baseline plus
//! the clean-pilot completion behind the perfect-CSI benchmark). Each phase
//! writes its models into the bundle directory, appends to the bundle
//! manifest, and emits `<phase>_loss.csv`.

use std::io::Write;
use std::path::{Path, PathBuf};

use npisim_core::gridsim::{Dataset, LoadOptions, PilotPattern, Split};
use npisim_core::npinet::{
    self, load_bundle, save_bundle, BundleManifest, BundleRole, LossHistory, PipelineDims,
};
use npisim_core::sinrest;

use crate::gen::load_run_config;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Refine,
    Npi1,
    Npi2,
    Sinr,
    Baseline,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Refine => "refine",
            Phase::Npi1 => "npi1",
            Phase::Npi2 => "npi2",
            Phase::Sinr => "sinr",
            Phase::Baseline => "baseline",
        }
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        match text {
            "refine" => Ok(Phase::Refine),
            "npi1" => Ok(Phase::Npi1),
            "npi2" => Ok(Phase::Npi2),
            "sinr" => Ok(Phase::Sinr),
            "baseline" => Ok(Phase::Baseline),
            other => Err(CliError::Usage(format!(
                "unknown phase '{other}' (expected refine|npi1|npi2|sinr|baseline)"
            ))),
        }
    }

    fn prerequisite(self) -> Option<Phase> {
        match self {
            Phase::Npi1 => Some(Phase::Refine),
            Phase::Npi2 => Some(Phase::Npi1),
            _ => None,
        }
    }

    fn load_options(self) -> LoadOptions {
        match self {
            Phase::Sinr => LoadOptions { keep_y_d: true, keep_h: false, keep_w_full: false },
            _ => LoadOptions { keep_y_d: false, keep_h: true, keep_w_full: false },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub phase: Phase,
    pub data: PathBuf,
    pub models: PathBuf,
    /// Overrides the schedule's epoch count for this phase.
    pub epochs: Option<usize>,
    /// Overrides the training seed.
    pub seed: Option<u64>,
}

fn write_loss_csv(path: &Path, history: &LossHistory) -> CliResult<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,loss")?;
    for (i, loss) in history.per_epoch.iter().enumerate() {
        writeln!(f, "{},{:.10e}", i, loss)?;
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let run = load_run_config(&args.config)?;
    let dataset = Dataset::load(&args.data, args.phase.load_options())
        .map_err(|e| match e {
            npisim_core::Error::Io(io) => CliError::Io(format!(
                "cannot load dataset from {}: {io}",
                args.data.display()
            )),
            other => CliError::from(other),
        })?;
    if dataset.config.hash() != run.sim.hash() {
        return Err(CliError::Usage(format!(
            "dataset at {} was generated with a different sim config",
            args.data.display()
        )));
    }
    let pattern = PilotPattern::build(&dataset.config);
    let dims = PipelineDims::of(&dataset.config);
    let slots = dataset.slots_in(Split::Pretrain);
    if slots.is_empty() {
        return Err(CliError::Usage("dataset has an empty pretrain split".into()));
    }

    let mut tcfg = run.train.clone();
    if let Some(seed) = args.seed {
        tcfg.seed = seed;
    }
    let schedule = &run.schedule;
    let epochs = args.epochs.unwrap_or(match args.phase {
        Phase::Refine => schedule.refine_epochs,
        Phase::Npi1 => schedule.npi1_epochs,
        Phase::Npi2 => schedule.npi2_epochs,
        Phase::Sinr => schedule.sinr_epochs,
        Phase::Baseline => schedule.baseline_epochs,
    });
    let tcfg = tcfg.with_epochs(epochs);

    // Bundle manifest: created by the first phase, then extended. Phase
    // ordering is enforced through the recorded completions.
    std::fs::create_dir_all(&args.models)?;
    let manifest_path = args.models.join("manifest.txt");
    let mut manifest = if manifest_path.exists() {
        let m = BundleManifest::load(&args.models)?;
        m.check_config(&dataset.config)?;
        m
    } else {
        let mut m = BundleManifest::new(&dataset.config, run.arch.projection_epsilon);
        m.extra.insert("histogram_bins".into(), run.arch.histogram_bins.to_string());
        m.extra.insert("histogram_range".into(), run.arch.histogram_range.to_string());
        m
    };
    if let Some(pre) = args.phase.prerequisite() {
        if !manifest.has_phase(pre.name()) {
            return Err(CliError::Usage(format!(
                "phase '{}' requires phase '{}' to be trained first",
                args.phase.name(),
                pre.name()
            )));
        }
    }

    let mut seed_rng = npisim_core::gridsim::slot_stream(tcfg.seed, 0, 7);
    let history = match args.phase {
        Phase::Refine => {
            // Fresh bundle unless one already exists from a previous run.
            let mut bundle = if manifest.has_phase("refine") {
                load_bundle(&args.models, &dataset.config)?.0
            } else {
                npinet::new_bundle(&dataset.config, &run.arch, &mut seed_rng)
            };
            let h = npinet::train_refine(slots, &pattern, &mut bundle, &tcfg)?;
            save_bundle(&args.models, &bundle, &manifest)?;
            h
        }
        Phase::Npi1 => {
            let (mut bundle, _) = load_bundle(&args.models, &dataset.config)?;
            let h = npinet::train_step1_npi(slots, &pattern, &mut bundle, &tcfg)?;
            save_bundle(&args.models, &bundle, &manifest)?;
            h
        }
        Phase::Npi2 => {
            let (mut bundle, _) = load_bundle(&args.models, &dataset.config)?;
            let h = npinet::train_step2_joint(slots, &pattern, &mut bundle, &tcfg)?;
            save_bundle(&args.models, &bundle, &manifest)?;
            h
        }
        Phase::Sinr => {
            let mut model = sinrest::build_sinr_model(&dataset.config, &run.arch, &mut seed_rng);
            let h = sinrest::train_sinr(slots, &mut model, &tcfg)?;
            model.save(&args.models)?;
            h
        }
        Phase::Baseline => {
            let mut baseline = npinet::build_baseline_net(&dims, &run.arch, &mut seed_rng);
            let h = npinet::train_transformer(
                slots,
                &pattern,
                &mut baseline,
                &dims,
                &run.arch,
                &tcfg,
            )?;
            npinet::save_role(&args.models, BundleRole::Baseline, &baseline)?;
            // The perfect-CSI benchmark needs a completion trained on clean
            // pilot inputs; it ships with the baseline phase.
            let mut clean = npinet::build_completion_net(&dims, &run.arch, &mut seed_rng);
            let clean_cfg = tcfg.with_epochs(args.epochs.unwrap_or(schedule.clean_completion_epochs));
            let h_clean =
                npinet::train_clean_completion(slots, &pattern, &mut clean, &dims, &clean_cfg)?;
            npinet::save_role(&args.models, BundleRole::CleanCompletion, &clean)?;
            write_loss_csv(&args.models.join("clean_completion_loss.csv"), &h_clean)?;
            h
        }
    };

    manifest.mark_phase(args.phase.name());
    manifest.save(&args.models)?;
    write_loss_csv(&args.models.join(format!("{}_loss.csv", args.phase.name())), &history)?;
    if let (Some(first), Some(last)) = (history.initial(), history.last()) {
        println!(
            "phase {} done: {} epochs, loss {:.6} -> {:.6}",
            args.phase.name(),
            history.per_epoch.len(),
            first,
            last
        );
    }
    Ok(())
}
