//! Bundle persistence: a directory of NPIM model files plus a manifest
//! recording component roles, the projection epsilon, the SimConfig hash
//! the bundle was trained against, and which phases have completed.
//! Loading rejects bundles whose config hash does not match the dataset.

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::SimConfig;
use crate::neural::{load_model, save_model, NetworkModel};
use crate::{Error, Result};

use super::{PipelineBundle, PipelineDims};

/// Roles a model file can play inside a bundle directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BundleRole {
    Refine,
    NpiCh,
    NpiOrth,
    Fusion,
    Completion,
    CleanCompletion,
    Baseline,
    SinrPoint,
    SinrPost,
    SinrConv,
    SinrHead,
}

impl BundleRole {
    pub fn file_name(self) -> &'static str {
        match self {
            BundleRole::Refine => "refine.npim",
            BundleRole::NpiCh => "npi_ch.npim",
            BundleRole::NpiOrth => "npi_orth.npim",
            BundleRole::Fusion => "fusion.npim",
            BundleRole::Completion => "completion.npim",
            BundleRole::CleanCompletion => "clean_completion.npim",
            BundleRole::Baseline => "baseline.npim",
            BundleRole::SinrPoint => "sinr_point.npim",
            BundleRole::SinrPost => "sinr_post.npim",
            BundleRole::SinrConv => "sinr_conv.npim",
            BundleRole::SinrHead => "sinr_head.npim",
        }
    }
}

/// Key-value manifest for a model directory.
#[derive(Debug, Clone, Default)]
pub struct BundleManifest {
    pub config_hash: u64,
    pub epsilon_scale: f64,
    /// Phase name -> completion marker (phases append as they finish).
    pub phases: Vec<String>,
    pub extra: BTreeMap<String, String>,
}

impl BundleManifest {
    pub fn new(cfg: &SimConfig, epsilon_scale: f64) -> Self {
        BundleManifest {
            config_hash: cfg.hash(),
            epsilon_scale,
            phases: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn has_phase(&self, phase: &str) -> bool {
        self.phases.iter().any(|p| p == phase)
    }

    pub fn mark_phase(&mut self, phase: &str) {
        if !self.has_phase(phase) {
            self.phases.push(phase.to_string());
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("format = npim-bundle.v1\n");
        s.push_str(&format!("config_hash = {:016x}\n", self.config_hash));
        s.push_str(&format!("epsilon_scale = {:e}\n", self.epsilon_scale));
        s.push_str(&format!("phases = {}\n", self.phases.join(",")));
        for (k, v) in &self.extra {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bundle manifest line '{line}'")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        if kv.get("format").map(String::as_str) != Some("npim-bundle.v1") {
            return Err(Error::Format("unsupported bundle manifest format".into()));
        }
        let config_hash = u64::from_str_radix(
            kv.remove("config_hash")
                .ok_or_else(|| Error::Format("bundle manifest missing config_hash".into()))?
                .as_str(),
            16,
        )
        .map_err(|_| Error::Format("bad config_hash".into()))?;
        let epsilon_scale: f64 = kv
            .remove("epsilon_scale")
            .ok_or_else(|| Error::Format("bundle manifest missing epsilon_scale".into()))?
            .parse()
            .map_err(|_| Error::Format("bad epsilon_scale".into()))?;
        let phases: Vec<String> = kv
            .remove("phases")
            .unwrap_or_default()
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        kv.remove("format");
        Ok(BundleManifest { config_hash, epsilon_scale, phases, extra: kv })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.txt"), self.to_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(dir.join("manifest.txt"))?)
    }

    /// Rejects a manifest trained against a different SimConfig.
    pub fn check_config(&self, cfg: &SimConfig) -> Result<()> {
        if self.config_hash != cfg.hash() {
            return Err(Error::MissingPrerequisite(format!(
                "model bundle was trained against config hash {:016x}, dataset has {:016x}",
                self.config_hash,
                cfg.hash()
            )));
        }
        Ok(())
    }
}

/// Writes one role's model into a bundle directory.
pub fn save_role(dir: &Path, role: BundleRole, model: &NetworkModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_model(model, &dir.join(role.file_name()))
}

/// Loads one role's model, mapping a missing file to a prerequisite error.
pub fn load_role(dir: &Path, role: BundleRole) -> Result<NetworkModel> {
    let path = dir.join(role.file_name());
    if !path.exists() {
        return Err(Error::MissingPrerequisite(format!(
            "model file {} not found in {}",
            role.file_name(),
            dir.display()
        )));
    }
    load_model(&path)
}

/// Saves the five pipeline components plus the manifest.
pub fn save_bundle(dir: &Path, bundle: &PipelineBundle, manifest: &BundleManifest) -> Result<()> {
    save_role(dir, BundleRole::Refine, &bundle.refine)?;
    save_role(dir, BundleRole::NpiCh, &bundle.npi_ch)?;
    save_role(dir, BundleRole::NpiOrth, &bundle.npi_orth)?;
    save_role(dir, BundleRole::Fusion, &bundle.fusion)?;
    save_role(dir, BundleRole::Completion, &bundle.completion)?;
    manifest.save(dir)
}

/// Loads the pipeline components after validating the manifest against the
/// dataset config.
pub fn load_bundle(dir: &Path, cfg: &SimConfig) -> Result<(PipelineBundle, BundleManifest)> {
    let manifest = BundleManifest::load(dir)?;
    manifest.check_config(cfg)?;
    let bundle = PipelineBundle {
        refine: load_role(dir, BundleRole::Refine)?,
        npi_ch: load_role(dir, BundleRole::NpiCh)?,
        npi_orth: load_role(dir, BundleRole::NpiOrth)?,
        fusion: load_role(dir, BundleRole::Fusion)?,
        completion: load_role(dir, BundleRole::Completion)?,
        epsilon_scale: manifest.epsilon_scale,
        dims: PipelineDims::of(cfg),
    };
    Ok((bundle, manifest))
}
