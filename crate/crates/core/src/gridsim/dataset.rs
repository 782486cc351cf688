//! Labeled dataset generation and the NPIS binary container.
//!
//! A dataset directory holds `dataset.npis` plus a `manifest.txt` sidecar.
//! The binary layout is little-endian: magic `NPIS`, format version u32,
//! the canonical [`SimConfig`] encoding, slot count u64, then per slot the
//! f32-interleaved (re, im) arrays `x_p`, `y_p`, `y_d`, `H`, `w` followed by
//! one f32 `sinr_db`. The manifest is `key = value` text recording counts,
//! the seed, split ranges, and the per-split SINR sampling policy.
//!
//! Slots are generated on independent RNG streams keyed by
//! `(seed, slot_index)`, so output is byte-identical regardless of worker
//! count or chunking.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::config::SimConfig;
use crate::{Error, Result};

use super::{
    generate_channel, simulate_slot, slot_stream, streams, PilotPattern, SlotLabels,
    SlotObservation,
};

const MAGIC: &[u8; 4] = b"NPIS";
const FORMAT_VERSION: u32 = 1;

/// How per-slot target SINR values are assigned within a split.
#[derive(Debug, Clone, PartialEq)]
pub enum SinrSampling {
    /// Uniform draw from the config's `sinr_range_db`.
    Uniform,
    /// Same target for every slot.
    Fixed(f64),
    /// Cycle through a fixed grid in slot order (used for evaluation splits
    /// so every grid point gets an equal share).
    GridCycle(Vec<f64>),
}

impl SinrSampling {
    fn describe(&self) -> String {
        match self {
            SinrSampling::Uniform => "uniform".to_string(),
            SinrSampling::Fixed(v) => format!("fixed {v}"),
            SinrSampling::GridCycle(g) => {
                let items: Vec<String> = g.iter().map(|v| v.to_string()).collect();
                format!("grid {}", items.join(","))
            }
        }
    }

    fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "uniform" {
            return Ok(SinrSampling::Uniform);
        }
        if let Some(rest) = text.strip_prefix("fixed ") {
            let v: f64 = rest
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad fixed sinr '{rest}'")))?;
            return Ok(SinrSampling::Fixed(v));
        }
        if let Some(rest) = text.strip_prefix("grid ") {
            let grid: Result<Vec<f64>> = rest
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad grid entry '{s}'")))
                })
                .collect();
            return Ok(SinrSampling::GridCycle(grid?));
        }
        Err(Error::Format(format!("unknown sinr sampling '{text}'")))
    }
}

/// Dataset split tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Pretrain,
    DownstreamTrain,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::DownstreamTrain => "downstream_train",
            Split::Test => "test",
        }
    }
}

/// Split fractions; test receives the remainder so counts always sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub pretrain: f64,
    pub downstream_train: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { pretrain: 0.75, downstream_train: 0.125 }
    }
}

/// Generation request: slot count, split ratios, and SINR policy per split.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub count: usize,
    pub ratios: SplitRatios,
    /// Sampling for the pretrain and downstream-train splits.
    pub train_sampling: SinrSampling,
    /// Sampling for the test split.
    pub test_sampling: SinrSampling,
}

impl DatasetSpec {
    pub fn uniform(count: usize) -> Self {
        DatasetSpec {
            count,
            ratios: SplitRatios::default(),
            train_sampling: SinrSampling::Uniform,
            test_sampling: SinrSampling::Uniform,
        }
    }
}

/// Counts, seed, split ranges, and sampling policy for a stored dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub count: usize,
    pub seed: u64,
    pub config_hash: u64,
    pub pretrain: std::ops::Range<usize>,
    pub downstream_train: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
    pub train_sampling: SinrSampling,
    pub test_sampling: SinrSampling,
}

impl DatasetManifest {
    fn build(cfg: &SimConfig, spec: &DatasetSpec) -> Self {
        let n_pre = (spec.count as f64 * spec.ratios.pretrain).round() as usize;
        let n_down = (spec.count as f64 * spec.ratios.downstream_train).round() as usize;
        let n_pre = n_pre.min(spec.count);
        let n_down = n_down.min(spec.count - n_pre);
        DatasetManifest {
            count: spec.count,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            pretrain: 0..n_pre,
            downstream_train: n_pre..n_pre + n_down,
            test: n_pre + n_down..spec.count,
            train_sampling: spec.train_sampling.clone(),
            test_sampling: spec.test_sampling.clone(),
        }
    }

    pub fn range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Pretrain => self.pretrain.clone(),
            Split::DownstreamTrain => self.downstream_train.clone(),
            Split::Test => self.test.clone(),
        }
    }

    pub fn split_of(&self, index: usize) -> Split {
        if self.pretrain.contains(&index) {
            Split::Pretrain
        } else if self.downstream_train.contains(&index) {
            Split::DownstreamTrain
        } else {
            Split::Test
        }
    }

    /// Target SINR assigned to a slot index.
    pub fn target_sinr(&self, cfg: &SimConfig, index: usize) -> f64 {
        let split = self.split_of(index);
        let (sampling, start) = match split {
            Split::Test => (&self.test_sampling, self.test.start),
            _ => (&self.train_sampling, 0),
        };
        match sampling {
            SinrSampling::Uniform => {
                let mut rng = slot_stream(self.seed, index as u64, streams::SINR);
                let [lo, hi] = cfg.sinr_range_db;
                lo + rng.random::<f64>() * (hi - lo)
            }
            SinrSampling::Fixed(v) => *v,
            SinrSampling::GridCycle(grid) => grid[(index - start) % grid.len()],
        }
    }

    fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("format = npis.v1\n");
        s.push_str(&format!("count = {}\n", self.count));
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("config_hash = {:016x}\n", self.config_hash));
        s.push_str(&format!("split.pretrain = {}..{}\n", self.pretrain.start, self.pretrain.end));
        s.push_str(&format!(
            "split.downstream_train = {}..{}\n",
            self.downstream_train.start, self.downstream_train.end
        ));
        s.push_str(&format!("split.test = {}..{}\n", self.test.start, self.test.end));
        s.push_str(&format!("sinr.train = {}\n", self.train_sampling.describe()));
        s.push_str(&format!("sinr.test = {}\n", self.test_sampling.describe()));
        s
    }

    fn from_text(text: &str) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("manifest line '{line}'")))?;
            kv.insert(key.trim().to_string(), value.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            kv.get(k).ok_or_else(|| Error::Format(format!("manifest missing '{k}'")))
        };
        if get("format")? != "npis.v1" {
            return Err(Error::Format(format!("unsupported manifest format {}", get("format")?)));
        }
        let parse_range = |s: &str| -> Result<std::ops::Range<usize>> {
            let (a, b) =
                s.split_once("..").ok_or_else(|| Error::Format(format!("bad range '{s}'")))?;
            let lo = a.parse().map_err(|_| Error::Format(format!("bad range '{s}'")))?;
            let hi = b.parse().map_err(|_| Error::Format(format!("bad range '{s}'")))?;
            Ok(lo..hi)
        };
        Ok(DatasetManifest {
            count: get("count")?.parse().map_err(|_| Error::Format("bad count".into()))?,
            seed: get("seed")?.parse().map_err(|_| Error::Format("bad seed".into()))?,
            config_hash: u64::from_str_radix(get("config_hash")?, 16)
                .map_err(|_| Error::Format("bad config_hash".into()))?,
            pretrain: parse_range(get("split.pretrain")?)?,
            downstream_train: parse_range(get("split.downstream_train")?)?,
            test: parse_range(get("split.test")?)?,
            train_sampling: SinrSampling::parse(get("sinr.train")?)?,
            test_sampling: SinrSampling::parse(get("sinr.test")?)?,
        })
    }
}

/// In-memory dataset: config, slots, and manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SimConfig,
    pub slots: Vec<SlotObservation>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn slots_in(&self, split: Split) -> &[SlotObservation] {
        &self.slots[self.manifest.range(split)]
    }
}

/// Generates one slot on its own RNG streams.
pub(crate) fn generate_slot(
    cfg: &SimConfig,
    pattern: &PilotPattern,
    manifest: &DatasetManifest,
    index: usize,
) -> SlotObservation {
    let mut ch_rng = slot_stream(cfg.seed, index as u64, streams::CHANNEL);
    let h = generate_channel(cfg, &mut ch_rng);
    let target = manifest.target_sinr(cfg, index);
    let mut slot_rng = slot_stream(cfg.seed, index as u64, streams::SLOT);
    simulate_slot(&h, pattern, cfg, target, &mut slot_rng)
}

/// Generates a dataset in memory. Slots are produced in parallel but land
/// in index order.
pub fn generate_dataset(cfg: &SimConfig, spec: &DatasetSpec) -> Result<Dataset> {
    cfg.validate()?;
    if spec.count == 0 {
        return Err(Error::InvalidConfig("slot count must be >= 1".into()));
    }
    let pattern = PilotPattern::build(cfg);
    let manifest = DatasetManifest::build(cfg, spec);
    let slots: Vec<SlotObservation> = (0..spec.count)
        .into_par_iter()
        .map(|i| generate_slot(cfg, &pattern, &manifest, i))
        .collect();
    Ok(Dataset { config: cfg.clone(), slots, manifest })
}

fn write_c64(out: &mut impl Write, data: &[Complex64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for c in data {
        buf.extend_from_slice(&(c.re as f32).to_le_bytes());
        buf.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

fn read_c64(input: &mut impl Read, n: usize) -> Result<Vec<Complex64>> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    let mut data = Vec::with_capacity(n);
    for ch in buf.chunks_exact(8) {
        let re = f32::from_le_bytes([ch[0], ch[1], ch[2], ch[3]]) as f64;
        let im = f32::from_le_bytes([ch[4], ch[5], ch[6], ch[7]]) as f64;
        data.push(Complex64::new(re, im));
    }
    Ok(data)
}

fn write_slot(out: &mut impl Write, cfg: &SimConfig, slot: &SlotObservation) -> Result<()> {
    let labels = slot.labels()?;
    let h = labels.h.as_ref().ok_or_else(|| Error::MissingPrerequisite("full H label".into()))?;
    let w = labels.w.as_ref().ok_or_else(|| Error::MissingPrerequisite("full w label".into()))?;
    write_c64(out, &slot.x_p)?;
    write_c64(out, &slot.y_p)?;
    write_c64(out, &slot.y_d)?;
    write_c64(out, &h.data)?;
    write_c64(out, w)?;
    out.write_all(&(labels.sinr_db as f32).to_le_bytes())?;
    let _ = cfg;
    Ok(())
}

/// Which arrays a load keeps in memory. `w` at pilot REs is always kept.
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub keep_y_d: bool,
    pub keep_h: bool,
    pub keep_w_full: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { keep_y_d: true, keep_h: true, keep_w_full: true }
    }
}

impl Dataset {
    /// Writes `dataset.npis` and `manifest.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(fs::File::create(dir.join("dataset.npis"))?);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let mut cfg_bytes = Vec::new();
        self.config.encode(&mut cfg_bytes);
        out.write_all(&cfg_bytes)?;
        out.write_all(&(self.slots.len() as u64).to_le_bytes())?;
        for slot in &self.slots {
            write_slot(&mut out, &self.config, slot)?;
        }
        out.flush()?;
        fs::write(dir.join("manifest.txt"), self.manifest.to_text())?;
        Ok(())
    }

    /// Streaming generation straight to disk; avoids holding every slot.
    pub fn generate_to_dir(cfg: &SimConfig, spec: &DatasetSpec, dir: &Path) -> Result<DatasetManifest> {
        cfg.validate()?;
        if spec.count == 0 {
            return Err(Error::InvalidConfig("slot count must be >= 1".into()));
        }
        let pattern = PilotPattern::build(cfg);
        let manifest = DatasetManifest::build(cfg, spec);
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(fs::File::create(dir.join("dataset.npis"))?);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let mut cfg_bytes = Vec::new();
        cfg.encode(&mut cfg_bytes);
        out.write_all(&cfg_bytes)?;
        out.write_all(&(spec.count as u64).to_le_bytes())?;
        const CHUNK: usize = 256;
        let mut start = 0;
        while start < spec.count {
            let end = (start + CHUNK).min(spec.count);
            let chunk: Vec<SlotObservation> = (start..end)
                .into_par_iter()
                .map(|i| generate_slot(cfg, &pattern, &manifest, i))
                .collect();
            for slot in &chunk {
                write_slot(&mut out, cfg, slot)?;
            }
            start = end;
        }
        out.flush()?;
        fs::write(dir.join("manifest.txt"), manifest.to_text())?;
        Ok(manifest)
    }

    /// Loads a dataset directory, optionally dropping heavy arrays.
    pub fn load(dir: &Path, opts: LoadOptions) -> Result<Dataset> {
        let manifest = DatasetManifest::from_text(&fs::read_to_string(dir.join("manifest.txt"))?)?;
        let mut input = BufReader::new(fs::File::open(dir.join("dataset.npis"))?);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad dataset magic".into()));
        }
        let mut v = [0u8; 4];
        input.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let cfg = SimConfig::decode(&mut input)?;
        if cfg.hash() != manifest.config_hash {
            return Err(Error::Format("manifest config hash does not match dataset header".into()));
        }
        let mut cnt = [0u8; 8];
        input.read_exact(&mut cnt)?;
        let count = u64::from_le_bytes(cnt) as usize;
        if count != manifest.count {
            return Err(Error::Format("manifest count does not match dataset header".into()));
        }

        let pattern = PilotPattern::build(&cfg);
        let k_p = pattern.len();
        let n_payload = cfg.l * cfg.k - k_p;
        let h_len = cfg.l * cfg.k_total() * cfg.m;
        let w_len = cfg.l * cfg.k * cfg.m;
        // Flat indices of pilot REs inside the stored w array.
        let pilot_base: Vec<usize> =
            pattern.positions().iter().map(|&(l, k)| (l * cfg.k + k) * cfg.m).collect();

        let mut slots = Vec::with_capacity(count);
        for _ in 0..count {
            let x_p = read_c64(&mut input, k_p)?;
            let y_p = read_c64(&mut input, k_p * cfg.m)?;
            let y_d = if opts.keep_y_d {
                read_c64(&mut input, n_payload * cfg.m)?
            } else {
                input.seek_relative((n_payload * cfg.m * 8) as i64)?;
                Vec::new()
            };
            let h = if opts.keep_h {
                let data = read_c64(&mut input, h_len)?;
                Some(super::ChannelGrid { l: cfg.l, k_total: cfg.k_total(), m: cfg.m, data })
            } else {
                input.seek_relative((h_len * 8) as i64)?;
                None
            };
            let w_full = read_c64(&mut input, w_len)?;
            let mut w_pilot = Vec::with_capacity(k_p * cfg.m);
            for &base in &pilot_base {
                w_pilot.extend_from_slice(&w_full[base..base + cfg.m]);
            }
            let mut sinr = [0u8; 4];
            input.read_exact(&mut sinr)?;
            slots.push(SlotObservation {
                x_p,
                y_p,
                y_d,
                modulation: cfg.modulation,
                labels: Some(SlotLabels {
                    h,
                    w: if opts.keep_w_full { Some(w_full) } else { None },
                    w_pilot,
                    sinr_db: f32::from_le_bytes(sinr) as f64,
                }),
            });
        }
        Ok(Dataset { config: cfg, slots, manifest })
    }
}
