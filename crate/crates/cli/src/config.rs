//! Run configuration: an optional JSON config file merged with command-line
//! flags (flags win), resolved completely before any work starts and
//! archived verbatim as `run-config.json` in the output directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use gazelearn_core::data::synth::SynthConfig;
use gazelearn_core::eval::ProbeConfig;
use gazelearn_core::model::NetworkConfig;
use gazelearn_core::saliency::SaliencyConfig;
use gazelearn_core::train::{Task, TrainConfig};
use gazelearn_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const RUN_CONFIG_FILE: &str = "run-config.json";

/// A network selection: a built-in name or a full inline config. Names are
/// resolved against the dataset vocabulary and the run seed; inline configs
/// are used verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetSpec {
    Name(String),
    Inline(NetworkConfig),
}

/// A training-schedule selection: a preset name (full like "paper-saliency"
/// or the family shorthand "mini"/"paper", completed by the task) or an
/// inline config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrainSpec {
    Name(String),
    Inline(TrainConfig),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Fine-tuning initializer: a checkpoint path or "random".
    pub init: Option<String>,
    pub net: Option<NetSpec>,
    pub train: Option<TrainSpec>,
    pub synth: Option<SynthConfig>,
    pub saliency: Option<SaliencyConfig>,
    pub probe: Option<ProbeConfig>,
    /// Scan-count weights for automatic dataset splitting, e.g. [2, 1] for
    /// a 2:1 train/validation split.
    pub split: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Interpret a `--config` value: a path to a JSON file, or a built-in
    /// config-family name ("mini", "paper"/"se-resnext50-half") that picks
    /// both the network and the matching training preset.
    pub fn from_arg(arg: Option<&str>) -> Result<RunConfig> {
        let Some(value) = arg else { return Ok(RunConfig::default()) };
        let path = Path::new(value);
        if path.is_file() {
            let file = std::fs::File::open(path)?;
            return serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| {
                Error::invalid(format!("--config {}: {e}", path.display()))
            });
        }
        match value {
            "mini" | "paper" | "se-resnext50-half" => Ok(RunConfig {
                net: Some(NetSpec::Name(value.to_string())),
                train: Some(TrainSpec::Name(value.to_string())),
                ..RunConfig::default()
            }),
            other => Err(Error::invalid(format!(
                "--config {other:?} is neither a file nor a built-in config name \
                 (mini, se-resnext50-half)"
            ))),
        }
    }

    /// The network config this run uses, with name specs instantiated for
    /// `classes` output classes and the run seed. Defaults to "mini".
    pub fn resolve_net(&self, classes: usize, seed: u64) -> Result<NetworkConfig> {
        let cfg = match &self.net {
            None => NetworkConfig::mini(classes, seed),
            Some(NetSpec::Name(name)) => match name.as_str() {
                "mini" => NetworkConfig::mini(classes, seed),
                "paper" | "se-resnext50-half" => NetworkConfig::se_resnext50_half(classes, seed),
                other => {
                    return Err(Error::invalid(format!(
                        "unknown network config {other:?}; known: mini, se-resnext50-half"
                    )))
                }
            },
            Some(NetSpec::Inline(cfg)) => cfg.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The training config this run uses for `task`. Family shorthands are
    /// completed by the task ("mini" + gaze → "mini-gaze"); the task and
    /// seed always come from the resolved run, whatever the spec said.
    pub fn resolve_train(&self, task: Task, seed: u64) -> Result<TrainConfig> {
        let family = match task {
            Task::Saliency => "saliency",
            Task::Gaze => "gaze",
            Task::Classify => "finetune",
        };
        let mut cfg = match &self.train {
            None => TrainConfig::preset(&format!("mini-{family}"), seed)?,
            Some(TrainSpec::Name(name)) => {
                let full = match name.as_str() {
                    "mini" | "paper" => format!("{name}-{family}"),
                    "se-resnext50-half" => format!("paper-{family}"),
                    other => other.to_string(),
                };
                TrainConfig::preset(&full, seed)?
            }
            Some(TrainSpec::Inline(cfg)) => cfg.clone(),
        };
        cfg.task = task;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The seed an inline training config carries, if any; used as the
    /// run-seed fallback so an archived config reruns identically.
    pub fn train_seed(&self) -> Option<u64> {
        match &self.train {
            Some(TrainSpec::Inline(cfg)) => Some(cfg.seed),
            _ => None,
        }
    }
}

/// Write the fully resolved config into the run directory, creating it.
pub fn archive(dir: &Path, resolved: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join(RUN_CONFIG_FILE))?);
    serde_json::to_writer_pretty(&mut out, resolved)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
