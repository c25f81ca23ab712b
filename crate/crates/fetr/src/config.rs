//! INI-style run configuration: `[model]`, `[train]` and `[data]` sections
//! of `key = value` lines with `#` comments.
//!
//! Every key has a default. A file overrides the defaults and
//! `section.key=value` overrides given on the command line override the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fetr_core::backbone::NetworkSpec;
use fetr_core::train::{LrSchedule, OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    /// Fraction of each class used for training.
    pub train_ratio: f64,
    /// Split seed; the run seed when unset.
    pub split_seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            train_ratio: 0.8,
            split_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub model: NetworkSpec,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Write a numbered checkpoint every this many epochs (0 = never).
    pub checkpoint_every: usize,
}

fn parse<T: FromStr>(value: &str, expected: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("expected {expected}, got `{value}`"))
}

fn parse_list(value: &str) -> std::result::Result<Vec<usize>, String> {
    value
        .split([',', ' ', 'x'])
        .filter(|s| !s.is_empty())
        .map(|s| parse(s, "a list of non-negative integers"))
        .collect()
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "on" => Ok(true),
        "false" | "no" | "off" => Ok(false),
        _ => Err(format!("expected true or false, got `{value}`")),
    }
}

impl Config {
    /// Sets one key. The error names what was expected.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> std::result::Result<(), String> {
        let (m, t, d) = (&mut self.model, &mut self.train, &mut self.data);
        match (section, key) {
            ("model", "stage_depths") => {
                let v = parse_list(value)?;
                m.stage_depths = v
                    .try_into()
                    .map_err(|v: Vec<usize>| format!("expected 4 stage depths, got {}", v.len()))?;
            }
            ("model", "base_width") => m.base_width = parse(value, "an integer")?,
            ("model", "num_classes") => m.num_classes = parse(value, "an integer")?,
            ("model", "dca_stages") => m.dca_stages = parse_list(value)?,
            ("model", "se_reduction") => m.se_reduction = parse(value, "an integer")?,
            ("model", "input_size") => match parse_list(value)?.as_slice() {
                [s] => m.input_size = (*s, *s),
                [h, w] => m.input_size = (*h, *w),
                _ => return Err(format!("expected `H,W` or a single size, got `{value}`")),
            },
            ("model", "stylerm") => m.stylerm = parse_bool(value)?,
            ("model", "dca_passes") => m.dca_passes = parse(value, "an integer")?,
            ("train", "epochs") => t.epochs = parse(value, "an integer")?,
            ("train", "batch_size") => t.batch_size = parse(value, "an integer")?,
            ("train", "optimizer") => {
                t.optimizer = match value {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(format!("expected adam or sgd, got `{value}`")),
                }
            }
            ("train", "lr") => t.lr = parse(value, "a number")?,
            ("train", "weight_decay") => t.weight_decay = parse(value, "a number")?,
            ("train", "warmup_epochs") => t.warmup_epochs = parse(value, "an integer")?,
            ("train", "lr_schedule") => {
                t.lr_schedule = match value {
                    "cosine" => LrSchedule::Cosine,
                    _ => return Err(format!("expected cosine, got `{value}`")),
                }
            }
            ("train", "seed") => t.seed = parse(value, "an integer")?,
            ("train", "augment") => t.augment = parse_bool(value)?,
            ("train", "flip") => t.flip = parse_bool(value)?,
            ("train", "checkpoint_every") => self.checkpoint_every = parse(value, "an integer")?,
            ("data", "dir") => d.dir = Some(PathBuf::from(value)),
            ("data", "train_ratio") => d.train_ratio = parse(value, "a number")?,
            ("data", "split_seed") => d.split_seed = Some(parse(value, "an integer")?),
            ("model" | "train" | "data", _) => return Err(format!("unknown key `{section}.{key}`")),
            _ => return Err(format!("unknown section `{section}`")),
        }
        Ok(())
    }

    /// Applies the lines of an INI document on top of `self`.
    pub fn apply_ini(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let fail = |message: String| Error::Parse {
                origin: format!("{origin}: line {}", i + 1),
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| fail(format!("malformed section header `{line}`")))?
                    .trim();
                if !matches!(name, "model" | "train" | "data") {
                    return Err(fail(format!("unknown section `{name}`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected `key = value`, got `{line}`")))?;
            let section = section
                .as_deref()
                .ok_or_else(|| fail("key outside of any section".into()))?;
            self.set(section, key.trim(), value.trim()).map_err(fail)?;
        }
        Ok(())
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let fail = |message: String| Error::Parse {
            origin: format!("--set {assignment}"),
            message,
        };
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| fail("expected section.key=value".into()))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| fail("expected section.key=value".into()))?;
        self.set(section.trim(), key.trim(), value.trim()).map_err(fail)
    }

    /// Defaults, then the file at `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_ini(&text, &path.display().to_string())?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.data.train_ratio > 0.0 && self.data.train_ratio < 1.0) {
            return Err(fetr_core::Error::Config(format!(
                "data.train_ratio must lie in (0, 1), got {}",
                self.data.train_ratio
            ))
            .into());
        }
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        self.data.split_seed.unwrap_or(self.train.seed)
    }
}
