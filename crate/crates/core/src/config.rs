//! Experiment configuration: one TOML section per module, with keys that
//! mirror the config struct fields (`clf.epochs`, `constraints.band_width`).
//!
//! Values are layered: built-in preset, then a config file, then
//! `key=value` overrides. Unknown keys are rejected at every layer.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::evalexp::{CorrectionUnit, MatrixSpec, Supervision};
use crate::patchclf::{ClassifierArch, ClassifierConfig};
use crate::volumes::SynthConfig;
use crate::weakseg::{ConstraintConfig, SegmenterArch, SegmenterConfig};

/// Matrix-level settings; the model configs live in their own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSection {
    pub supervision: Vec<Supervision>,
    pub patch_sizes: Vec<usize>,
    pub correction_sizes: Vec<usize>,
    pub correction_unit: CorrectionUnit,
    pub folds: usize,
    pub seed: u64,
    pub segment: bool,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub matrix: MatrixSection,
    pub clf: ClassifierConfig,
    pub seg: SegmenterConfig,
    pub constraints: ConstraintConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Architectures and schedules as published.
    Full,
    /// Small networks and short schedules that finish on a laptop CPU.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "desk" => Ok(Self::Desk),
            _ => Err(Error::Config(format!("unknown preset `{s}` (expected full or desk)"))),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(Preset::Full)
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let m = MatrixSpec::default();
        let mut cfg = Self {
            synth: SynthConfig::default(),
            matrix: MatrixSection {
                supervision: m.supervision,
                patch_sizes: m.patch_sizes,
                correction_sizes: m.correction_sizes,
                correction_unit: m.correction_unit,
                folds: m.folds,
                seed: m.seed,
                segment: m.segment,
                jobs: m.jobs,
            },
            clf: m.classifier,
            seg: m.segmenter,
            constraints: m.constraints,
        };
        if preset == Preset::Desk {
            cfg.clf.arch = ClassifierArch::VggSmall;
            cfg.clf.epochs = 10;
            cfg.seg.arch = SegmenterArch::ResUnetSmall;
            cfg.seg.epochs = 15;
            // keeps violated bands from swamping the emptiness term once t is large
            cfg.constraints.barrier_weight = 0.01;
        }
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::default().merged_toml(text)
    }

    /// Applies the keys present in `text` on top of `self`.
    pub fn merged_toml(&self, text: &str) -> Result<Self> {
        let patch: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let mut base = self.to_table()?;
        merge(&mut base, patch, "")?;
        Self::from_table(base)
    }

    pub fn merged_file(&self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merged_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// One `section.key=value` override. The value is read as a TOML literal
    /// and falls back to a bare string, so `seg.arch=res-unet` works unquoted.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        let mut patch = Table::new();
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().filter(|s| !s.is_empty());
        let Some(leaf) = leaf else {
            return Err(Error::Config(format!("empty key in `{assignment}`")));
        };
        let mut node = &mut patch;
        for part in parts {
            node = node
                .entry(part)
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .expect("freshly inserted table");
        }
        node.insert(leaf.to_string(), value);
        let mut base = self.to_table()?;
        merge(&mut base, patch, "")?;
        *self = Self::from_table(base)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn to_table(&self) -> Result<Table> {
        Table::try_from(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn from_table(t: Table) -> Result<Self> {
        let cfg: Self = Value::Table(t)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.clf.validate()?;
        self.seg.validate()?;
        self.constraints.validate()?;
        self.matrix_spec().validate()
    }

    pub fn matrix_spec(&self) -> MatrixSpec {
        let m = &self.matrix;
        MatrixSpec {
            supervision: m.supervision.clone(),
            patch_sizes: m.patch_sizes.clone(),
            correction_sizes: m.correction_sizes.clone(),
            correction_unit: m.correction_unit,
            folds: m.folds,
            seed: m.seed,
            segment: m.segment,
            classifier: self.clf.clone(),
            segmenter: self.seg.clone(),
            constraints: self.constraints.clone(),
            jobs: m.jobs,
        }
    }
}

/// One line of `run_record.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub unix_time: u64,
    pub version: String,
    pub argv: Vec<String>,
    /// Every setting the command ran with, seeds included.
    pub config: serde_json::Value,
}

pub const RUN_RECORD_FILE: &str = "run_record.jsonl";

/// Appends a record of this invocation to `<dir>/run_record.jsonl`.
pub fn append_run_record(dir: impl AsRef<Path>, argv: &[String], config: &impl Serialize) -> Result<PathBuf> {
    use std::io::Write;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let record = RunRecord {
        unix_time: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        version: env!("CARGO_PKG_VERSION").to_string(),
        argv: argv.to_vec(),
        config: serde_json::to_value(config)?,
    };
    let path = dir.join(RUN_RECORD_FILE);
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn merge(base: &mut Table, patch: Table, prefix: &str) -> Result<()> {
    for (k, v) in patch {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (None, _) => return Err(Error::Config(format!("unknown key `{path}`"))),
            (Some(Value::Table(b)), Value::Table(p)) => merge(b, p, &path)?,
            (Some(Value::Table(_)), _) => {
                return Err(Error::Config(format!("`{path}` is a section, not a value")))
            }
            (Some(_), Value::Table(_)) => {
                return Err(Error::Config(format!("`{path}` is a value, not a section")))
            }
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}
