use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sap::SapConfig;
use crate::skeleton::{
    generate_synthetic_dataset, read_dataset, SkeletonError, SkeletonLayout, SkeletonSequence,
    SyntheticTaskSpec,
};
use crate::train::TrainConfig;

/// A configuration problem, located where possible.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigParseError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("config error")?;
        if let Some(line) = self.line {
            write!(f, " at line {line}")?;
        }
        if let Some(key) = &self.key {
            write!(f, " (key `{key}`)")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl ConfigParseError {
    fn plain(message: impl Into<String>) -> Self {
        Self {
            line: None,
            key: None,
            message: message.into(),
        }
    }

    fn from_toml(err: &toml::de::Error, text: &str) -> Self {
        let message = err.message().trim().to_string();
        let line = err
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let quoted = message
            .split('`')
            .nth(1)
            .filter(|_| message.contains("unknown field") || message.contains("missing field"))
            .map(str::to_string);
        let from_line = line.and_then(|l| {
            let src = text.lines().nth(l - 1)?;
            let (k, _) = src.split_once('=')?;
            Some(k.trim().to_string())
        });
        Self {
            line,
            key: quoted.or(from_line),
            message,
        }
    }
}

/// Where the samples come from: the synthetic generator, or SAPDS files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub angle_separation: f64,
    pub seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub frames: usize,
    pub noise_std: f64,
    pub test_scale: [f64; 2],
    pub test_rotation: bool,
    pub max_yaw_degrees: f64,
    /// SAPDS train split; replaces the generator when set.
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let task = SyntheticTaskSpec::new(4, 0.3, 42);
        Self {
            classes: 4,
            angle_separation: task.angle_separation,
            seed: task.seed,
            train_per_class: task.train_per_class,
            test_per_class: task.test_per_class,
            frames: task.frames,
            noise_std: task.noise_std,
            test_scale: [
                task.test_augmentation.scale.0,
                task.test_augmentation.scale.1,
            ],
            test_rotation: task.test_augmentation.rotation,
            max_yaw_degrees: task.test_augmentation.max_yaw.to_degrees(),
            train_file: None,
            test_file: None,
        }
    }
}

/// Samples ready for training.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub layout: SkeletonLayout,
    pub classes: usize,
    pub train: Vec<SkeletonSequence>,
    pub test: Vec<SkeletonSequence>,
}

impl DataConfig {
    pub fn task_spec(&self) -> SyntheticTaskSpec {
        let mut task = SyntheticTaskSpec::new(self.classes, self.angle_separation, self.seed);
        task.train_per_class = self.train_per_class;
        task.test_per_class = self.test_per_class;
        task.frames = self.frames;
        task.noise_std = self.noise_std;
        task.test_augmentation.scale = (self.test_scale[0], self.test_scale[1]);
        task.test_augmentation.rotation = self.test_rotation;
        task.test_augmentation.max_yaw = self.max_yaw_degrees.to_radians();
        task
    }

    /// Reads the configured files, resolved against `base`, or generates
    /// the synthetic task.
    pub fn load(&self, base: &Path) -> Result<LoadedData, SkeletonError> {
        let Some(train_file) = &self.train_file else {
            let task = self.task_spec();
            let (train, test) = generate_synthetic_dataset(&task)?;
            return Ok(LoadedData {
                layout: task.layout()?,
                classes: self.classes,
                train,
                test,
            });
        };
        let read = |p: &Path| -> Result<Vec<SkeletonSequence>, SkeletonError> {
            let path = base.join(p);
            let f = fs::File::open(&path).map_err(|e| {
                SkeletonError::InvalidSpec(format!("cannot open {}: {e}", path.display()))
            })?;
            read_dataset(BufReader::new(f))
        };
        let train = read(train_file)?;
        let test = match &self.test_file {
            Some(p) => read(p)?,
            None => Vec::new(),
        };
        let v = train
            .first()
            .ok_or_else(|| SkeletonError::InvalidSpec("train file has no samples".into()))?
            .joints();
        let layout = if v == 25 {
            SkeletonLayout::ntu25()
        } else {
            SkeletonLayout::chain(v)?
        };
        Ok(LoadedData {
            layout,
            classes: self.classes,
            train,
            test,
        })
    }
}

/// The `[data]`, `[sap]` and `[train]` sections of a run config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub sap: SapConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigParseError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigParseError::from_toml(&e, text))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigParseError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigParseError::plain(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigParseError> {
        let with_key = |key: &str, message: String| ConfigParseError {
            line: None,
            key: Some(key.into()),
            message,
        };
        self.sap
            .validate()
            .map_err(|e| with_key("sap", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| with_key("train", e.to_string()))?;
        self.data
            .task_spec()
            .validate()
            .map_err(|e| with_key("data", e.to_string()))
    }

    /// Sets `section.key` from a TOML literal; a bare word is taken as a
    /// string.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<(), ConfigParseError> {
        let bad = |message: String| ConfigParseError {
            line: None,
            key: Some(key.into()),
            message,
        };
        let (section, field) = key
            .split_once('.')
            .ok_or_else(|| bad("expected `section.key`".into()))?;
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut tree = toml::Value::try_from(&*self).map_err(|e| bad(e.to_string()))?;
        let table = tree
            .get_mut(section)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| bad(format!("unknown section `{section}`")))?;
        table.insert(field.to_string(), parsed);
        let updated: Self = tree
            .try_into()
            .map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}
