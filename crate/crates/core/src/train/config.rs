//! Run configuration and its flat key-value file format.
//!
//! A config file is a flat TOML table. Every field of [`TrainConfig`],
//! [`ModelConfig`] and [`LossConfig`] is a top-level key; omitted keys keep
//! their defaults and unknown keys are rejected.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{GraspError, Result};
use crate::losses::{LossConfig, SelectionMode, SgdConfig};
use crate::model::ModelConfig;

/// Where the anchor size comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorSource {
    /// Mean width/height of the training ground truth.
    #[default]
    MeanBox,
    /// `anchor_w` x `anchor_h` of the model config.
    Explicit,
}

impl std::str::FromStr for AnchorSource {
    type Err = GraspError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-box" => Ok(AnchorSource::MeanBox),
            "explicit" => Ok(AnchorSource::Explicit),
            _ => Err(GraspError::Config(format!("unknown anchor source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Evaluate and log metrics every this many iterations; 0 only at the end.
    pub eval_period: usize,
    pub anchor: AnchorSource,
    pub selection: SelectionMode,
    /// Online augmentation of every training image.
    pub augment: bool,
    /// Fractions of `iterations` after which the learning rate is multiplied
    /// by `lr_decay_factor`. Empty keeps it constant.
    pub lr_decay_at: Vec<f64>,
    pub lr_decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 4,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 0.0001,
            seed: 0,
            eval_period: 1000,
            anchor: AnchorSource::MeanBox,
            selection: SelectionMode::Primary,
            augment: true,
            lr_decay_at: vec![0.6, 0.85],
            lr_decay_factor: 0.1,
        }
    }

    pub fn full_scale() -> Self {
        Self {
            iterations: 100_000,
            batch_size: 10,
            lr: 0.001,
            eval_period: 5000,
            lr_decay_at: Vec::new(),
            ..Self::desk()
        }
    }

    /// Optimizer settings in effect at 1-based iteration `it`.
    pub fn sgd_at(&self, it: usize) -> SgdConfig {
        let passed = self
            .lr_decay_at
            .iter()
            .filter(|&&f| it as f64 > f * self.iterations as f64)
            .count();
        SgdConfig {
            lr: self.lr * self.lr_decay_factor.powi(passed as i32),
            ..self.sgd()
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(GraspError::Config("iterations and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(GraspError::Config(format!(
                "need lr > 0, momentum in [0, 1), weight_decay >= 0; got {}, {}, {}",
                self.lr, self.momentum, self.weight_decay
            )));
        }
        if self.lr_decay_at.iter().any(|f| !(0.0..=1.0).contains(f)) || !(self.lr_decay_factor > 0.0) {
            return Err(GraspError::Config(
                "lr_decay_at must lie in [0, 1] and lr_decay_factor be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
}

fn table_of<T: Serialize>(v: &T) -> toml::Table {
    match toml::Value::try_from(v).expect("config serializes") {
        toml::Value::Table(t) => t,
        _ => unreachable!("config is a struct"),
    }
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, keys: &toml::Table) -> Result<T> {
    let mut t = table_of(base);
    for (k, v) in keys {
        t.insert(k.clone(), v.clone());
    }
    Ok(toml::Value::Table(t).try_into()?)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            train: TrainConfig::desk(),
            model: ModelConfig::desk(),
            loss: LossConfig::desk(),
        }
    }

    pub fn full_scale() -> Self {
        Self {
            train: TrainConfig::full_scale(),
            model: ModelConfig::full_scale(),
            loss: LossConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.loss.validate()
    }

    /// Parses a flat config, overriding `self`'s values.
    pub fn merge_str(&self, text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text)?;
        let sections = [table_of(&self.train), table_of(&self.model), table_of(&self.loss)];
        let mut split: [toml::Table; 3] = Default::default();
        for (k, v) in table {
            let Some(i) = sections.iter().position(|s| s.contains_key(&k)) else {
                return Err(GraspError::Config(format!("unknown config key {k:?}")));
            };
            split[i].insert(k, v);
        }
        let out = Self {
            train: overlay(&self.train, &split[0])?,
            model: overlay(&self.model, &split[1])?,
            loss: overlay(&self.loss, &split[2])?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn from_str_desk(text: &str) -> Result<Self> {
        Self::desk().merge_str(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_str_desk(&std::fs::read_to_string(path)?)
    }

    /// Flat TOML that [`RunConfig::from_str_desk`] reads back unchanged.
    pub fn to_flat_string(&self) -> String {
        let mut t = table_of(&self.train);
        t.extend(table_of(&self.model));
        t.extend(table_of(&self.loss));
        toml::to_string(&t).expect("flat table serializes")
    }
}

/// Parses any flat config struct, with defaults for omitted keys.
pub fn parse_flat<T: Serialize + DeserializeOwned + Default>(text: &str) -> Result<T> {
    let table: toml::Table = toml::from_str(text)?;
    let known = table_of(&T::default());
    if let Some(k) = table.keys().find(|k| !known.contains_key(*k)) {
        return Err(GraspError::Config(format!("unknown config key {k:?}")));
    }
    overlay(&T::default(), &table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthConfig;

    #[test]
    fn every_field_is_addressable() {
        let text = "iterations = 20\nlr = 0.01\nfe_channels = [4, 8]\nfe_stride_total = 4\nt = 8\n\
                    anchor = \"explicit\"\nselection = \"final-score\"\nanchor_w = 12.5\n";
        let c = RunConfig::from_str_desk(text).unwrap();
        assert_eq!(c.train.iterations, 20);
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.model.fe_channels, vec![4, 8]);
        assert_eq!(c.loss.t, 8);
        assert_eq!(c.train.anchor, AnchorSource::Explicit);
        assert_eq!(c.train.selection, SelectionMode::FinalScore);
        assert_eq!(c.model.anchor_w, 12.5);
        assert_eq!(c.model.k, ModelConfig::desk().k);
    }

    #[test]
    fn step_decay() {
        let t = TrainConfig {
            iterations: 100,
            lr: 1.0,
            lr_decay_at: vec![0.5, 0.9],
            ..TrainConfig::desk()
        };
        assert_eq!(t.sgd_at(50).lr, 1.0);
        assert!((t.sgd_at(51).lr - 0.1).abs() < 1e-15);
        assert!((t.sgd_at(100).lr - 0.01).abs() < 1e-15);
        assert!((TrainConfig::desk().sgd_at(10_000).lr - 0.0002).abs() < 1e-15);
        assert_eq!(TrainConfig::full_scale().sgd_at(100_000).lr, 0.001);
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        assert!(matches!(
            RunConfig::from_str_desk("learning_rate = 1"),
            Err(GraspError::Config(_))
        ));
        assert!(RunConfig::from_str_desk("lr = \"fast\"").is_err());
        assert!(RunConfig::from_str_desk("lr = -1.0").is_err());
        assert!(RunConfig::from_str_desk("[train]\nlr = 1.0").is_err());
    }

    #[test]
    fn flat_string_roundtrip() {
        let mut c = RunConfig::desk();
        c.train.lr = 0.1 + 0.2;
        c.model.anchor_w = std::f64::consts::PI;
        let back = RunConfig::from_str_desk(&c.to_flat_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn synth_config_parses_flat() {
        let s: SynthConfig =
            parse_flat("image_size = 32\nkinds = [\"bar\", \"l-shape\"]\nlength = [10.0, 14.0]").unwrap();
        assert_eq!(s.image_size, 32);
        assert_eq!(s.length, (10.0, 14.0));
        assert!(parse_flat::<SynthConfig>("size = 3").is_err());
    }
}
