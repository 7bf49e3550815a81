//! Run configuration: a flat `key=value` file (dotted keys for nesting)
//! merged with command-line overrides. Unknown keys are errors, never
//! silently dropped.

use std::path::{Path, PathBuf};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::head::HeadConfig;
use crate::tfidf::BaselineConfig;
use crate::train::{PretrainConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
    pub baseline: BaselineConfig,
    /// train/val/test fractions, summing to 1.
    pub split: (f64, f64, f64),
    pub seed: u64,
    pub threshold: f64,
    pub data_csv: Option<PathBuf>,
    pub vocab_path: Option<PathBuf>,
    pub vocab_max_size: usize,
    pub vocab_min_freq: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
            train: TrainConfig::default(),
            pretrain: PretrainConfig::default(),
            baseline: BaselineConfig::default(),
            split: (0.8, 0.1, 0.1),
            seed: 42,
            threshold: crate::model::DEFAULT_THRESHOLD,
            data_csv: None,
            vocab_path: None,
            vocab_max_size: 8000,
            vocab_min_freq: 2,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "cannot parse '{value}' for key '{key}' (expected true/false)"
        ))),
    }
}

impl RunConfig {
    /// Applies one `key=value` assignment. This is the single interpretation
    /// point for both config files and CLI overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                self.train.seed = self.seed;
                self.pretrain.seed = self.seed;
                self.baseline.seed = self.seed;
            }
            "threshold" => self.threshold = parse(key, value)?,
            "data.csv" => self.data_csv = Some(PathBuf::from(value)),
            "data.vocab" => self.vocab_path = Some(PathBuf::from(value)),
            "vocab.max_size" => self.vocab_max_size = parse(key, value)?,
            "vocab.min_freq" => self.vocab_min_freq = parse(key, value)?,

            "split.train" => self.split.0 = parse(key, value)?,
            "split.val" => self.split.1 = parse(key, value)?,
            "split.test" => self.split.2 = parse(key, value)?,

            "encoder.num_layers" => self.encoder.num_layers = parse(key, value)?,
            "encoder.num_heads" => self.encoder.num_heads = parse(key, value)?,
            "encoder.model_dim" => self.encoder.model_dim = parse(key, value)?,
            "encoder.ff_dim" => self.encoder.ff_dim = parse(key, value)?,
            "encoder.max_len" => self.encoder.max_len = parse(key, value)?,
            "encoder.dropout_rate" => self.encoder.dropout_rate = parse(key, value)?,

            "head.d_a" => self.head.d_a = parse(key, value)?,
            "head.d_h" => self.head.d_h = parse(key, value)?,
            "head.d_fc" => self.head.d_fc = parse(key, value)?,
            "head.cell_mode" => self.head.cell_mode = parse(key, value)?,
            "head.pooling" => self.head.pooling = parse(key, value)?,
            "head.merge" => self.head.merge = parse(key, value)?,

            "train.learning_rate" => self.train.learning_rate = parse(key, value)?,
            "train.encoder_learning_rate" => self.train.encoder_learning_rate = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.max_epochs" => self.train.max_epochs = parse(key, value)?,
            "train.optimizer" => self.train.optimizer = parse(key, value)?,
            "train.class_weighting" => self.train.class_weighting = parse(key, value)?,
            "train.early_stop_patience" => self.train.early_stop_patience = parse(key, value)?,
            "train.encoder_frozen" => self.train.encoder_frozen = parse_bool(key, value)?,
            "train.gradient_clip_norm" => {
                self.train.gradient_clip_norm = if value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }

            "pretrain.steps" => self.pretrain.steps = parse(key, value)?,
            "pretrain.batch_size" => self.pretrain.batch_size = parse(key, value)?,
            "pretrain.learning_rate" => self.pretrain.learning_rate = parse(key, value)?,

            "baseline.epochs" => self.baseline.epochs = parse(key, value)?,
            "baseline.batch_size" => self.baseline.batch_size = parse(key, value)?,
            "baseline.learning_rate" => self.baseline.learning_rate = parse(key, value)?,
            "baseline.class_weighting" => self.baseline.class_weighting = parse(key, value)?,
            "baseline.max_features" => {
                self.baseline.max_features = if value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }

            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses file text: one `key=value` per line, `#` comments, blank lines
    /// ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line without '=': '{line}'")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut config = RunConfig::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Sanity checks shared by subcommands before any heavy work starts.
    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0,1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}
