//! Flat key=value run configuration.
//!
//! One file drives a whole run; keys mirror the model and training config
//! field names. CLI flags are applied after the file, so flags win.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainingConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            training: TrainingConfig::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(field: &str, value: &str) -> Result<T> {
    value.parse::<T>().map_err(|_| Error::Config {
        field: field.into(),
        msg: format!("cannot parse `{value}`"),
    })
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "embed_dim" => self.model.embed_dim = parse_value(key, value)?,
            "model_dim" => self.model.model_dim = parse_value(key, value)?,
            "heads" => self.model.heads = parse_value(key, value)?,
            "max_title_len" => self.model.max_title_len = parse_value(key, value)?,
            "max_history_len" => self.model.max_history_len = parse_value(key, value)?,
            "max_list_len" => self.model.max_list_len = parse_value(key, value)?,
            "list_encoder_mode" => self.model.list_encoder_mode = value.parse()?,
            "permutation_samples_at_inference" => {
                self.model.permutation_samples_at_inference = parse_value(key, value)?
            }
            "lambda" => self.training.lambda = parse_value(key, value)?,
            "objective" => self.training.objective = value.parse()?,
            "epochs" => self.training.epochs = parse_value(key, value)?,
            "batch_size" => self.training.batch_size = parse_value(key, value)?,
            "seed" => self.training.seed = parse_value(key, value)?,
            "lr" => self.training.lr = parse_value(key, value)?,
            "div_sigmoid" => self.training.div_sigmoid = parse_value(key, value)?,
            other => {
                return Err(Error::Config {
                    field: other.into(),
                    msg: "unknown configuration key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn apply_str(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: origin.into(),
                    line: i + 1,
                    msg: format!("expected key=value, got `{raw}`"),
                });
            };
            self.apply(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_str(
            &std::fs::read_to_string(path)?,
            &path.display().to_string(),
        )?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()
    }

    /// Serialized resolved configuration; parsing it back reproduces the
    /// exact same config.
    pub fn to_key_values(&self) -> String {
        format!(
            "embed_dim = {}\n\
             model_dim = {}\n\
             heads = {}\n\
             max_title_len = {}\n\
             max_history_len = {}\n\
             max_list_len = {}\n\
             list_encoder_mode = {}\n\
             permutation_samples_at_inference = {}\n\
             lambda = {}\n\
             objective = {}\n\
             epochs = {}\n\
             batch_size = {}\n\
             seed = {}\n\
             lr = {}\n\
             div_sigmoid = {}\n",
            self.model.embed_dim,
            self.model.model_dim,
            self.model.heads,
            self.model.max_title_len,
            self.model.max_history_len,
            self.model.max_list_len,
            self.model.list_encoder_mode,
            self.model.permutation_samples_at_inference,
            self.training.lambda,
            self.training.objective,
            self.training.epochs,
            self.training.batch_size,
            self.training.seed,
            self.training.lr,
            self.training.div_sigmoid,
        )
    }
}
