use std::path::PathBuf;

use super::{LossConfig, LossVariant, TrainConfig, TrainError};
use crate::model::ModelConfig;

/// Contents of a `key: value` training configuration file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainFile {
    pub dataset: Option<PathBuf>,
    pub train: TrainConfig,
    /// `smoke` or `full` widths.
    pub model: String,
    /// Latent RK4 step; must divide the frame step.
    pub solver_step: Option<f64>,
}

pub const TRAIN_KEYS: [&str; 12] = [
    "dataset",
    "alpha",
    "variant",
    "epochs",
    "lr",
    "batch",
    "seed",
    "solver_step",
    "clip",
    "weight_decay",
    "model",
    "track_reverse",
];

impl Default for TrainFile {
    fn default() -> Self {
        Self { dataset: None, train: TrainConfig::new(LossConfig::default()), model: "smoke".into(), solver_step: None }
    }
}

impl TrainFile {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, TrainError> {
            v.parse().map_err(|_| TrainError::Config(format!("bad value for {}: '{}'", k, v)))
        }
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "alpha" => self.train.loss.alpha = num(key, value)?,
            "variant" => self.train.loss.variant = value.parse::<LossVariant>()?,
            "epochs" => self.train.epochs = num(key, value)?,
            "lr" => self.train.lr = num(key, value)?,
            "batch" => self.train.batch_size = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            "solver_step" => self.solver_step = Some(num(key, value)?),
            "clip" => self.train.clip = if value == "none" { None } else { Some(num(key, value)?) },
            "weight_decay" => self.train.weight_decay = num(key, value)?,
            "model" => match value {
                "smoke" | "full" => self.model = value.into(),
                _ => return Err(TrainError::Config(format!("unknown model preset '{}'", value))),
            },
            "track_reverse" => self.train.track_reverse = num(key, value)?,
            _ => return Err(TrainError::Config(format!("unknown key '{}'", key))),
        }
        Ok(())
    }

    pub fn model_config(&self, obs_dim: usize) -> Result<ModelConfig, TrainError> {
        let mut cfg = if self.model == "full" { ModelConfig::full(obs_dim) } else { ModelConfig::smoke(obs_dim) };
        if let Some(h) = self.solver_step {
            let ratio = cfg.frame_step / h;
            let n = ratio.round();
            if !(h > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-9 * n {
                return Err(TrainError::Config(format!("solver step {} does not divide the frame step {}", h, cfg.frame_step)));
            }
            cfg.substeps = n as usize;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn parse_train_file(text: &str) -> Result<TrainFile, TrainError> {
    let mut f = TrainFile::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| TrainError::Config(format!("line {}: expected 'key: value'", i + 1)))?;
        f.set(k.trim(), v.trim()).map_err(|e| TrainError::Config(format!("line {}: {}", i + 1, e)))?;
    }
    f.train.validate()?;
    Ok(f)
}
