//! Prediction and reversal losses, AdamW, the training loop and evaluation.

mod config;
mod eval;
mod losses;
mod optim;
mod sample;
mod train;

use std::fmt;
use std::str::FromStr;

pub use config::{parse_train_file, TrainFile, TRAIN_KEYS};
pub use eval::{evaluate, EvalReport};
pub use losses::{loss_gt_rev, loss_pred, loss_rev2, loss_reverse};
pub use optim::{clip_global_norm, AdamW};
pub use sample::{prepare_samples, record_losses, LossVars, PreparedSample};
pub use train::{train, train_with, BatchLoss, LossReport, TrainConfig, TrainOutcome};

use crate::dataio::DataError;
use crate::diffcore::DiffError;
use crate::model::{ModelError, TangoModel};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, last_good: Box<TangoModel> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossVariant {
    /// Forward trajectory against the reverse pass launched from its endpoint.
    Tango,
    /// Ground truth against the same reverse pass.
    GtRev,
    /// Forward trajectory against a negated-field pass launched from z0.
    Rev2,
}

impl LossVariant {
    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Tango => "tango",
            LossVariant::GtRev => "gt-rev",
            LossVariant::Rev2 => "rev2",
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tango" => Ok(LossVariant::Tango),
            "gt-rev" => Ok(LossVariant::GtRev),
            "rev2" => Ok(LossVariant::Rev2),
            _ => Err(TrainError::Config(format!("unknown loss variant '{}' (tango, gt-rev, rev2)", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub variant: LossVariant,
}

impl LossConfig {
    pub fn new(alpha: f64, variant: LossVariant) -> Result<Self, TrainError> {
        let c = Self { alpha, variant };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(TrainError::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 1.0, variant: LossVariant::Tango }
    }
}
