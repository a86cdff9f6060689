use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::optim::{clip_global_norm, AdamW};
use super::{record_losses, LossConfig, PreparedSample, TrainError};
use crate::diffcore::{Tape, Tensor};
use crate::model::{ModelError, TangoModel};
use crate::seed::{rng_for, STREAM_SHUFFLE};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm cap.
    pub clip: Option<f64>,
    /// Record the reversal loss even when `alpha == 0`.
    pub track_reverse: bool,
}

impl TrainConfig {
    pub fn new(loss: LossConfig) -> Self {
        Self { loss, epochs: 30, lr: 1e-4, weight_decay: 1e-4, batch_size: 32, seed: 0, clip: None, track_reverse: true }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.loss.validate()?;
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return bad(format!("bad learning rate {} or weight decay {}", self.lr, self.weight_decay));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return bad(format!("clip must be positive, got {}", c));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub pred: f64,
    pub reverse: Option<f64>,
    pub total: f64,
}

/// Means over records: per epoch and per batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub pred: f64,
    pub reverse: Option<f64>,
    pub total: f64,
    pub batches: Vec<BatchLoss>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: TangoModel,
    pub reports: Vec<LossReport>,
    pub optimizer: AdamW,
}

struct RecordResult {
    grads: Vec<Tensor>,
    pred: f64,
    reverse: Option<f64>,
    total: f64,
}

fn run_record(model: &TangoModel, s: &PreparedSample, cfg: &TrainConfig) -> Result<RecordResult, TrainError> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let lv = record_losses(&b, &mut tape, s, &cfg.loss, cfg.track_reverse)?;
    let grads = tape.backward(lv.total)?;
    let val = |v| tape.value(v).data()[0];
    Ok(RecordResult {
        grads: model.params.collect_grads(&grads, &b.vars),
        pred: val(lv.pred),
        reverse: lv.reverse.map(val),
        total: val(lv.total),
    })
}

fn sum_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x + y),
        _ => None,
    }
}

pub fn train(model: TangoModel, samples: &[PreparedSample], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(model, samples, cfg, |_| {})
}

/// Mini-batch AdamW on the mean per-record loss. Records of a batch run in
/// parallel; their gradients are summed in batch order, so results do not
/// depend on the thread count.
pub fn train_with(
    mut model: TangoModel,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&LossReport),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(TrainError::Config("no training samples".into()));
    }
    let mut opt = AdamW::new(model.params.tensors(), cfg.lr, cfg.weight_decay);
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, STREAM_SHUFFLE, epoch as u64));
        let mut batches = Vec::new();
        let (mut ep_pred, mut ep_rev, mut ep_total) = (0.0, Some(0.0), 0.0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let abort = |m: &TangoModel| TrainError::NonFinite { epoch, batch: bi, last_good: Box::new(m.clone()) };
            let results: Vec<Result<RecordResult, TrainError>> =
                chunk.par_iter().map(|&i| run_record(&model, &samples[i], cfg)).collect();
            let mut grads: Vec<Tensor> = model.params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            let (mut pred, mut rev, mut total) = (0.0, Some(0.0), 0.0);
            for r in results {
                let r = match r {
                    Ok(r) => r,
                    Err(TrainError::Model(ModelError::Diverged { .. })) => return Err(abort(&model)),
                    Err(e) => return Err(e),
                };
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                }
                pred += r.pred;
                rev = sum_opt(rev, r.reverse);
                total += r.total;
            }
            let k = chunk.len() as f64;
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x /= k));
            if !total.is_finite() || !grads.iter().all(Tensor::all_finite) {
                return Err(abort(&model));
            }
            if let Some(c) = cfg.clip {
                clip_global_norm(&mut grads, c);
            }
            opt.update(model.params.tensors_mut(), &grads)?;
            ep_pred += pred;
            ep_rev = sum_opt(ep_rev, rev);
            ep_total += total;
            batches.push(BatchLoss { pred: pred / k, reverse: rev.map(|r| r / k), total: total / k });
        }
        let n = samples.len() as f64;
        let report =
            LossReport { epoch, pred: ep_pred / n, reverse: ep_rev.map(|r| r / n), total: ep_total / n, batches };
        on_epoch(&report);
        reports.push(report);
    }
    Ok(TrainOutcome { model, reports, optimizer: opt })
}
