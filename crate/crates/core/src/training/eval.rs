use rayon::prelude::*;

use super::{record_losses, LossConfig, LossVariant, PreparedSample, TrainError};
use crate::diffcore::Tape;
use crate::model::TangoModel;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Mean squared error per scalar over targets within `max_length`.
    pub mse: f64,
    pub n_values: usize,
    /// `(L, mse)` restricted to the first `L` prediction frames.
    pub per_length: Vec<(usize, f64)>,
    /// Mean per-record reversal loss over the prediction window.
    pub reverse: f64,
}

struct Acc {
    sq: Vec<f64>,
    count: Vec<usize>,
    reverse: f64,
}

fn eval_record(model: &TangoModel, s: &PreparedSample, max_length: usize) -> Result<Acc, TrainError> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let cfg = LossConfig { alpha: 0.0, variant: LossVariant::Tango };
    let lv = record_losses(&b, &mut tape, s, &cfg, true)?;
    let y = tape.value(lv.forward);
    let mut sq = vec![0.0; max_length];
    let mut count = vec![0; max_length];
    for (j, (&row, &k)) in s.target_rows.iter().zip(&s.target_offsets).enumerate() {
        if k >= max_length {
            continue;
        }
        for (p, t) in y.row(row).iter().zip(s.target_values.row(j)) {
            sq[k] += (p - t) * (p - t);
            count[k] += 1;
        }
    }
    Ok(Acc { sq, count, reverse: lv.reverse.map_or(0.0, |v| tape.value(v).data()[0]) })
}

pub fn evaluate(model: &TangoModel, samples: &[PreparedSample], max_length: usize) -> Result<EvalReport, TrainError> {
    if samples.is_empty() || max_length == 0 {
        return Err(TrainError::Config("evaluation needs samples and a positive length".into()));
    }
    let results: Vec<Result<Acc, TrainError>> = samples.par_iter().map(|s| eval_record(model, s, max_length)).collect();
    let mut sq = vec![0.0; max_length];
    let mut count = vec![0usize; max_length];
    let mut reverse = 0.0;
    for r in results {
        let r = r?;
        for k in 0..max_length {
            sq[k] += r.sq[k];
            count[k] += r.count[k];
        }
        reverse += r.reverse;
    }
    let mut per_length = Vec::with_capacity(max_length);
    let (mut s, mut c) = (0.0, 0usize);
    for k in 0..max_length {
        s += sq[k];
        c += count[k];
        per_length.push((k + 1, if c > 0 { s / c as f64 } else { 0.0 }));
    }
    let mse = if c > 0 { s / c as f64 } else { 0.0 };
    if !mse.is_finite() {
        return Err(TrainError::Model(crate::model::ModelError::Diverged { step: 0 }));
    }
    Ok(EvalReport { mse, n_values: c, per_length, reverse: reverse / samples.len() as f64 })
}
