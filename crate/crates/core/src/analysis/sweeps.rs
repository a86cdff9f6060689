use super::{AnalysisError, Csv};
use crate::dataio::{NormalizationStats, SplitMode, TrajectoryRecord};
use crate::diffcore::Tape;
use crate::model::{ModelConfig, TangoModel};
use crate::physics::{energy, PhaseState, System};
use crate::training::{evaluate, prepare_samples, record_losses, train, LossConfig, LossReport, LossVariant, PreparedSample, TrainConfig, TrainError};

pub const DEFAULT_ALPHAS: [f64; 6] = [0.0, 0.1, 0.5, 1.0, 2.0, 5.0];
pub const DEFAULT_LENGTHS: [usize; 5] = [20, 30, 40, 50, 60];

/// One sweep cell. `mse` is `None` when the run diverged.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub param: f64,
    pub mse: Option<f64>,
    pub note: String,
}

pub fn sweep_csv(name: &str, rows: &[SweepRow]) -> Csv {
    let mut csv = Csv::new(&[name, "mse", "note"]);
    for r in rows {
        csv.push(vec![super::f(r.param), super::opt(r.mse), r.note.clone()]);
    }
    csv
}

/// One model per alpha, all from the same seed.
pub fn alpha_sweep(
    train_set: &[PreparedSample],
    test_set: &[PreparedSample],
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    alphas: &[f64],
    max_length: usize,
) -> Result<Vec<SweepRow>, AnalysisError> {
    if alphas.iter().any(|a| !(*a >= 0.0)) || !alphas.contains(&0.0) {
        return Err(AnalysisError::Invalid("alphas must be non-negative and include 0".into()));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut cfg = base.clone();
        cfg.loss = LossConfig { alpha, ..base.loss };
        let model = TangoModel::new(model_cfg.clone(), base.seed)?;
        let row = match train(model, train_set, &cfg) {
            Ok(out) => match evaluate(&out.model, test_set, max_length) {
                Ok(r) => SweepRow { param: alpha, mse: Some(r.mse), note: String::new() },
                Err(TrainError::Model(e)) => SweepRow { param: alpha, mse: None, note: format!("diverged in evaluation: {}", e) },
                Err(e) => return Err(e.into()),
            },
            Err(TrainError::NonFinite { epoch, batch, .. }) => {
                SweepRow { param: alpha, mse: None, note: format!("diverged at epoch {} batch {}", epoch, batch) }
            }
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }
    Ok(rows)
}

fn check_lengths(samples: &[PreparedSample], lengths: &[usize]) -> Result<usize, AnalysisError> {
    let avail = samples.iter().map(|s| s.horizon).min().unwrap_or(0);
    let max = lengths.iter().copied().max().unwrap_or(0);
    if lengths.iter().any(|&l| l == 0) || max > avail {
        return Err(AnalysisError::Invalid(format!("lengths {:?} exceed the {} available frames", lengths, avail)));
    }
    Ok(max)
}

/// MSE over the first `L` prediction frames for each `L`, fixed model.
pub fn horizon_sweep(model: &TangoModel, test_set: &[PreparedSample], lengths: &[usize]) -> Result<Vec<SweepRow>, AnalysisError> {
    let max = check_lengths(test_set, lengths)?;
    let r = evaluate(model, test_set, max)?;
    Ok(lengths.iter().map(|&l| SweepRow { param: l as f64, mse: Some(r.per_length[l - 1].1), note: String::new() }).collect())
}

/// Evaluation MSE with each agent's conditioning observations subsampled.
pub fn ratio_sweep(
    model: &TangoModel,
    records: &[TrajectoryRecord],
    mode: SplitMode,
    ratios: &[f64],
    seed: u64,
    max_length: usize,
) -> Result<Vec<SweepRow>, AnalysisError> {
    if ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(AnalysisError::Invalid("ratios must lie in (0, 1]".into()));
    }
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let samples = prepare_samples(records, mode, Some((ratio, seed)))?;
        let row = match evaluate(model, &samples, max_length) {
            Ok(r) => SweepRow { param: ratio, mse: Some(r.mse), note: String::new() },
            Err(TrainError::Model(e)) => SweepRow { param: ratio, mse: None, note: format!("diverged: {}", e) },
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyPoint {
    pub offset: usize,
    pub t: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
}

pub fn energy_csv(points: &[EnergyPoint]) -> Csv {
    let mut csv = Csv::new(&["offset", "t", "kinetic", "potential", "total"]);
    for p in points {
        csv.push(vec![p.offset.to_string(), super::f(p.t), super::f(p.kinetic), super::f(p.potential), super::f(p.total)]);
    }
    csv
}

/// Energy of the decoded forward prediction at every prediction frame, in
/// physical units. Features are `(q, p)` halves per agent.
pub fn energy_curve(
    model: &TangoModel,
    sample: &PreparedSample,
    system: &System,
    stats: &NormalizationStats,
    t0: f64,
    frame_dt: f64,
) -> Result<Vec<EnergyPoint>, AnalysisError> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let lv = record_losses(&b, &mut tape, sample, &LossConfig::new(0.0, LossVariant::Tango)?, false)?;
    let y = tape.value(lv.forward);
    let dim = stats.max_abs.len();
    if dim % 2 != 0 || y.dims2().map(|(_, c)| c) != Some(dim) {
        return Err(AnalysisError::Invalid(format!("cannot split {} features into (q, p)", dim)));
    }
    let d = dim / 2;
    let n = sample.n_agents;
    let mut out = Vec::with_capacity(sample.horizon);
    for k in 0..sample.horizon {
        let (mut q, mut p) = (Vec::with_capacity(n * d), Vec::with_capacity(n * d));
        for a in 0..n {
            let row = y.row(k * n + a);
            let phys: Vec<f64> = row.iter().zip(&stats.max_abs).map(|(v, m)| v * m).collect();
            q.extend_from_slice(&phys[..d]);
            p.extend_from_slice(&phys[d..]);
        }
        let t = t0 + k as f64 * frame_dt;
        let e = energy(&PhaseState::new(n, d, q, p, t)?, system)?;
        out.push(EnergyPoint { offset: k, t, kinetic: e.kinetic, potential: e.potential, total: e.total });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackRow {
    pub epoch: usize,
    pub pred: f64,
    pub reverse: Option<f64>,
    pub total: f64,
}

/// Per-epoch loss series of a training run.
pub fn reversal_track(reports: &[LossReport]) -> Vec<TrackRow> {
    reports.iter().map(|r| TrackRow { epoch: r.epoch, pred: r.pred, reverse: r.reverse, total: r.total }).collect()
}

pub fn track_csv(rows: &[TrackRow]) -> Csv {
    let mut csv = Csv::new(&["epoch", "pred", "reverse", "total"]);
    for r in rows {
        csv.push(vec![r.epoch.to_string(), super::f(r.pred), super::opt(r.reverse), super::f(r.total)]);
    }
    csv
}
