use rand::seq::index::sample;

use super::{DataError, NormalizationStats, Observation, TrajectoryRecord};
use crate::seed::{rng_for, STREAM_MASK};

/// Per-dimension max-abs over every observation of every record.
pub fn compute_stats(records: &[TrajectoryRecord]) -> Result<NormalizationStats, DataError> {
    let d = records.iter().map(TrajectoryRecord::feature_dim).max().unwrap_or(0);
    let mut max_abs = vec![0.0f64; d];
    for r in records {
        for o in r.agents.iter().flatten() {
            for (m, v) in max_abs.iter_mut().zip(&o.features) {
                *m = m.max(v.abs());
            }
        }
    }
    if let Some(k) = max_abs.iter().position(|m| !(*m > 0.0)) {
        return Err(DataError::ZeroScale(k));
    }
    Ok(NormalizationStats { max_abs })
}

fn check_stats(stats: &NormalizationStats) -> Result<(), DataError> {
    match stats.max_abs.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
        Some(k) => Err(DataError::ZeroScale(k)),
        None => Ok(()),
    }
}

fn rescale(records: &mut [TrajectoryRecord], stats: &NormalizationStats, inverse: bool) -> Result<(), DataError> {
    check_stats(stats)?;
    for r in records {
        for o in r.agents.iter_mut().flatten() {
            if o.features.len() != stats.max_abs.len() {
                return Err(DataError::Invalid(format!(
                    "record {} has {} features, stats have {}",
                    r.id,
                    o.features.len(),
                    stats.max_abs.len()
                )));
            }
            for (v, m) in o.features.iter_mut().zip(&stats.max_abs) {
                if inverse {
                    *v *= m;
                } else {
                    *v /= m;
                }
            }
        }
    }
    Ok(())
}

pub fn normalize(records: &mut [TrajectoryRecord], stats: &NormalizationStats) -> Result<(), DataError> {
    rescale(records, stats, false)
}

pub fn denormalize(records: &mut [TrajectoryRecord], stats: &NormalizationStats) -> Result<(), DataError> {
    rescale(records, stats, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Condition on the first half of the training horizon, predict the rest.
    Train { horizon: usize },
    /// Condition on the full training horizon, predict the extension.
    Test { horizon: usize, extension: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedSample {
    pub id: usize,
    pub conditioning: Vec<Vec<Observation>>,
    pub target: Vec<Vec<Observation>>,
    /// First frame of the prediction window; latent time zero.
    pub origin_frame: usize,
    /// Number of frames in the prediction window.
    pub horizon_frames: usize,
}

impl SplitMode {
    fn windows(self) -> (usize, usize, usize) {
        match self {
            SplitMode::Train { horizon } => (horizon / 2, horizon, horizon),
            SplitMode::Test { horizon, extension } => (horizon, horizon + extension, horizon + extension),
        }
    }
}

pub fn split_condition_predict(record: &TrajectoryRecord, mode: SplitMode) -> Result<ConditionedSample, DataError> {
    let (origin, end, required) = mode.windows();
    if record.n_frames < required || origin == 0 || end <= origin {
        return Err(DataError::TooShort { id: record.id, required: required.max(2), actual: record.n_frames });
    }
    let mut conditioning = Vec::with_capacity(record.agents.len());
    let mut target = Vec::with_capacity(record.agents.len());
    for (a, obs) in record.agents.iter().enumerate() {
        let c: Vec<Observation> = obs.iter().filter(|o| o.frame < origin).cloned().collect();
        if c.is_empty() {
            return Err(DataError::EmptyWindow { id: record.id, agent: a });
        }
        conditioning.push(c);
        target.push(obs.iter().filter(|o| o.frame >= origin && o.frame < end).cloned().collect());
    }
    Ok(ConditionedSample { id: record.id, conditioning, target, origin_frame: origin, horizon_frames: end - origin })
}

fn keep_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(usize::from(n > 0), n)
}

/// Keep `ceil(ratio * n)` observations of each agent, uniformly chosen and
/// in their original order. Each agent uses its own stream derived from
/// `(seed, key, agent)`.
pub fn mask_agents(agents: &[Vec<Observation>], ratio: f64, seed: u64, key: usize) -> Result<Vec<Vec<Observation>>, DataError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(DataError::Invalid(format!("mask ratio {} outside (0, 1]", ratio)));
    }
    Ok(agents
        .iter()
        .enumerate()
        .map(|(a, obs)| {
            let k = keep_count(ratio, obs.len());
            if k == obs.len() {
                return obs.clone();
            }
            let mut rng = rng_for(seed, STREAM_MASK, ((key as u64) << 16) | a as u64);
            let mut idx: Vec<usize> = sample(&mut rng, obs.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| obs[i].clone()).collect()
        })
        .collect())
}

pub fn mask_observations(record: &TrajectoryRecord, ratio: f64, seed: u64) -> Result<TrajectoryRecord, DataError> {
    Ok(TrajectoryRecord { agents: mask_agents(&record.agents, ratio, seed, record.id)?, ..record.clone() })
}
