use rayon::prelude::*;

use super::{LossConfig, LossVariant, TrainError};
use crate::dataio::{mask_agents, split_condition_predict, SplitMode, TrajectoryRecord};
use crate::diffcore::{Tape, Tensor, Var};
use crate::model::{Bound, EdgeIndex, TemporalGraph};

/// A record split, encoded as a temporal graph, with targets flattened to
/// rows of the stacked `(frame, agent)` prediction matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub id: usize,
    pub n_agents: usize,
    /// Frames in the prediction window, including latent time zero.
    pub horizon: usize,
    pub graph: TemporalGraph,
    pub edges: EdgeIndex,
    /// `k * n_agents + agent` for each target observation at offset `k`.
    pub target_rows: Vec<usize>,
    pub target_offsets: Vec<usize>,
    pub target_values: Tensor,
}

impl PreparedSample {
    pub fn from_record(record: &TrajectoryRecord, mode: SplitMode, mask: Option<(f64, u64)>) -> Result<Self, TrainError> {
        let s = split_condition_predict(record, mode)?;
        let conditioning = match mask {
            Some((ratio, seed)) => mask_agents(&s.conditioning, ratio, seed, record.id)?,
            None => s.conditioning,
        };
        let n = record.n_agents();
        let graph = TemporalGraph::build(&conditioning, &record.adjacency, s.origin_frame)?;
        let mut target_rows = Vec::new();
        let mut target_offsets = Vec::new();
        let mut vals = Vec::new();
        let d = record.feature_dim();
        for (a, obs) in s.target.iter().enumerate() {
            for o in obs {
                let k = o.frame - s.origin_frame;
                target_rows.push(k * n + a);
                target_offsets.push(k);
                vals.extend_from_slice(&o.features);
            }
        }
        let target_values = Tensor::matrix(target_rows.len(), d, vals)?;
        Ok(Self {
            id: record.id,
            n_agents: n,
            horizon: s.horizon_frames,
            graph,
            edges: EdgeIndex::from_adjacency(&record.adjacency),
            target_rows,
            target_offsets,
            target_values,
        })
    }

    pub fn n_targets(&self) -> usize {
        self.target_rows.len()
    }
}

pub fn prepare_samples(
    records: &[TrajectoryRecord],
    mode: SplitMode,
    mask: Option<(f64, u64)>,
) -> Result<Vec<PreparedSample>, TrainError> {
    records.par_iter().map(|r| PreparedSample::from_record(r, mode, mask)).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub pred: Var,
    /// Reversal term of the configured variant; `None` when neither weighted
    /// nor tracked.
    pub reverse: Option<Var>,
    pub total: Var,
    /// Decoded forward predictions, `(horizon * agents) x dim`.
    pub forward: Var,
}

fn stacked_decode(b: &Bound, tape: &mut Tape, zs: &[Var]) -> Result<Var, TrainError> {
    let z = tape.concat(zs, 0)?;
    Ok(b.decode(tape, z)?)
}

fn diff_sq(tape: &mut Tape, a: Var, b: Var) -> Result<Var, TrainError> {
    let d = tape.sub(a, b)?;
    Ok(tape.sq_sum(d)?)
}

fn reversal_term(
    b: &Bound,
    tape: &mut Tape,
    s: &PreparedSample,
    variant: LossVariant,
    z0: Var,
    zf: &[Var],
    yf: Var,
) -> Result<Var, TrainError> {
    let n = s.n_agents;
    let last = s.horizon - 1;
    match variant {
        LossVariant::Tango | LossVariant::GtRev => {
            let zr = b.integrate_reverse(tape, zf[last], &s.edges, s.horizon)?;
            let yr = stacked_decode(b, tape, &zr)?;
            if variant == LossVariant::Tango {
                let idx: Vec<usize> = (0..s.horizon).flat_map(|t| (0..n).map(move |i| (last - t) * n + i)).collect();
                let flipped = tape.gather_rows(yr, &idx)?;
                diff_sq(tape, yf, flipped)
            } else {
                let idx: Vec<usize> =
                    s.target_rows.iter().zip(&s.target_offsets).map(|(r, k)| (last - k) * n + r % n).collect();
                let truth = tape.constant(s.target_values.clone());
                if idx.is_empty() {
                    return Ok(tape.constant(Tensor::scalar(0.0)));
                }
                let rev = tape.gather_rows(yr, &idx)?;
                diff_sq(tape, truth, rev)
            }
        }
        LossVariant::Rev2 => {
            let z2 = b.integrate_reverse(tape, z0, &s.edges, s.horizon)?;
            let y2 = stacked_decode(b, tape, &z2)?;
            diff_sq(tape, yf, y2)
        }
    }
}

/// Per-record losses on one tape. With `alpha == 0` the total is the
/// prediction loss itself and any tracked reversal term is recorded after
/// it, outside its dependency graph.
pub fn record_losses(
    b: &Bound,
    tape: &mut Tape,
    s: &PreparedSample,
    cfg: &LossConfig,
    track_reverse: bool,
) -> Result<LossVars, TrainError> {
    let z0 = b.encode(tape, &s.graph)?;
    let zf = b.integrate_forward(tape, z0, &s.edges, s.horizon)?;
    let yf = stacked_decode(b, tape, &zf)?;
    let pred = if s.target_rows.is_empty() {
        tape.constant(Tensor::scalar(0.0))
    } else {
        let picked = tape.gather_rows(yf, &s.target_rows)?;
        let truth = tape.constant(s.target_values.clone());
        diff_sq(tape, picked, truth)?
    };
    if cfg.alpha > 0.0 {
        let rev = reversal_term(b, tape, s, cfg.variant, z0, &zf, yf)?;
        let w = tape.scale(rev, cfg.alpha)?;
        let total = tape.add(pred, w)?;
        Ok(LossVars { pred, reverse: Some(rev), total, forward: yf })
    } else {
        let reverse = if track_reverse { Some(reversal_term(b, tape, s, cfg.variant, z0, &zf, yf)?) } else { None };
        Ok(LossVars { pred, reverse, total: pred, forward: yf })
    }
}
