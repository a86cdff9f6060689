use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::transform::{compute_stats, normalize};
use super::{DataError, Dataset, DatasetMeta, Observation, SamplingConfig, SystemConfig, SystemKind, TrajectoryRecord};
use crate::physics::{Adjacency, Integrator, PhaseState, SpringSpec, System};
use crate::seed::{rng_for, STREAM_ADJACENCY, STREAM_INITIAL_STATE, STREAM_SAMPLING};

const MAX_ATTEMPTS: u64 = 1000;

/// Independent edges with the configured probability, redrawn while the
/// graph has no edge at all. The pendulum is always a chain.
pub fn sample_adjacency<R: Rng>(cfg: &SystemConfig, rng: &mut R) -> Adjacency {
    let n = cfg.n_agents;
    if cfg.kind == SystemKind::Pendulum {
        return Adjacency::chain(n);
    }
    if n < 2 {
        return Adjacency::empty(n);
    }
    loop {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(cfg.edge_probability) {
                    pairs.push((i, j));
                }
            }
        }
        if !pairs.is_empty() {
            return Adjacency::from_pairs(n, &pairs).expect("valid pairs");
        }
    }
}

fn initial_state<R: Rng>(cfg: &SystemConfig, sampling: &SamplingConfig, rng: &mut R) -> PhaseState {
    let n = cfg.n_agents;
    if cfg.kind == SystemKind::Pendulum {
        let pi = std::f64::consts::PI;
        let q = (0..3).map(|_| rng.gen_range(-pi..pi)).collect();
        return PhaseState::new(3, 1, q, vec![0.0; 3], 0.0).expect("pendulum shape");
    }
    let d = SpringSpec::DIM;
    let normal = Normal::new(0.0, sampling.init_scale).expect("positive scale");
    let q = (0..n * d).map(|_| normal.sample(rng)).collect();
    let p = (0..n * d).map(|_| normal.sample(rng)).collect();
    PhaseState::new(n, d, q, p, 0.0).expect("spring shape")
}

/// States at every `stride`-th integration step, `n_frames` in total.
/// `None` when the integration diverges.
pub fn simulate_frames(
    system: &System,
    s0: &PhaseState,
    dt: f64,
    stride: usize,
    n_frames: usize,
) -> Result<Option<Vec<PhaseState>>, DataError> {
    let integrator = match system {
        System::Spring(_) => Integrator::Euler,
        System::Pendulum(_) => Integrator::Rk4,
    };
    let mut frames = Vec::with_capacity(n_frames);
    frames.push(s0.clone());
    while frames.len() < n_frames {
        let tr = integrator.integrate(system, frames.last().unwrap(), dt, stride)?;
        if tr.diverged() {
            return Ok(None);
        }
        let mut last = tr.states.into_iter().last().unwrap();
        // keep frame times exact multiples of the frame spacing
        last.t = frames.len() as f64 * stride as f64 * dt;
        frames.push(last);
    }
    Ok(Some(frames))
}

fn observe<R: Rng>(frames: &[PhaseState], pool: std::ops::Range<usize>, count: usize, rng: &mut R) -> Vec<Observation> {
    let mut picked: Vec<usize> = sample(rng, pool.len(), count).into_iter().map(|k| pool.start + k).collect();
    picked.sort_unstable();
    picked.into_iter().map(|f| Observation { frame: f, t: frames[f].t, features: Vec::new() }).collect()
}

fn features(s: &PhaseState, agent: usize) -> Vec<f64> {
    s.agent_features(agent)
}

struct Raw {
    record: TrajectoryRecord,
    attempts: u64,
}

fn make_record(
    id: usize,
    test: bool,
    cfg: &SystemConfig,
    sampling: &SamplingConfig,
) -> Result<Raw, DataError> {
    let n_frames = if test { sampling.test_frames() } else { sampling.train_frames() };
    let train_frames = sampling.train_frames();
    let mut adj_rng = rng_for(sampling.seed, STREAM_ADJACENCY, id as u64);
    let adjacency = sample_adjacency(cfg, &mut adj_rng);
    let system = cfg.build(&adjacency)?;
    for attempt in 0..MAX_ATTEMPTS {
        let mut init_rng = rng_for(sampling.seed, STREAM_INITIAL_STATE, ((id as u64) << 20) | attempt);
        let s0 = initial_state(cfg, sampling, &mut init_rng);
        let Some(frames) = simulate_frames(&system, &s0, sampling.dt, sampling.stride, n_frames)? else {
            continue;
        };
        let mut rng = rng_for(sampling.seed, STREAM_SAMPLING, id as u64);
        let mut agents = Vec::with_capacity(cfg.n_agents);
        for a in 0..cfg.n_agents {
            let count = rng.gen_range(sampling.obs_count_min..=sampling.obs_count_max);
            let mut obs = observe(&frames, 0..train_frames, count, &mut rng);
            if test {
                obs.extend(observe(&frames, train_frames..n_frames, sampling.test_extra_obs, &mut rng));
            }
            for o in &mut obs {
                o.features = features(&frames[o.frame], a);
            }
            agents.push(obs);
        }
        return Ok(Raw { record: TrajectoryRecord { id, n_frames, agents, adjacency }, attempts: attempt });
    }
    Err(DataError::Invalid(format!("trajectory {} diverged {} times", id, MAX_ATTEMPTS)))
}

/// Simulate, subsample, observe irregularly and normalize.
/// Train ids are `0..n_train`, test ids follow.
pub fn generate_dataset(
    cfg: &SystemConfig,
    sampling: &SamplingConfig,
    n_train: usize,
    n_test: usize,
) -> Result<Dataset, DataError> {
    cfg.validate()?;
    sampling.validate()?;
    if n_train == 0 {
        return Err(DataError::Invalid("n_train must be positive".into()));
    }
    let raws: Vec<Raw> = (0..n_train + n_test)
        .into_par_iter()
        .map(|id| make_record(id, id >= n_train, cfg, sampling))
        .collect::<Result<_, _>>()?;
    let regenerated = raws.iter().map(|r| r.attempts as usize).sum();
    let mut records: Vec<TrajectoryRecord> = raws.into_iter().map(|r| r.record).collect();
    let stats = compute_stats(&records)?;
    normalize(&mut records, &stats)?;
    let test = records.split_off(n_train);
    Ok(Dataset {
        meta: DatasetMeta {
            system: cfg.clone(),
            sampling: sampling.clone(),
            n_train,
            n_test,
            feature_dim: cfg.kind.feature_dim(),
            stats,
            regenerated,
        },
        train: records,
        test,
    })
}
