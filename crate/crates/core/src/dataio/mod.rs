//! Dataset generation, irregular sampling, normalization, splits and masking.

mod format;
mod generate;
mod transform;

use std::fmt;
use std::str::FromStr;

pub use format::{format_f64, read_dataset, write_dataset, META_KEYS};
pub use generate::{generate_dataset, sample_adjacency, simulate_frames};
pub use transform::{
    compute_stats, denormalize, mask_agents, mask_observations, normalize, split_condition_predict, ConditionedSample,
    SplitMode,
};

use crate::physics::{Adjacency, PendulumSpec, PhysicsError, SpringSpec, SpringVariant, System};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file} line {line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("record {id} spans {actual} frames, {required} required")]
    TooShort { id: usize, required: usize, actual: usize },
    #[error("record {id}: agent {agent} has no observation in the conditioning window")]
    EmptyWindow { id: usize, agent: usize },
    #[error("feature dimension {0} has zero max-abs")]
    ZeroScale(usize),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemKind {
    SimpleSpring,
    ForcedSpring,
    DampedSpring,
    Pendulum,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] =
        [SystemKind::SimpleSpring, SystemKind::ForcedSpring, SystemKind::DampedSpring, SystemKind::Pendulum];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::SimpleSpring => "simple-spring",
            SystemKind::ForcedSpring => "forced-spring",
            SystemKind::DampedSpring => "damped-spring",
            SystemKind::Pendulum => "pendulum",
        }
    }

    pub fn is_spring(self) -> bool {
        self != SystemKind::Pendulum
    }

    /// Euler for springs at 1e-3, RK4 for the pendulum at 1e-4.
    pub fn default_dt(self) -> f64 {
        if self.is_spring() {
            1e-3
        } else {
            1e-4
        }
    }

    pub fn feature_dim(self) -> usize {
        if self.is_spring() {
            2 * SpringSpec::DIM
        } else {
            2
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| DataError::Invalid(format!("unknown system '{}'", s)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub n_agents: usize,
    pub mass: f64,
    pub spring_constant: f64,
    pub forcing_strength: f64,
    pub forcing_frequency: f64,
    pub damping: f64,
    pub pendulum_mass: f64,
    pub pendulum_length: f64,
    pub gravity: f64,
    pub edge_probability: f64,
}

impl SystemConfig {
    pub fn new(kind: SystemKind) -> Self {
        let p = PendulumSpec::default();
        Self {
            kind,
            n_agents: if kind.is_spring() { 5 } else { 3 },
            mass: 1.0,
            spring_constant: 0.1,
            forcing_strength: 10.0,
            forcing_frequency: 1.0,
            damping: 10.0,
            pendulum_mass: p.mass,
            pendulum_length: p.length,
            gravity: p.gravity,
            edge_probability: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.kind == SystemKind::Pendulum && self.n_agents != 3 {
            return Err(DataError::Invalid(format!("pendulum has 3 sticks, got n_agents {}", self.n_agents)));
        }
        if self.n_agents == 0 {
            return Err(DataError::Invalid("n_agents must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.edge_probability) || (self.kind.is_spring() && self.edge_probability == 0.0 && self.n_agents > 1) {
            return Err(DataError::Invalid(format!("edge probability {} out of range", self.edge_probability)));
        }
        self.build(&Adjacency::empty(self.n_agents))?;
        Ok(())
    }

    pub fn spring_variant(&self) -> SpringVariant {
        match self.kind {
            SystemKind::ForcedSpring => SpringVariant::Forced { k1: self.forcing_strength, omega: self.forcing_frequency },
            SystemKind::DampedSpring => SpringVariant::Damped { gamma: self.damping },
            _ => SpringVariant::Simple,
        }
    }

    pub fn build(&self, adjacency: &Adjacency) -> Result<System, DataError> {
        Ok(if self.kind.is_spring() {
            System::Spring(SpringSpec::with_constants(
                adjacency.clone(),
                self.mass,
                self.spring_constant,
                self.spring_variant(),
            )?)
        } else {
            System::Pendulum(PendulumSpec::new(self.pendulum_mass, self.pendulum_length, self.gravity)?)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplingConfig {
    pub dt: f64,
    pub stride: usize,
    pub obs_count_min: usize,
    pub obs_count_max: usize,
    pub train_steps: usize,
    pub test_steps: usize,
    pub test_extra_obs: usize,
    /// Standard deviation of the spring initial positions and momenta.
    pub init_scale: f64,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn new(kind: SystemKind, seed: u64) -> Self {
        Self {
            dt: kind.default_dt(),
            stride: 100,
            obs_count_min: 40,
            obs_count_max: 52,
            train_steps: 6000,
            test_steps: 12000,
            test_extra_obs: 40,
            init_scale: 1.5,
            seed,
        }
    }

    pub fn train_frames(&self) -> usize {
        self.train_steps / self.stride
    }

    pub fn test_frames(&self) -> usize {
        self.test_steps / self.stride
    }

    /// Simulated time between consecutive frames.
    pub fn frame_dt(&self) -> f64 {
        self.dt * self.stride as f64
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Invalid(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if self.obs_count_min == 0 || self.obs_count_min > self.obs_count_max {
            return bad(format!("observation counts {}..{}", self.obs_count_min, self.obs_count_max));
        }
        if self.obs_count_max > self.train_frames() {
            return bad(format!("{} observations requested from {} frames", self.obs_count_max, self.train_frames()));
        }
        if self.test_steps < self.train_steps {
            return bad("test horizon shorter than train horizon".into());
        }
        if self.test_extra_obs > self.test_frames() - self.train_frames() {
            return bad(format!("{} extra test observations exceed the extension window", self.test_extra_obs));
        }
        if !(self.init_scale > 0.0) {
            return bad("init_scale must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Index into the subsampled frame grid.
    pub frame: usize,
    /// Simulated time.
    pub t: f64,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub id: usize,
    pub n_frames: usize,
    pub agents: Vec<Vec<Observation>>,
    pub adjacency: Adjacency,
}

impl TrajectoryRecord {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.agents.iter().flat_map(|a| a.first()).map(|o| o.features.len()).next().unwrap_or(0)
    }

    pub fn observation_count(&self) -> usize {
        self.agents.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub max_abs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub system: SystemConfig,
    pub sampling: SamplingConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub feature_dim: usize,
    pub stats: NormalizationStats,
    /// Trajectories re-drawn after diverging.
    pub regenerated: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub train: Vec<TrajectoryRecord>,
    pub test: Vec<TrajectoryRecord>,
}
