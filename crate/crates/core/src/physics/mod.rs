//! Ground-truth simulators, energy evaluators and the reversing operator.

mod energy;
mod integrate;
mod pendulum;
mod spring;

pub use energy::{energy, pendulum_energy, spring_energy, trajectory_energy, EnergyReport};
pub use integrate::{euler_integrate, reversibility_residual, rk4_integrate, Divergence, Integrator, Trajectory};
pub use pendulum::{pendulum_derivative, pendulum_mass_matrix, PendulumSpec, PENDULUM_SINGULARITY_EPS};
pub use spring::{spring_derivative, SpringSpec, SpringVariant};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhysicsError {
    #[error("state shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("pendulum singularity (denominator {denominator:e}) at theta = {theta:?}")]
    Singular { denominator: f64, theta: [f64; 3] },
    #[error("integration diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },
    #[error("invalid adjacency: {0}")]
    Adjacency(String),
}

/// Symmetric interaction graph without self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    cells: Vec<bool>,
}

impl Adjacency {
    pub fn new(n: usize, cells: Vec<bool>) -> Result<Self, PhysicsError> {
        if cells.len() != n * n {
            return Err(PhysicsError::Adjacency(format!("{} cells for {} agents", cells.len(), n)));
        }
        for i in 0..n {
            if cells[i * n + i] {
                return Err(PhysicsError::Adjacency(format!("self-loop at {}", i)));
            }
            for j in 0..n {
                if cells[i * n + j] != cells[j * n + i] {
                    return Err(PhysicsError::Adjacency(format!("asymmetric at ({}, {})", i, j)));
                }
            }
        }
        Ok(Self { n, cells })
    }

    pub fn empty(n: usize) -> Self {
        Self { n, cells: vec![false; n * n] }
    }

    pub fn complete(n: usize) -> Self {
        let cells = (0..n * n).map(|k| k / n != k % n).collect();
        Self { n, cells }
    }

    /// Path 0 - 1 - ... - (n-1).
    pub fn chain(n: usize) -> Self {
        let mut a = Self::empty(n);
        for i in 1..n {
            a.set(i - 1, i, true);
        }
        a
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self, PhysicsError> {
        let mut a = Self::empty(n);
        for &(i, j) in pairs {
            if i >= n || j >= n || i == j {
                return Err(PhysicsError::Adjacency(format!("bad pair ({}, {})", i, j)));
            }
            a.set(i, j, true);
        }
        Ok(a)
    }

    fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i * self.n + j] = v;
        self.cells[j * self.n + i] = v;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn connected(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn edge_count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count() / 2
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.connected(i, j))
    }

    /// Directed edges (src, dst) for every connected ordered pair, sorted.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::new();
        for i in 0..self.n {
            for j in self.neighbors(i) {
                e.push((i, j));
            }
        }
        e
    }

    /// Relabel agents: agent `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut a = Self::empty(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if self.connected(i, j) {
                    a.cells[perm[i] * self.n + perm[j]] = true;
                }
            }
        }
        a
    }
}

/// Positions and momenta (or angles and angular momenta) of all agents.
/// `q` and `p` are row-major `n x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub n: usize,
    pub d: usize,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

impl PhaseState {
    pub fn new(n: usize, d: usize, q: Vec<f64>, p: Vec<f64>, t: f64) -> Result<Self, PhysicsError> {
        if q.len() != n * d || p.len() != n * d {
            return Err(PhysicsError::Shape(format!(
                "q has {}, p has {} entries for {}x{}",
                q.len(),
                p.len(),
                n,
                d
            )));
        }
        Ok(Self { n, d, q, p, t })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self { n, d, q: vec![0.0; n * d], p: vec![0.0; n * d], t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(&self.p).all(|v| v.is_finite())
    }

    /// Euclidean distance between the (q, p) parts.
    pub fn distance(&self, other: &PhaseState) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .chain(self.p.iter().zip(&other.p))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.q.iter().chain(&self.p).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Agent `i`'s features `(q_i, p_i)` concatenated.
    pub fn agent_features(&self, i: usize) -> Vec<f64> {
        let mut f = self.q[i * self.d..(i + 1) * self.d].to_vec();
        f.extend_from_slice(&self.p[i * self.d..(i + 1) * self.d]);
        f
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Derivative {
    pub dq: Vec<f64>,
    pub dp: Vec<f64>,
}

/// Autonomous or explicitly time-dependent phase-space vector field.
pub trait Dynamics: Sync {
    fn derivative(&self, s: &PhaseState) -> Result<Derivative, PhysicsError>;
}

/// Wraps a closure as [`Dynamics`].
pub struct FnDynamics<F>(pub F);

impl<F> Dynamics for FnDynamics<F>
where
    F: Fn(&PhaseState) -> Result<Derivative, PhysicsError> + Sync,
{
    fn derivative(&self, s: &PhaseState) -> Result<Derivative, PhysicsError> {
        (self.0)(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum System {
    Spring(SpringSpec),
    Pendulum(PendulumSpec),
}

impl Dynamics for System {
    fn derivative(&self, s: &PhaseState) -> Result<Derivative, PhysicsError> {
        match self {
            System::Spring(spec) => spring_derivative(s, spec),
            System::Pendulum(spec) => pendulum_derivative(s, spec),
        }
    }
}

impl Dynamics for SpringSpec {
    fn derivative(&self, s: &PhaseState) -> Result<Derivative, PhysicsError> {
        spring_derivative(s, self)
    }
}

impl Dynamics for PendulumSpec {
    fn derivative(&self, s: &PhaseState) -> Result<Derivative, PhysicsError> {
        pendulum_derivative(s, self)
    }
}

/// R: (q, p, t) -> (q, -p, -t). Negating t lets explicitly time-dependent
/// forces that are even in t be integrated forward from the reflected time.
pub fn reverse_state(s: &PhaseState) -> PhaseState {
    PhaseState { n: s.n, d: s.d, q: s.q.clone(), p: s.p.iter().map(|v| -v).collect(), t: -s.t }
}
