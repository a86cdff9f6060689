use super::{Adjacency, Derivative, PhaseState, PhysicsError};

#[derive(Clone, Debug, PartialEq)]
pub enum SpringVariant {
    Simple,
    Forced { k1: f64, omega: f64 },
    Damped { gamma: f64 },
}

impl SpringVariant {
    pub fn forced() -> Self {
        SpringVariant::Forced { k1: 10.0, omega: 1.0 }
    }

    pub fn damped() -> Self {
        SpringVariant::Damped { gamma: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpringSpec {
    pub adjacency: Adjacency,
    pub mass: f64,
    pub k: f64,
    pub variant: SpringVariant,
}

impl SpringSpec {
    pub const DIM: usize = 2;

    pub fn new(adjacency: Adjacency, variant: SpringVariant) -> Result<Self, PhysicsError> {
        Self::with_constants(adjacency, 1.0, 0.1, variant)
    }

    pub fn with_constants(
        adjacency: Adjacency,
        mass: f64,
        k: f64,
        variant: SpringVariant,
    ) -> Result<Self, PhysicsError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let ok = positive(mass)
            && positive(k)
            && match variant {
                SpringVariant::Simple => true,
                SpringVariant::Forced { k1, omega } => positive(k1) && positive(omega),
                SpringVariant::Damped { gamma } => positive(gamma),
            };
        if !ok {
            return Err(PhysicsError::InvalidParam(format!(
                "mass {}, k {}, variant {:?} must be positive",
                mass, k, variant
            )));
        }
        Ok(Self { adjacency, mass, k, variant })
    }

    pub fn n_agents(&self) -> usize {
        self.adjacency.n()
    }
}

pub fn spring_derivative(s: &PhaseState, spec: &SpringSpec) -> Result<Derivative, PhysicsError> {
    let n = spec.n_agents();
    let d = SpringSpec::DIM;
    if s.n != n || s.d != d || s.q.len() != n * d || s.p.len() != n * d {
        return Err(PhysicsError::Shape(format!(
            "state {}x{} for a {}-agent spring system in {} dims",
            s.n, s.d, n, d
        )));
    }
    if !s.is_finite() {
        return Err(PhysicsError::NonFinite { t: s.t });
    }
    let m = spec.mass;
    let dq: Vec<f64> = s.p.iter().map(|p| p / m).collect();
    let mut dp = vec![0.0; n * d];
    for i in 0..n {
        for j in spec.adjacency.neighbors(i) {
            for c in 0..d {
                dp[i * d + c] -= spec.k * (s.q[i * d + c] - s.q[j * d + c]);
            }
        }
    }
    match spec.variant {
        SpringVariant::Simple => {}
        SpringVariant::Forced { k1, omega } => {
            let f = k1 * (omega * s.t).cos();
            dp.iter_mut().for_each(|v| *v -= f);
        }
        SpringVariant::Damped { gamma } => {
            for (v, p) in dp.iter_mut().zip(&s.p) {
                *v -= gamma * p / m;
            }
        }
    }
    Ok(Derivative { dq, dp })
}
