use super::{Derivative, PhaseState, PhysicsError};

pub const PENDULUM_SINGULARITY_EPS: f64 = 1e-12;

/// Three identical uniform sticks hinged in a chain, angles from the downward vertical.
#[derive(Clone, Debug, PartialEq)]
pub struct PendulumSpec {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
}

impl Default for PendulumSpec {
    fn default() -> Self {
        Self { mass: 1.0, length: 1.0, gravity: 9.81 }
    }
}

impl PendulumSpec {
    pub fn new(mass: f64, length: f64, gravity: f64) -> Result<Self, PhysicsError> {
        if [mass, length, gravity].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(PhysicsError::InvalidParam(format!(
                "pendulum m {}, l {}, g {} must be positive",
                mass, length, gravity
            )));
        }
        Ok(Self { mass, length, gravity })
    }

    pub fn moment_of_inertia(&self) -> f64 {
        self.mass * self.length * self.length / 12.0
    }
}

/// Generalized mass matrix M(theta) with p = M theta_dot.
pub fn pendulum_mass_matrix(theta: [f64; 3], spec: &PendulumSpec) -> [[f64; 3]; 3] {
    let s = spec.mass * spec.length * spec.length / 6.0;
    let c12 = (theta[0] - theta[1]).cos();
    let c13 = (theta[0] - theta[2]).cos();
    let c23 = (theta[1] - theta[2]).cos();
    [
        [14.0 * s, 9.0 * s * c12, 3.0 * s * c13],
        [9.0 * s * c12, 8.0 * s, 3.0 * s * c23],
        [3.0 * s * c13, 3.0 * s * c23, 2.0 * s],
    ]
}

pub(crate) fn angular_velocity(
    th: [f64; 3],
    p: [f64; 3],
    spec: &PendulumSpec,
) -> Result<[f64; 3], PhysicsError> {
    let (t1, t2, t3) = (th[0], th[1], th[2]);
    let (p1, p2, p3) = (p[0], p[1], p[2]);
    let ml2 = spec.mass * spec.length * spec.length;
    let den = ml2
        * (81.0 * (2.0 * (t1 - t2)).cos() - 9.0 * (2.0 * (t1 - t3)).cos() + 45.0 * (2.0 * (t2 - t3)).cos()
            - 169.0);
    if !(den.abs() >= PENDULUM_SINGULARITY_EPS) {
        return Err(PhysicsError::Singular { denominator: den, theta: th });
    }
    let w1 = 6.0
        * (9.0 * p1 * (2.0 * (t2 - t3)).cos() + 27.0 * p2 * (t1 - t2).cos()
            - 9.0 * p2 * (t1 + t2 - 2.0 * t3).cos()
            + 21.0 * p3 * (t1 - t3).cos()
            - 27.0 * p3 * (t1 - 2.0 * t2 + t3).cos()
            - 23.0 * p1)
        / den;
    let w2 = 6.0
        * (27.0 * p1 * (t1 - t2).cos() - 9.0 * p1 * (t1 + t2 - 2.0 * t3).cos()
            + 9.0 * p2 * (2.0 * (t1 - t3)).cos()
            - 27.0 * p3 * (2.0 * t1 - t2 - t3).cos()
            + 57.0 * p3 * (t2 - t3).cos()
            - 47.0 * p2)
        / den;
    let w3 = 6.0
        * (21.0 * p1 * (t1 - t3).cos() - 27.0 * p1 * (t1 - 2.0 * t2 + t3).cos()
            - 27.0 * p2 * (2.0 * t1 - t2 - t3).cos()
            + 57.0 * p2 * (t2 - t3).cos()
            + 81.0 * p3 * (2.0 * (t1 - t2)).cos()
            - 143.0 * p3)
        / den;
    Ok([w1, w2, w3])
}

/// State has `n = 3`, `d = 1`: `q` holds the angles, `p` the conjugate momenta.
pub fn pendulum_derivative(s: &PhaseState, spec: &PendulumSpec) -> Result<Derivative, PhysicsError> {
    if s.n != 3 || s.d != 1 || s.q.len() != 3 || s.p.len() != 3 {
        return Err(PhysicsError::Shape(format!("pendulum needs a 3x1 state, got {}x{}", s.n, s.d)));
    }
    if !s.is_finite() {
        return Err(PhysicsError::NonFinite { t: s.t });
    }
    let th = [s.q[0], s.q[1], s.q[2]];
    let w = angular_velocity(th, [s.p[0], s.p[1], s.p[2]], spec)?;
    let (m, l, g) = (spec.mass, spec.length, spec.gravity);
    let s12 = (th[0] - th[1]).sin();
    let s13 = (th[0] - th[2]).sin();
    let s23 = (th[1] - th[2]).sin();
    let h = 0.5 * m * l;
    let dp1 = -h * (3.0 * w[1] * w[0] * l * s12 + w[0] * w[2] * l * s13 + 5.0 * g * th[0].sin());
    let dp2 = -h * (-3.0 * w[0] * w[1] * l * s12 + w[1] * w[2] * l * s23 + 3.0 * g * th[1].sin());
    let dp3 = -h * (-w[0] * w[2] * l * s13 - w[1] * w[2] * l * s23 + g * th[2].sin());
    Ok(Derivative { dq: w.to_vec(), dp: vec![dp1, dp2, dp3] })
}
