use super::pendulum::angular_velocity;
use super::{PendulumSpec, PhaseState, PhysicsError, SpringSpec, SpringVariant, System};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    pub kinetic: f64,
    /// Conservative potential (springs or gravity).
    pub potential: f64,
    /// Forcing potential for the forced spring; dissipated work for the damped
    /// spring when evaluated along a trajectory; zero otherwise.
    pub external: f64,
    pub total: f64,
}

impl EnergyReport {
    fn new(kinetic: f64, potential: f64, external: f64) -> Self {
        Self { kinetic, potential, external, total: kinetic + potential + external }
    }

    /// Kinetic plus conservative potential.
    pub fn mechanical(&self) -> f64 {
        self.kinetic + self.potential
    }
}

pub fn spring_energy(s: &PhaseState, spec: &SpringSpec) -> Result<EnergyReport, PhysicsError> {
    let n = spec.n_agents();
    let d = SpringSpec::DIM;
    if s.n != n || s.d != d {
        return Err(PhysicsError::Shape(format!("state {}x{} for {} agents", s.n, s.d, n)));
    }
    let kinetic = s.p.iter().map(|p| p * p).sum::<f64>() / (2.0 * spec.mass);
    let mut pair = 0.0;
    for i in 0..n {
        for j in spec.adjacency.neighbors(i) {
            let r2: f64 = (0..d).map(|c| (s.q[i * d + c] - s.q[j * d + c]).powi(2)).sum();
            pair += 0.5 * spec.k * r2;
        }
    }
    let potential = 0.5 * pair;
    let external = match spec.variant {
        SpringVariant::Forced { k1, omega } => s.q.iter().sum::<f64>() * k1 * (omega * s.t).cos(),
        _ => 0.0,
    };
    Ok(EnergyReport::new(kinetic, potential, external))
}

pub fn pendulum_energy(s: &PhaseState, spec: &PendulumSpec) -> Result<EnergyReport, PhysicsError> {
    if s.n != 3 || s.d != 1 {
        return Err(PhysicsError::Shape(format!("pendulum needs a 3x1 state, got {}x{}", s.n, s.d)));
    }
    let th = [s.q[0], s.q[1], s.q[2]];
    let w = angular_velocity(th, [s.p[0], s.p[1], s.p[2]], spec)?;
    let kinetic = 0.5 * (0..3).map(|i| s.p[i] * w[i]).sum::<f64>();
    let mgl = spec.mass * spec.gravity * spec.length;
    let potential = -mgl * (2.5 * th[0].cos() + 1.5 * th[1].cos() + 0.5 * th[2].cos());
    Ok(EnergyReport::new(kinetic, potential, 0.0))
}

pub fn energy(s: &PhaseState, system: &System) -> Result<EnergyReport, PhysicsError> {
    match system {
        System::Spring(spec) => spring_energy(s, spec),
        System::Pendulum(spec) => pendulum_energy(s, spec),
    }
}

/// Energy along a stored trajectory. For the damped spring the dissipated
/// work (gamma/m) * int |p|^2/m dt is accumulated with the trapezoidal rule
/// into `external`.
pub fn trajectory_energy(states: &[PhaseState], system: &System) -> Result<Vec<EnergyReport>, PhysicsError> {
    let mut out = Vec::with_capacity(states.len());
    let mut work = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for s in states {
        let mut e = energy(s, system)?;
        if let System::Spring(SpringSpec { mass, variant: SpringVariant::Damped { gamma }, .. }) = system {
            let rate = gamma / mass * s.p.iter().map(|p| p * p).sum::<f64>() / mass;
            if let Some((t0, r0)) = prev {
                work += 0.5 * (rate + r0) * (s.t - t0);
            }
            prev = Some((s.t, rate));
            e = EnergyReport::new(e.kinetic, e.potential, work);
        }
        out.push(e);
    }
    Ok(out)
}
