use super::{reverse_state, Derivative, Dynamics, PhaseState, PhysicsError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk4,
}

impl Integrator {
    pub fn integrate<D: Dynamics + ?Sized>(
        self,
        f: &D,
        state0: &PhaseState,
        dt: f64,
        n_steps: usize,
    ) -> Result<Trajectory, PhysicsError> {
        match self {
            Integrator::Euler => euler_integrate(f, state0, dt, n_steps),
            Integrator::Rk4 => rk4_integrate(f, state0, dt, n_steps),
        }
    }

    pub fn order(self) -> usize {
        match self {
            Integrator::Euler => 1,
            Integrator::Rk4 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

/// States including the initial one. A divergent run is truncated at the
/// last finite state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<PhaseState>,
    pub divergence: Option<Divergence>,
}

impl Trajectory {
    pub fn last(&self) -> &PhaseState {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

fn check_args(dt: f64, n_steps: usize) -> Result<(), PhysicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(PhysicsError::InvalidParam(format!("dt must be positive, got {}", dt)));
    }
    if n_steps == 0 {
        return Err(PhysicsError::InvalidParam("n_steps must be at least 1".into()));
    }
    Ok(())
}

fn shifted(s: &PhaseState, k: &Derivative, h: f64) -> PhaseState {
    PhaseState {
        n: s.n,
        d: s.d,
        q: s.q.iter().zip(&k.dq).map(|(a, b)| a + h * b).collect(),
        p: s.p.iter().zip(&k.dp).map(|(a, b)| a + h * b).collect(),
        t: s.t + h,
    }
}

fn run<D: Dynamics + ?Sized>(
    f: &D,
    state0: &PhaseState,
    n_steps: usize,
    step: impl Fn(&D, &PhaseState) -> Result<PhaseState, PhysicsError>,
) -> Trajectory {
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(state0.clone());
    for i in 0..n_steps {
        let cur = states.last().unwrap();
        match step(f, cur) {
            Ok(next) if next.is_finite() => states.push(next),
            Ok(_) => {
                return Trajectory {
                    states,
                    divergence: Some(Divergence { step: i + 1, reason: "non-finite state".into() }),
                }
            }
            Err(e) => {
                return Trajectory { states, divergence: Some(Divergence { step: i + 1, reason: e.to_string() }) }
            }
        }
    }
    Trajectory { states, divergence: None }
}

/// Explicit Euler: x <- x + f(x) dt.
pub fn euler_integrate<D: Dynamics + ?Sized>(
    f: &D,
    state0: &PhaseState,
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory, PhysicsError> {
    check_args(dt, n_steps)?;
    Ok(run(f, state0, n_steps, |f, s| {
        let k = f.derivative(s)?;
        Ok(shifted(s, &k, dt))
    }))
}

/// Classical fourth-order Runge-Kutta.
pub fn rk4_integrate<D: Dynamics + ?Sized>(
    f: &D,
    state0: &PhaseState,
    dt: f64,
    n_steps: usize,
) -> Result<Trajectory, PhysicsError> {
    check_args(dt, n_steps)?;
    Ok(run(f, state0, n_steps, |f, s| {
        let k1 = f.derivative(s)?;
        let k2 = f.derivative(&shifted(s, &k1, dt / 2.0))?;
        let k3 = f.derivative(&shifted(s, &k2, dt / 2.0))?;
        let k4 = f.derivative(&shifted(s, &k3, dt))?;
        let comb = |a: &[f64], b: &[f64], c: &[f64], d: &[f64], x: &[f64]| -> Vec<f64> {
            (0..x.len()).map(|i| x[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i])).collect()
        };
        Ok(PhaseState {
            n: s.n,
            d: s.d,
            q: comb(&k1.dq, &k2.dq, &k3.dq, &k4.dq, &s.q),
            p: comb(&k1.dp, &k2.dp, &k3.dp, &k4.dp, &s.p),
            t: s.t + dt,
        })
    }))
}

/// || R(phi(R(phi(s0)))) - s0 || over (q, p).
pub fn reversibility_residual<D: Dynamics + ?Sized>(
    f: &D,
    state0: &PhaseState,
    dt: f64,
    n_steps: usize,
    integrator: Integrator,
) -> Result<f64, PhysicsError> {
    let fwd = integrator.integrate(f, state0, dt, n_steps)?;
    if let Some(d) = fwd.divergence {
        return Err(PhysicsError::Diverged { step: d.step, reason: d.reason });
    }
    let back = integrator.integrate(f, &reverse_state(fwd.last()), dt, n_steps)?;
    if let Some(d) = back.divergence {
        return Err(PhysicsError::Diverged { step: n_steps + d.step, reason: d.reason });
    }
    Ok(reverse_state(back.last()).distance(state0))
}
