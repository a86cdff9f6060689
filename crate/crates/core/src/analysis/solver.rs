use super::{fit_loglog, AnalysisError, Csv};
use crate::physics::{Derivative, FnDynamics, Integrator, PhaseState, PhysicsError};

/// Linear systems with closed-form solutions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalyticSystem {
    /// `q' = lambda q`, `p' = lambda p` for one scalar agent.
    Exponential { lambda: f64 },
    /// Two unit-dimension masses joined by one spring.
    SpringPair { k: f64, mass: f64 },
}

impl AnalyticSystem {
    pub fn name(&self) -> &'static str {
        match self {
            AnalyticSystem::Exponential { .. } => "exponential",
            AnalyticSystem::SpringPair { .. } => "spring-pair",
        }
    }

    pub fn initial(&self) -> PhaseState {
        match self {
            AnalyticSystem::Exponential { .. } => PhaseState { n: 1, d: 1, q: vec![1.0], p: vec![0.5], t: 0.0 },
            AnalyticSystem::SpringPair { .. } => PhaseState { n: 2, d: 1, q: vec![0.5, -0.3], p: vec![0.2, 0.4], t: 0.0 },
        }
    }

    /// Field scaled by `sign`; `-1` gives the reversal field.
    pub fn derivative(&self, s: &PhaseState, sign: f64) -> Result<Derivative, PhysicsError> {
        match *self {
            AnalyticSystem::Exponential { lambda } => Ok(Derivative {
                dq: s.q.iter().map(|q| sign * lambda * q).collect(),
                dp: s.p.iter().map(|p| sign * lambda * p).collect(),
            }),
            AnalyticSystem::SpringPair { k, mass } => {
                if s.n != 2 || s.d != 1 {
                    return Err(PhysicsError::Shape(format!("spring pair needs 2x1, got {}x{}", s.n, s.d)));
                }
                let f = k * (s.q[0] - s.q[1]);
                Ok(Derivative { dq: s.p.iter().map(|p| sign * p / mass).collect(), dp: vec![-sign * f, sign * f] })
            }
        }
    }

    pub fn exact(&self, s0: &PhaseState, t: f64) -> PhaseState {
        match *self {
            AnalyticSystem::Exponential { lambda } => {
                let g = (lambda * t).exp();
                PhaseState { n: 1, d: 1, q: s0.q.iter().map(|q| q * g).collect(), p: s0.p.iter().map(|p| p * g).collect(), t: s0.t + t }
            }
            AnalyticSystem::SpringPair { k, mass } => {
                let w = (2.0 * k / mass).sqrt();
                let c = 0.5 * (s0.q[0] + s0.q[1]);
                let vc = 0.5 * (s0.p[0] + s0.p[1]) / mass;
                let r0 = s0.q[0] - s0.q[1];
                let vr0 = (s0.p[0] - s0.p[1]) / mass;
                let (sn, cs) = (w * t).sin_cos();
                let r = r0 * cs + vr0 / w * sn;
                let vr = -r0 * w * sn + vr0 * cs;
                let cm = c + vc * t;
                PhaseState {
                    n: 2,
                    d: 1,
                    q: vec![cm + 0.5 * r, cm - 0.5 * r],
                    p: vec![mass * (vc + 0.5 * vr), mass * (vc - 0.5 * vr)],
                    t: s0.t + t,
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingSpec {
    pub system: AnalyticSystem,
    pub integrator: Integrator,
    /// Horizon of the step-size axis.
    pub horizon: f64,
    /// Output frames over the horizon; errors are summed on these.
    pub frames: usize,
    /// Solver steps per output frame, one grid point each.
    pub steps_per_frame: Vec<usize>,
    /// Horizons of the horizon axis, multiples of the frame spacing.
    pub horizons: Vec<f64>,
    /// Solver steps per frame on the horizon axis.
    pub horizon_steps_per_frame: usize,
}

impl ScalingSpec {
    pub fn new(system: AnalyticSystem, integrator: Integrator) -> Self {
        Self {
            system,
            integrator,
            horizon: 2.0,
            frames: 10,
            steps_per_frame: vec![1, 2, 4, 8, 16],
            horizons: vec![1.0, 2.0, 4.0, 8.0],
            horizon_steps_per_frame: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingPoint {
    pub dt: f64,
    pub horizon: f64,
    /// Summed squared deviation from the exact solution on output frames.
    pub forward: f64,
    /// Summed squared gap between the forward run and a negated-field run
    /// from its end state, frame `k` against frame `frames - k`.
    pub closure: f64,
    /// Summed squared deviation of that reverse run from the exact solution.
    pub reverse_truth: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingResult {
    pub system: AnalyticSystem,
    pub integrator: Integrator,
    pub dt_points: Vec<ScalingPoint>,
    pub horizon_points: Vec<ScalingPoint>,
    /// `(slope, residual)`; `None` for a degenerate fit.
    pub forward_slope: Option<(f64, f64)>,
    pub closure_slope: Option<(f64, f64)>,
    pub reverse_truth_slope: Option<(f64, f64)>,
    pub horizon_forward_slope: Option<(f64, f64)>,
    pub horizon_closure_slope: Option<(f64, f64)>,
    /// Both errors strictly shrink as the step shrinks.
    pub monotone_in_dt: bool,
    /// Closure gap non-decreasing along the horizon axis.
    pub monotone_in_horizon: bool,
}

impl ScalingResult {
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(&["axis", "system", "integrator", "dt", "horizon", "forward", "closure", "reverse_truth"]);
        let integ = format!("{:?}", self.integrator).to_lowercase();
        for (axis, pts) in [("dt", &self.dt_points), ("horizon", &self.horizon_points)] {
            for p in pts {
                csv.push(vec![
                    axis.into(),
                    self.system.name().into(),
                    integ.clone(),
                    super::f(p.dt),
                    super::f(p.horizon),
                    super::f(p.forward),
                    super::f(p.closure),
                    super::f(p.reverse_truth),
                ]);
            }
        }
        csv
    }
}

fn sq_dist(a: &PhaseState, b: &PhaseState) -> f64 {
    let d = a.distance(b);
    d * d
}

fn measure(spec: &ScalingSpec, horizon: f64, frames: usize, spf: usize) -> Result<ScalingPoint, AnalysisError> {
    let sys = spec.system;
    let fwd_f = FnDynamics(move |s: &PhaseState| sys.derivative(s, 1.0));
    let rev_f = FnDynamics(move |s: &PhaseState| sys.derivative(s, -1.0));
    let n = frames * spf;
    let dt = horizon / n as f64;
    let s0 = sys.initial();
    let fwd = spec.integrator.integrate(&fwd_f, &s0, dt, n)?;
    if fwd.diverged() {
        return Err(AnalysisError::Invalid(format!("forward run diverged at dt {}", dt)));
    }
    let rev = spec.integrator.integrate(&rev_f, fwd.last(), dt, n)?;
    if rev.diverged() {
        return Err(AnalysisError::Invalid(format!("reverse run diverged at dt {}", dt)));
    }
    let frame_dt = horizon / frames as f64;
    let mut forward = 0.0;
    let mut closure = 0.0;
    let mut reverse_truth = 0.0;
    for k in 0..=frames {
        let exact = sys.exact(&s0, k as f64 * frame_dt);
        let back = &rev.states[(frames - k) * spf];
        forward += sq_dist(&fwd.states[k * spf], &exact);
        closure += sq_dist(&fwd.states[k * spf], back);
        reverse_truth += sq_dist(back, &exact);
    }
    Ok(ScalingPoint { dt, horizon, forward, closure, reverse_truth })
}

/// Global-error and closure-gap scaling against the step size, then against
/// the horizon at a fixed step.
pub fn solver_order_experiment(spec: &ScalingSpec) -> Result<ScalingResult, AnalysisError> {
    if spec.frames == 0 || !(spec.horizon > 0.0) || spec.steps_per_frame.iter().any(|&s| s == 0) {
        return Err(AnalysisError::Invalid("horizon, frames and steps per frame must be positive".into()));
    }
    let dt_points = spec
        .steps_per_frame
        .iter()
        .map(|&s| measure(spec, spec.horizon, spec.frames, s))
        .collect::<Result<Vec<_>, _>>()?;
    let frame_dt = spec.horizon / spec.frames as f64;
    let mut horizon_points = Vec::with_capacity(spec.horizons.len());
    for &t in &spec.horizons {
        let m = t / frame_dt;
        let frames = m.round();
        if frames < 1.0 || (m - frames).abs() > 1e-9 * frames {
            return Err(AnalysisError::Invalid(format!("horizon {} is not a multiple of the frame spacing {}", t, frame_dt)));
        }
        horizon_points.push(measure(spec, t, frames as usize, spec.horizon_steps_per_frame.max(1))?);
    }
    let dts: Vec<f64> = dt_points.iter().map(|p| p.dt).collect();
    let fwd: Vec<f64> = dt_points.iter().map(|p| p.forward).collect();
    let clo: Vec<f64> = dt_points.iter().map(|p| p.closure).collect();
    let rtr: Vec<f64> = dt_points.iter().map(|p| p.reverse_truth).collect();
    let ts: Vec<f64> = horizon_points.iter().map(|p| p.horizon).collect();
    let tf: Vec<f64> = horizon_points.iter().map(|p| p.forward).collect();
    let tc: Vec<f64> = horizon_points.iter().map(|p| p.closure).collect();
    let mut by_dt: Vec<&ScalingPoint> = dt_points.iter().collect();
    by_dt.sort_by(|a, b| b.dt.total_cmp(&a.dt));
    let monotone_in_dt = by_dt.windows(2).all(|w| w[1].forward < w[0].forward && w[1].closure < w[0].closure);
    let monotone_in_horizon = tc.windows(2).all(|w| w[1] >= w[0]);
    Ok(ScalingResult {
        system: spec.system,
        integrator: spec.integrator,
        forward_slope: fit_loglog(&dts, &fwd),
        closure_slope: fit_loglog(&dts, &clo),
        reverse_truth_slope: fit_loglog(&dts, &rtr),
        horizon_forward_slope: fit_loglog(&ts, &tf),
        horizon_closure_slope: fit_loglog(&ts, &tc),
        dt_points,
        horizon_points,
        monotone_in_dt,
        monotone_in_horizon,
    })
}
