use rand::Rng;
use rayon::prelude::*;

use super::{AnalysisError, Csv};
use crate::diffcore::{ParamSet, Tape, Tensor, Var};
use crate::model::{integrate, ModelError};
use crate::seed::{rng_for, STREAM_SCENARIO};
use crate::training::AdamW;

type P2 = [f64; 2];

fn dist(a: P2, b: P2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn refl(x: P2) -> P2 {
    [x[0], -x[1]]
}

/// Errors of both reversal implementations on a two-frame construction with
/// forward error `a` and reversal gap `b` placed on one line.
/// Returns `(max_error_1, max_error_2)`.
pub fn worst_case_errors(a: f64, b: f64) -> (f64, f64) {
    let y = [[0.0, 1.0], [0.0, 0.0]];
    let fwd = [y[0], [a, 0.0]];
    // Terminal-anchored: starts at fwd[1], lands b away from fwd[0].
    let rev1 = [fwd[1], [b, 1.0]];
    // Initial-anchored: starts at y[0], lands b beyond fwd[1].
    let rev2 = [y[0], [a + b, 0.0]];
    let max1 = (0..2).map(|j| dist(y[j], rev1[1 - j])).fold(0.0, f64::max);
    let max2 = (0..2).map(|j| dist(y[j], rev2[j])).fold(0.0, f64::max);
    (max1, max2)
}

/// Micro scenario: a pendulum `q' = p, p' = -sin q` fitted by a small tanh
/// MLP field on one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroConfig {
    pub scenarios: usize,
    pub seed: u64,
    /// Frames after the initial one.
    pub frames: usize,
    pub frame_dt: f64,
    pub hidden: usize,
    pub iters: usize,
    pub lr: f64,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self { scenarios: 100, seed: 0, frames: 10, frame_dt: 0.1, hidden: 16, iters: 200, lr: 1e-2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonCase {
    /// Prediction loss, summed squared error over frames.
    pub a: f64,
    /// Reversal loss of the terminal-anchored implementation.
    pub b1: f64,
    /// Reversal loss of the initial-anchored implementation.
    pub b2: f64,
    pub max1: f64,
    pub max2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonResult {
    pub cases: Vec<ComparisonCase>,
    /// Share of cases with `max1 <= max2`.
    pub fraction_le: f64,
}

impl ComparisonResult {
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(&["case", "a", "b1", "b2", "max1", "max2"]);
        for (i, c) in self.cases.iter().enumerate() {
            csv.push(vec![i.to_string(), super::f(c.a), super::f(c.b1), super::f(c.b2), super::f(c.max1), super::f(c.max2)]);
        }
        csv
    }
}

fn pendulum(x: P2) -> P2 {
    [x[1], -x[0].sin()]
}

fn rk4(f: &impl Fn(P2) -> P2, x: P2, h: f64) -> P2 {
    let ax = |x: P2, k: P2, s: f64| [x[0] + s * k[0], x[1] + s * k[1]];
    let k1 = f(x);
    let k2 = f(ax(x, k1, h / 2.0));
    let k3 = f(ax(x, k2, h / 2.0));
    let k4 = f(ax(x, k3, h));
    [x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]), x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])]
}

fn rollout(f: &impl Fn(P2) -> P2, x0: P2, h: f64, frames: usize, substeps: usize) -> Vec<P2> {
    let mut out = vec![x0];
    let mut x = x0;
    for _ in 0..frames {
        for _ in 0..substeps {
            x = rk4(f, x, h / substeps as f64);
        }
        out.push(x);
    }
    out
}

struct Mlp {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    hidden: usize,
}

impl Mlp {
    fn from_params(p: &ParamSet, hidden: usize) -> Self {
        let t = p.tensors();
        Self { w1: t[0].data().to_vec(), b1: t[1].data().to_vec(), w2: t[2].data().to_vec(), b2: t[3].data().to_vec(), hidden }
    }

    fn eval(&self, x: P2, sign: f64) -> P2 {
        let mut out = [self.b2[0], self.b2[1]];
        for j in 0..self.hidden {
            let h = (x[0] * self.w1[j] + x[1] * self.w1[self.hidden + j] + self.b1[j]).tanh();
            out[0] += h * self.w2[2 * j];
            out[1] += h * self.w2[2 * j + 1];
        }
        [sign * out[0], sign * out[1]]
    }
}

fn init_params(cfg: &MicroConfig, rng: &mut impl Rng) -> Result<ParamSet, AnalysisError> {
    let h = cfg.hidden;
    let mut u = |n: usize, s: f64| (0..n).map(|_| rng.gen_range(-s..s)).collect::<Vec<f64>>();
    let mut p = ParamSet::new();
    let s1 = 1.0 / 2f64.sqrt();
    let s2 = 1.0 / (h as f64).sqrt();
    let err = |e: crate::diffcore::DiffError| AnalysisError::Model(ModelError::Diff(e));
    p.push("w1", Tensor::matrix(2, h, u(2 * h, s1)).map_err(err)?);
    p.push("b1", Tensor::matrix(1, h, u(h, s1)).map_err(err)?);
    p.push("w2", Tensor::matrix(h, 2, u(2 * h, s2)).map_err(err)?);
    p.push("b2", Tensor::matrix(1, 2, vec![0.0; 2]).map_err(err)?);
    Ok(p)
}

fn pred_loss_grads(p: &ParamSet, y: &[P2], cfg: &MicroConfig) -> Result<Vec<Tensor>, AnalysisError> {
    let mut tape = Tape::new();
    let v = p.bind(&mut tape);
    let z0 = tape.constant(Tensor::matrix(1, 2, y[0].to_vec()).map_err(ModelError::Diff)?);
    let field = |tape: &mut Tape, z: Var| -> Result<Var, ModelError> {
        let h = tape.affine(z, v[0], v[1])?;
        let h = tape.tanh(h)?;
        Ok(tape.affine(h, v[2], v[3])?)
    };
    let zs = integrate(&mut tape, z0, y.len(), 1, cfg.frame_dt, field)?;
    let stacked = tape.concat(&zs, 0).map_err(ModelError::Diff)?;
    let truth: Vec<f64> = y.iter().flatten().copied().collect();
    let truth = tape.constant(Tensor::matrix(y.len(), 2, truth).map_err(ModelError::Diff)?);
    let d = tape.sub(stacked, truth).map_err(ModelError::Diff)?;
    let loss = tape.sq_sum(d).map_err(ModelError::Diff)?;
    let g = tape.backward(loss).map_err(ModelError::Diff)?;
    Ok(p.collect_grads(&g, &v))
}

fn run_scenario(cfg: &MicroConfig, index: usize) -> Result<ComparisonCase, AnalysisError> {
    let mut rng = rng_for(cfg.seed, STREAM_SCENARIO, index as u64);
    let y0 = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.0..1.0)];
    let y = rollout(&pendulum, y0, cfg.frame_dt, cfg.frames, 100);
    let mut params = init_params(cfg, &mut rng)?;
    let mut opt = AdamW::new(params.tensors(), cfg.lr, 0.0);
    for _ in 0..cfg.iters {
        let g = pred_loss_grads(&params, &y, cfg)?;
        if !g.iter().all(Tensor::all_finite) {
            break;
        }
        opt.update(params.tensors_mut(), &g)?;
    }
    let mlp = Mlp::from_params(&params, cfg.hidden);
    let fwd_f = |x: P2| mlp.eval(x, 1.0);
    let rev_f = |x: P2| mlp.eval(x, -1.0);
    let t = cfg.frames;
    let fwd = rollout(&fwd_f, y0, cfg.frame_dt, t, 1);
    // Negated field from the predicted terminal state.
    let rev1 = rollout(&rev_f, fwd[t], cfg.frame_dt, t, 1);
    // Reflected initial state, negated field, reflected back.
    let rev2: Vec<P2> = rollout(&rev_f, refl(y0), cfg.frame_dt, t, 1).into_iter().map(refl).collect();
    let sq = |a: P2, b: P2| dist(a, b).powi(2);
    let mut c = ComparisonCase { a: 0.0, b1: 0.0, b2: 0.0, max1: 0.0, max2: 0.0 };
    for j in 0..=t {
        c.a += sq(fwd[j], y[j]);
        c.b1 += sq(fwd[j], rev1[t - j]);
        c.b2 += sq(fwd[j], rev2[j]);
        c.max1 = c.max1.max(dist(y[j], rev1[t - j]));
        c.max2 = c.max2.max(dist(y[j], rev2[j]));
    }
    if ![c.a, c.b1, c.b2, c.max1, c.max2].iter().all(|v| v.is_finite()) {
        return Err(AnalysisError::Model(ModelError::Diverged { step: index }));
    }
    Ok(c)
}

/// Trains one micro model per scenario and scores both reversal
/// implementations against the true trajectory.
pub fn maxerror_comparison(cfg: &MicroConfig) -> Result<ComparisonResult, AnalysisError> {
    if cfg.scenarios == 0 || cfg.frames == 0 || cfg.hidden == 0 {
        return Err(AnalysisError::Invalid("scenarios, frames and hidden width must be positive".into()));
    }
    let cases = (0..cfg.scenarios)
        .into_par_iter()
        .map(|i| run_scenario(cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    let le = cases.iter().filter(|c| c.max1 <= c.max2).count();
    Ok(ComparisonResult { fraction_le: le as f64 / cases.len() as f64, cases })
}
