//! Temporal-graph encoder, GNN ODE function with latent RK4, and decoder.

mod checkpoint;
mod encoder;
mod ode;

use rand::Rng;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use encoder::{temporal_encoding, GraphEdge, GraphNode, TemporalGraph};
pub use ode::{integrate, EdgeIndex};

use crate::diffcore::{DiffError, ParamSet, Tape, Tensor, Var};
use crate::seed::{rng_for, STREAM_PARAM_INIT};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("agent {0} has no observations to encode")]
    EmptyAgent(usize),
    #[error("temporal encoding needs an even dimension, got {0}")]
    OddDimension(usize),
    #[error("latent state became non-finite at solver step {step}")]
    Diverged { step: usize },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub obs_dim: usize,
    /// Encoder node dimension d.
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    /// Width of the projection from pooled sequence to latent.
    pub pool_hidden: usize,
    /// Latent coordinates produced by the encoder.
    pub encoder_out: usize,
    /// Zero-initialized latent coordinates appended to the encoder output.
    pub augment_dim: usize,
    pub ode_hidden: usize,
    pub decoder_layers: usize,
    /// Normalized latent time between consecutive frames.
    pub frame_step: f64,
    /// RK4 steps per frame.
    pub substeps: usize,
}

impl ModelConfig {
    /// d = 64, two attention layers, 16 + 64 latent, ODE hidden 128.
    pub fn full(obs_dim: usize) -> Self {
        Self {
            obs_dim,
            hidden_dim: 64,
            encoder_layers: 2,
            pool_hidden: 128,
            encoder_out: 16,
            augment_dim: 64,
            ode_hidden: 128,
            decoder_layers: 1,
            frame_step: 1.0 / 60.0,
            substeps: 1,
        }
    }

    /// Reduced widths for single-core smoke runs.
    pub fn smoke(obs_dim: usize) -> Self {
        Self { hidden_dim: 16, pool_hidden: 32, encoder_out: 8, augment_dim: 8, ode_hidden: 32, ..Self::full(obs_dim) }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder_out + self.augment_dim
    }

    pub fn solver_step(&self) -> f64 {
        self.frame_step / self.substeps as f64
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.hidden_dim == 0 || self.hidden_dim % 2 != 0 {
            return Err(ModelError::OddDimension(self.hidden_dim));
        }
        if self.obs_dim == 0 || self.encoder_out == 0 || self.ode_hidden == 0 || self.pool_hidden == 0 {
            return bad("widths must be positive");
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return bad("layer counts must be positive");
        }
        if !(self.frame_step > 0.0 && self.frame_step.is_finite()) || self.substeps == 0 {
            return bad("solver step must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    enc_in: (usize, usize),
    attn: Vec<[usize; 3]>,
    pool_wa: usize,
    pool1: (usize, usize),
    pool2: (usize, usize),
    edge1: (usize, usize),
    edge2: (usize, usize),
    node1: (usize, usize),
    node2: (usize, usize),
    dec: Vec<(usize, usize)>,
}

enum Init {
    Uniform(usize),
    Zero,
}

struct Builder<F> {
    ps: ParamSet,
    fill: F,
}

impl<F: FnMut(&[usize], Init) -> Tensor> Builder<F> {
    fn weight(&mut self, name: String, fan_in: usize, out: usize, zero: bool) -> usize {
        let init = if zero { Init::Zero } else { Init::Uniform(fan_in) };
        let t = (self.fill)(&[fan_in, out], init);
        self.ps.push(name, t)
    }

    fn linear(&mut self, name: &str, fan_in: usize, out: usize, zero: bool) -> (usize, usize) {
        let w = self.weight(format!("{}.w", name), fan_in, out, zero);
        let init = if zero { Init::Zero } else { Init::Uniform(fan_in) };
        let t = (self.fill)(&[1, out], init);
        (w, self.ps.push(format!("{}.b", name), t))
    }
}

fn build_params(cfg: &ModelConfig, fill: impl FnMut(&[usize], Init) -> Tensor) -> (ParamSet, Layout) {
    let mut b = Builder { ps: ParamSet::new(), fill };
    let d = cfg.hidden_dim;
    let l = cfg.latent_dim();
    let h = cfg.ode_hidden;
    let enc_in = b.linear("encoder.input", cfg.obs_dim, d, false);
    let attn = (0..cfg.encoder_layers)
        .map(|k| ["key", "query", "value"].map(|nm| b.weight(format!("encoder.attn{}.{}", k, nm), d, d, false)))
        .collect();
    let pool_wa = b.weight("encoder.pool.wa".into(), d, d, false);
    let pool1 = b.linear("encoder.out1", d, cfg.pool_hidden, false);
    let pool2 = b.linear("encoder.out2", cfg.pool_hidden, cfg.encoder_out, false);
    let edge1 = b.linear("ode.edge1", 2 * l, h, false);
    let edge2 = b.linear("ode.edge2", h, h, true);
    let node1 = b.linear("ode.node1", l + h, h, false);
    let node2 = b.linear("ode.node2", h, l, true);
    let dec = (0..cfg.decoder_layers)
        .map(|k| {
            let out = if k + 1 == cfg.decoder_layers { cfg.obs_dim } else { l };
            b.linear(&format!("decoder{}", k), l, out, false)
        })
        .collect();
    (b.ps, Layout { enc_in, attn, pool_wa, pool1, pool2, edge1, edge2, node1, node2, dec })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangoModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    layout: Layout,
}

impl TangoModel {
    /// Uniform(+-1/sqrt(fan_in)) weights and biases; the last layer of each
    /// ODE-function MLP starts at zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_for(seed, STREAM_PARAM_INIT, 0);
        let (params, layout) = build_params(&config, |shape, init| {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zero => vec![0.0; n],
                Init::Uniform(fan_in) => {
                    let a = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
            };
            Tensor::new(shape.to_vec(), data).expect("init shape")
        });
        Ok(Self { config, params, layout })
    }

    /// Adopt stored parameters after checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self, ModelError> {
        config.validate()?;
        let (expected, layout) = build_params(&config, |s, _| Tensor::zeros(s));
        if expected.names() != params.names()
            || expected.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(ModelError::Shape(format!(
                "parameter layout does not match the configuration ({} vs {} tensors)",
                params.len(),
                expected.len()
            )));
        }
        Ok(Self { config, params, layout })
    }

    pub fn map_params(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        let names = self.params.names().to_vec();
        for (n, t) in names.iter().zip(self.params.tensors_mut()) {
            f(n, t);
        }
    }

    pub fn bind<'m>(&'m self, tape: &mut Tape) -> Bound<'m> {
        Bound { model: self, vars: self.params.bind(tape) }
    }

    /// Use already-recorded tape values in place of the stored parameters.
    pub fn bind_vars(&self, vars: Vec<Var>) -> Result<Bound<'_>, ModelError> {
        if vars.len() != self.params.len() {
            return Err(ModelError::Shape(format!("{} vars for {} parameter tensors", vars.len(), self.params.len())));
        }
        Ok(Bound { model: self, vars })
    }
}

/// Model parameters recorded on one tape.
pub struct Bound<'m> {
    model: &'m TangoModel,
    pub vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    fn v(&self, i: usize) -> Var {
        self.vars[i]
    }

    fn lin(&self, tape: &mut Tape, x: Var, (w, b): (usize, usize)) -> Result<Var, ModelError> {
        Ok(tape.affine(x, self.v(w), self.v(b))?)
    }

    /// `y = f_dec(z)` row-wise; hidden decoder layers use ReLU.
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Var, ModelError> {
        let layers = &self.model.layout.dec;
        let mut x = z;
        for (k, &wb) in layers.iter().enumerate() {
            x = self.lin(tape, x, wb)?;
            if k + 1 < layers.len() {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }

    /// dz/dt: edge messages MLP([z_src, z_dst]) summed at each destination,
    /// then MLP([z, aggregate]) per agent.
    pub fn ode_func(&self, tape: &mut Tape, z: Var, edges: &EdgeIndex) -> Result<Var, ModelError> {
        let lay = &self.model.layout;
        let n = tape.value(z).shape()[0];
        if n != edges.n_nodes {
            return Err(ModelError::Shape(format!("{} latent rows for {} agents", n, edges.n_nodes)));
        }
        let agg = if edges.src.is_empty() {
            tape.constant(Tensor::zeros(&[n, self.config().ode_hidden]))
        } else {
            let zs = tape.gather_rows(z, &edges.src)?;
            let zd = tape.gather_rows(z, &edges.dst)?;
            let pair = tape.concat(&[zs, zd], 1)?;
            let m = self.lin(tape, pair, lay.edge1)?;
            let m = tape.tanh(m)?;
            let m = self.lin(tape, m, lay.edge2)?;
            tape.segment_sum(m, &edges.dst, n)?
        };
        let x = tape.concat(&[z, agg], 1)?;
        let x = self.lin(tape, x, lay.node1)?;
        let x = tape.tanh(x)?;
        self.lin(tape, x, lay.node2)
    }

    pub fn integrate_forward(
        &self,
        tape: &mut Tape,
        z0: Var,
        edges: &EdgeIndex,
        n_frames: usize,
    ) -> Result<Vec<Var>, ModelError> {
        let cfg = self.config();
        integrate(tape, z0, n_frames, cfg.substeps, cfg.solver_step(), |t, z| self.ode_func(t, z, edges))
    }

    /// Integrates the negated field `-g` from `z_t` over the same grid.
    pub fn integrate_reverse(
        &self,
        tape: &mut Tape,
        z_t: Var,
        edges: &EdgeIndex,
        n_frames: usize,
    ) -> Result<Vec<Var>, ModelError> {
        let cfg = self.config();
        integrate(tape, z_t, n_frames, cfg.substeps, cfg.solver_step(), |t, z| {
            let g = self.ode_func(t, z, edges)?;
            Ok(t.scale(g, -1.0)?)
        })
    }
}

