use super::ModelError;
use crate::diffcore::{Tape, Var};
use crate::physics::Adjacency;

/// Directed message-passing edges between agents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeIndex {
    pub n_nodes: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl EdgeIndex {
    pub fn from_adjacency(adj: &Adjacency) -> Self {
        let (src, dst) = adj.directed_edges().into_iter().unzip();
        Self { n_nodes: adj.n(), src, dst }
    }
}

fn axpy(tape: &mut Tape, z: Var, a: f64, k: Var) -> Result<Var, ModelError> {
    let s = tape.scale(k, a)?;
    Ok(tape.add(z, s)?)
}

/// Fixed-step RK4 on the tape. Returns `n_frames` states spaced by
/// `substeps` solver steps of size `h`; the first is `z0` itself.
pub fn integrate<F>(
    tape: &mut Tape,
    z0: Var,
    n_frames: usize,
    substeps: usize,
    h: f64,
    mut field: F,
) -> Result<Vec<Var>, ModelError>
where
    F: FnMut(&mut Tape, Var) -> Result<Var, ModelError>,
{
    let mut out = Vec::with_capacity(n_frames);
    if n_frames == 0 {
        return Ok(out);
    }
    out.push(z0);
    let mut z = z0;
    let mut step = 0;
    for _ in 1..n_frames {
        for _ in 0..substeps {
            step += 1;
            let k1 = field(tape, z)?;
            let z2 = axpy(tape, z, h / 2.0, k1)?;
            let k2 = field(tape, z2)?;
            let z3 = axpy(tape, z, h / 2.0, k2)?;
            let k3 = field(tape, z3)?;
            let z4 = axpy(tape, z, h, k3)?;
            let k4 = field(tape, z4)?;
            let ends = tape.add(k1, k4)?;
            let mids = tape.add(k2, k3)?;
            let mids = tape.scale(mids, 2.0)?;
            let incr = tape.add(ends, mids)?;
            z = axpy(tape, z, h / 6.0, incr)?;
            if !tape.value(z).all_finite() {
                return Err(ModelError::Diverged { step });
            }
        }
        out.push(z);
    }
    Ok(out)
}
