use std::collections::BTreeMap;

use super::{Bound, ModelError};
use crate::dataio::Observation;
use crate::diffcore::{Tape, Tensor, Var};
use crate::physics::Adjacency;

/// Sinusoidal embedding: `sin(dt / 10000^(2i/d))` at even slots, `cos` at odd.
pub fn temporal_encoding(dt: f64, d: usize) -> Result<Vec<f64>, ModelError> {
    if d % 2 != 0 {
        return Err(ModelError::OddDimension(d));
    }
    let mut out = vec![0.0; d];
    for i in 0..d / 2 {
        let arg = dt / 10000f64.powf(2.0 * i as f64 / d as f64);
        out[2 * i] = arg.sin();
        out[2 * i + 1] = arg.cos();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub agent: usize,
    pub frame: usize,
    pub features: Vec<f64>,
}

/// Message from `src` into `dst`; `dt` is `frame(src) - frame(dst)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphEdge {
    pub src: usize,
    pub dst: usize,
    pub dt: i64,
    pub spatial: bool,
}

/// Observation nodes, agent-major and frame-ordered per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalGraph {
    pub n_agents: usize,
    pub origin_frame: usize,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl TemporalGraph {
    /// Temporal edges join every pair of observations of one agent; spatial
    /// edges join same-frame observations of agents adjacent in `adjacency`.
    pub fn build(conditioning: &[Vec<Observation>], adjacency: &Adjacency, origin_frame: usize) -> Result<Self, ModelError> {
        let n = conditioning.len();
        if adjacency.n() != n {
            return Err(ModelError::Shape(format!("{} agents but adjacency over {}", n, adjacency.n())));
        }
        let mut nodes = Vec::new();
        let mut by_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut spans = Vec::with_capacity(n);
        for (a, obs) in conditioning.iter().enumerate() {
            if obs.is_empty() {
                return Err(ModelError::EmptyAgent(a));
            }
            let start = nodes.len();
            for o in obs {
                by_frame.entry(o.frame).or_default().push(nodes.len());
                nodes.push(GraphNode { agent: a, frame: o.frame, features: o.features.clone() });
            }
            spans.push(start..nodes.len());
        }
        let mut edges = Vec::new();
        for span in &spans {
            for dst in span.clone() {
                for src in span.clone() {
                    if src != dst {
                        let dt = nodes[src].frame as i64 - nodes[dst].frame as i64;
                        edges.push(GraphEdge { src, dst, dt, spatial: false });
                    }
                }
            }
        }
        for group in by_frame.values() {
            for &dst in group {
                for &src in group {
                    if nodes[src].agent != nodes[dst].agent && adjacency.connected(nodes[src].agent, nodes[dst].agent) {
                        edges.push(GraphEdge { src, dst, dt: 0, spatial: true });
                    }
                }
            }
        }
        Ok(Self { n_agents: n, origin_frame, nodes, edges })
    }

    pub fn agent_of(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.agent).collect()
    }

    /// Permutation-friendly key for the distinct offsets: sorted values and
    /// the index of each edge's offset among them.
    fn offset_table(&self) -> (Vec<i64>, Vec<usize>) {
        let mut uniq: Vec<i64> = self.edges.iter().map(|e| e.dt).collect();
        uniq.sort_unstable();
        uniq.dedup();
        let idx = self.edges.iter().map(|e| uniq.binary_search(&e.dt).unwrap()).collect();
        (uniq, idx)
    }
}

fn te_table(offsets: impl Iterator<Item = f64>, d: usize) -> Result<Tensor, ModelError> {
    let rows = offsets.map(|t| temporal_encoding(t, d)).collect::<Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, d]));
    }
    Ok(Tensor::from_rows(&rows)?)
}

impl Bound<'_> {
    fn node_features(&self, tape: &mut Tape, graph: &TemporalGraph) -> Result<Var, ModelError> {
        let rows: Vec<Vec<f64>> = graph.nodes.iter().map(|n| n.features.clone()).collect();
        if rows.iter().any(|r| r.len() != self.config().obs_dim) {
            return Err(ModelError::Shape(format!("observation width differs from {}", self.config().obs_dim)));
        }
        let x = tape.constant(Tensor::from_rows(&rows)?);
        self.lin(tape, x, self.model.layout.enc_in)
    }

    /// One residual attention layer over the temporal graph.
    pub fn attention_layer(&self, tape: &mut Tape, graph: &TemporalGraph, h: Var, layer: usize) -> Result<Var, ModelError> {
        let d = self.config().hidden_dim;
        let [wk, wq, wv] = self.model.layout.attn[layer].map(|i| self.v(i));
        if graph.edges.is_empty() {
            return Ok(h);
        }
        let (offsets, dt_idx) = graph.offset_table();
        let te = tape.constant(te_table(offsets.iter().map(|&t| t as f64), d)?);
        let src: Vec<usize> = graph.edges.iter().map(|e| e.src).collect();
        let dst: Vec<usize> = graph.edges.iter().map(|e| e.dst).collect();

        // (h_src + TE) W = h_src W + TE W, gathered per edge.
        let mut keyed = |w: Var| -> Result<Var, ModelError> {
            let hw = tape.matmul(h, w)?;
            let tw = tape.matmul(te, w)?;
            let a = tape.gather_rows(hw, &src)?;
            let b = tape.gather_rows(tw, &dt_idx)?;
            Ok(tape.add(a, b)?)
        };
        let k = keyed(wk)?;
        let v = keyed(wv)?;
        let hq = tape.matmul(h, wq)?;
        let q = tape.gather_rows(hq, &dst)?;
        let kq = tape.mul(k, q)?;
        let score = tape.sum_rows(kq)?;
        let score = tape.scale(score, 1.0 / (d as f64).sqrt())?;
        let msg = tape.scale_rows(v, score)?;
        let agg = tape.segment_sum(msg, &dst, graph.nodes.len())?;
        let act = tape.relu(agg)?;
        Ok(tape.add(h, act)?)
    }

    /// Per-agent sequence representation from final node states.
    pub fn sequence_pool(&self, tape: &mut Tape, graph: &TemporalGraph, h: Var) -> Result<Var, ModelError> {
        let d = self.config().hidden_dim;
        let n = graph.n_agents;
        let agent_of = graph.agent_of();
        let mut counts = vec![0usize; n];
        for &a in &agent_of {
            counts[a] += 1;
        }
        if let Some(a) = counts.iter().position(|&c| c == 0) {
            return Err(ModelError::EmptyAgent(a));
        }
        let inv = tape.constant(Tensor::matrix(n, 1, counts.iter().map(|&c| 1.0 / c as f64).collect())?);
        let origin = graph.origin_frame as f64;
        let te = tape.constant(te_table(graph.nodes.iter().map(|nd| nd.frame as f64 - origin), d)?);
        let hh = tape.add(h, te)?;

        let sum = tape.segment_sum(hh, &agent_of, n)?;
        let mean = tape.scale_rows(sum, inv)?;
        let a = tape.matmul(mean, self.v(self.model.layout.pool_wa))?;
        let a = tape.tanh(a)?;
        let a_node = tape.gather_rows(a, &agent_of)?;
        let prod = tape.mul(a_node, hh)?;
        let score = tape.sum_rows(prod)?;
        let scaled = tape.scale_rows(hh, score)?;
        let act = tape.relu(scaled)?;
        let pooled = tape.segment_sum(act, &agent_of, n)?;
        Ok(tape.scale_rows(pooled, inv)?)
    }

    /// Latent initial state: encoder output followed by zero augmentation.
    pub fn encode(&self, tape: &mut Tape, graph: &TemporalGraph) -> Result<Var, ModelError> {
        let lay = &self.model.layout;
        let mut h = self.node_features(tape, graph)?;
        for layer in 0..lay.attn.len() {
            h = self.attention_layer(tape, graph, h, layer)?;
        }
        let u = self.sequence_pool(tape, graph, h)?;
        let x = self.lin(tape, u, lay.pool1)?;
        let x = tape.relu(x)?;
        let z = self.lin(tape, x, lay.pool2)?;
        let aug = self.config().augment_dim;
        if aug == 0 {
            return Ok(z);
        }
        let zeros = tape.constant(Tensor::zeros(&[graph.n_agents, aug]));
        Ok(tape.concat(&[z, zeros], 1)?)
    }
}
