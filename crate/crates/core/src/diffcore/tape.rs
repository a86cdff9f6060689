use super::{DiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds with their static parameters.
///
/// Binary elementwise ops need identical shapes; there is no broadcasting.
/// `RepeatRows` and `ScaleRows` exist for bias adds and per-row weights.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Matmul,
    /// Concatenate 2-D inputs along axis 0 (rows) or 1 (columns).
    Concat { axis: usize },
    Tanh,
    Relu,
    Sigmoid,
    Exp,
    Sum,
    Mean,
    /// Softmax over the last axis.
    Softmax,
    /// Row r of the input is added into output row `segments[r]`.
    SegmentSum { segments: Vec<usize>, num_segments: usize },
    GatherRows { index: Vec<usize> },
    /// R x C -> R x 1.
    SumRows,
    /// (R x C, R x 1) -> R x C.
    ScaleRows,
    /// 1 x C -> times x C.
    RepeatRows { times: usize },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::ScalarMul(_) => "scalar_mul",
            OpKind::Matmul => "matmul",
            OpKind::Concat { .. } => "concat",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Softmax => "softmax",
            OpKind::SegmentSum { .. } => "segment_sum",
            OpKind::GatherRows { .. } => "gather_rows",
            OpKind::SumRows => "sum_rows",
            OpKind::ScaleRows => "scale_rows",
            OpKind::RepeatRows { .. } => "repeat_rows",
        }
    }
}

enum Rec {
    Leaf,
    Op(OpKind, Vec<usize>),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    rec: Rec,
}

/// Define-by-run tape. Every op is recorded in evaluation order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to the leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of a leaf; zeros when the output does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn shape_err(op: &OpKind, detail: String) -> DiffError {
    DiffError::Shape { op: op.name(), detail }
}

fn need2(op: &OpKind, t: &Tensor) -> Result<(usize, usize), DiffError> {
    t.dims2().ok_or_else(|| shape_err(op, format!("expected a 2-D input, got {:?}", t.shape())))
}

fn acc(slot: &mut Option<Vec<f64>>, n: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; n])
}

fn sorted_sum(buf: &mut [f64]) -> f64 {
    match buf.len() {
        0 => 0.0,
        1 => buf[0],
        2 => buf[0] + buf[1],
        _ => {
            buf.sort_unstable_by(|a, b| a.total_cmp(b));
            buf.iter().skip(1).fold(buf[0], |s, v| s + v)
        }
    }
}

fn forward(op: &OpKind, ins: &[&Tensor]) -> Result<Tensor, DiffError> {
    let arity = match op {
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Matmul | OpKind::ScaleRows => Some(2),
        OpKind::Concat { .. } => None,
        _ => Some(1),
    };
    if let Some(a) = arity {
        if ins.len() != a {
            return Err(DiffError::Arity { op: op.name(), expected: a, got: ins.len() });
        }
    } else if ins.is_empty() {
        return Err(DiffError::Arity { op: op.name(), expected: 1, got: 0 });
    }
    let unary = |f: &dyn Fn(f64) -> f64| {
        let x = ins[0];
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| f(*v)).collect())
    };
    match op {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let (a, b) = (ins[0], ins[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| match op {
                    OpKind::Add => x + y,
                    OpKind::Sub => x - y,
                    _ => x * y,
                })
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        OpKind::ScalarMul(c) => unary(&|v| c * v),
        OpKind::Tanh => unary(&f64::tanh),
        OpKind::Relu => unary(&|v| if v > 0.0 { v } else { 0.0 }),
        OpKind::Sigmoid => unary(&|v| 1.0 / (1.0 + (-v).exp())),
        OpKind::Exp => unary(&f64::exp),
        OpKind::Sum => Ok(Tensor::scalar(ins[0].data().iter().sum())),
        OpKind::Mean => {
            let n = ins[0].numel();
            if n == 0 {
                return Err(shape_err(op, "mean of an empty tensor".into()));
            }
            Ok(Tensor::scalar(ins[0].data().iter().sum::<f64>() / n as f64))
        }
        OpKind::Matmul => {
            let (m, k) = need2(op, ins[0])?;
            let (k2, n) = need2(op, ins[1])?;
            if k != k2 {
                return Err(shape_err(op, format!("{}x{} @ {}x{}", m, k, k2, n)));
            }
            let (a, b) = (ins[0].data(), ins[1].data());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for kk in 0..k {
                    let av = a[i * k + kk];
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &b[kk * n..(kk + 1) * n];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
            Tensor::matrix(m, n, out)
        }
        OpKind::Concat { axis } => {
            let dims: Vec<(usize, usize)> =
                ins.iter().map(|t| need2(op, t)).collect::<Result<_, _>>()?;
            match axis {
                0 => {
                    let c = dims[0].1;
                    if dims.iter().any(|d| d.1 != c) {
                        return Err(shape_err(op, "column counts differ".into()));
                    }
                    let mut data = Vec::with_capacity(dims.iter().map(|d| d.0 * c).sum());
                    for t in ins {
                        data.extend_from_slice(t.data());
                    }
                    let r = dims.iter().map(|d| d.0).sum();
                    Tensor::matrix(r, c, data)
                }
                1 => {
                    let r = dims[0].0;
                    if dims.iter().any(|d| d.0 != r) {
                        return Err(shape_err(op, "row counts differ".into()));
                    }
                    let c: usize = dims.iter().map(|d| d.1).sum();
                    let mut data = Vec::with_capacity(r * c);
                    for i in 0..r {
                        for t in ins {
                            data.extend_from_slice(t.row(i));
                        }
                    }
                    Tensor::matrix(r, c, data)
                }
                _ => Err(DiffError::Invalid { op: op.name(), detail: format!("axis {}", axis) }),
            }
        }
        OpKind::Softmax => {
            let x = ins[0];
            let c = *x.shape().last().unwrap_or(&0);
            let mut out = x.data().to_vec();
            if c > 0 {
                for row in out.chunks_mut(c) {
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut s = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - mx).exp();
                        s += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= s;
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        OpKind::SegmentSum { segments, num_segments } => {
            let (r, c) = need2(op, ins[0])?;
            if segments.len() != r {
                return Err(shape_err(op, format!("{} segment ids for {} rows", segments.len(), r)));
            }
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); *num_segments];
            for (row, &s) in segments.iter().enumerate() {
                if s >= *num_segments {
                    return Err(DiffError::Invalid {
                        op: op.name(),
                        detail: format!("segment id {} out of range {}", s, num_segments),
                    });
                }
                members[s].push(row);
            }
            let x = ins[0].data();
            let mut out = vec![0.0; num_segments * c];
            let mut buf = Vec::new();
            for (s, rows) in members.iter().enumerate() {
                for j in 0..c {
                    buf.clear();
                    buf.extend(rows.iter().map(|&row| x[row * c + j]));
                    out[s * c + j] = sorted_sum(&mut buf);
                }
            }
            Tensor::matrix(*num_segments, c, out)
        }
        OpKind::GatherRows { index } => {
            let (r, c) = need2(op, ins[0])?;
            let mut data = Vec::with_capacity(index.len() * c);
            for &i in index {
                if i >= r {
                    return Err(DiffError::Invalid {
                        op: op.name(),
                        detail: format!("row {} out of range {}", i, r),
                    });
                }
                data.extend_from_slice(ins[0].row(i));
            }
            Tensor::matrix(index.len(), c, data)
        }
        OpKind::SumRows => {
            let (r, c) = need2(op, ins[0])?;
            let x = ins[0].data();
            let data = (0..r).map(|i| x[i * c..(i + 1) * c].iter().sum()).collect();
            Tensor::matrix(r, 1, data)
        }
        OpKind::ScaleRows => {
            let (r, c) = need2(op, ins[0])?;
            let (rs, cs) = need2(op, ins[1])?;
            if rs != r || cs != 1 {
                return Err(shape_err(op, format!("scale {}x{} for {}x{}", rs, cs, r, c)));
            }
            let (x, s) = (ins[0].data(), ins[1].data());
            let data = (0..r * c).map(|k| x[k] * s[k / c.max(1)]).collect();
            Tensor::matrix(r, c, data)
        }
        OpKind::RepeatRows { times } => {
            let (r, c) = need2(op, ins[0])?;
            if r != 1 {
                return Err(shape_err(op, format!("expected one row, got {}", r)));
            }
            let mut data = Vec::with_capacity(times * c);
            for _ in 0..*times {
                data.extend_from_slice(ins[0].data());
            }
            Tensor::matrix(*times, c, data)
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, rec: Rec::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Evaluate `op` on recorded inputs and record the result.
    pub fn apply(&mut self, op: OpKind, inputs: &[Var]) -> Result<Var, DiffError> {
        if let Some(bad) = inputs.iter().find(|v| v.0 >= self.nodes.len()) {
            return Err(DiffError::UnknownVar(bad.0));
        }
        let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = forward(&op, &vals)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            rec: Rec::Op(op, inputs.iter().map(|v| v.0).collect()),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        self.apply(OpKind::ScalarMul(c), &[a])
    }
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Matmul, &[a, b])
    }
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, DiffError> {
        self.apply(OpKind::Concat { axis }, parts)
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Tanh, &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Relu, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Sigmoid, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Exp, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Sum, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Mean, &[a])
    }
    pub fn softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::Softmax, &[a])
    }
    pub fn segment_sum(&mut self, a: Var, segments: &[usize], num_segments: usize) -> Result<Var, DiffError> {
        self.apply(OpKind::SegmentSum { segments: segments.to_vec(), num_segments }, &[a])
    }
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, DiffError> {
        self.apply(OpKind::GatherRows { index: index.to_vec() }, &[a])
    }
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::SumRows, &[a])
    }
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var, DiffError> {
        self.apply(OpKind::ScaleRows, &[a, s])
    }
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var, DiffError> {
        self.apply(OpKind::RepeatRows { times }, &[a])
    }

    /// `x @ w + b` with `b` a 1 x C row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let xw = self.matmul(x, w)?;
        let rows = self.value(xw).shape()[0];
        let bb = self.repeat_rows(b, rows)?;
        self.add(xw, bb)
    }

    /// Sum of squared entries.
    pub fn sq_sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let sq = self.mul(a, a)?;
        self.sum(sq)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients, DiffError> {
        if output.0 >= self.nodes.len() {
            return Err(DiffError::UnknownVar(output.0));
        }
        let out = &self.nodes[output.0].value;
        if out.numel() != 1 {
            return Err(DiffError::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let Rec::Op(op, inputs) = &node.rec else { continue };
            if !node.requires_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_deref() else { continue };
            self.backprop_node(op, inputs, &node.value, g, lo);
            if !matches!(node.rec, Rec::Leaf) {
                hi[0] = None;
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, op: &OpKind, inputs: &[usize], y: &Tensor, g: &[f64], lo: &mut [Option<Vec<f64>>]) {
        let val = |k: usize| &self.nodes[inputs[k]].value;
        let wants = |k: usize| self.nodes[inputs[k]].requires_grad;
        let y = y.data();
        match op {
            OpKind::Add | OpKind::Sub => {
                let sign = if matches!(op, OpKind::Sub) { -1.0 } else { 1.0 };
                if wants(0) {
                    let ga = acc(&mut lo[inputs[0]], g.len());
                    ga.iter_mut().zip(g).for_each(|(a, gv)| *a += gv);
                }
                if wants(1) {
                    let gb = acc(&mut lo[inputs[1]], g.len());
                    gb.iter_mut().zip(g).for_each(|(b, gv)| *b += sign * gv);
                }
            }
            OpKind::Mul => {
                for k in 0..2 {
                    if wants(k) {
                        let other = val(1 - k).data().to_vec();
                        let gk = acc(&mut lo[inputs[k]], g.len());
                        for ((a, gv), o) in gk.iter_mut().zip(g).zip(&other) {
                            *a += gv * o;
                        }
                    }
                }
            }
            OpKind::ScalarMul(c) => {
                if wants(0) {
                    let ga = acc(&mut lo[inputs[0]], g.len());
                    ga.iter_mut().zip(g).for_each(|(a, gv)| *a += c * gv);
                }
            }
            OpKind::Tanh | OpKind::Sigmoid | OpKind::Exp => {
                if wants(0) {
                    let ga = acc(&mut lo[inputs[0]], g.len());
                    for ((a, gv), yv) in ga.iter_mut().zip(g).zip(y) {
                        let d = match op {
                            OpKind::Tanh => 1.0 - yv * yv,
                            OpKind::Sigmoid => yv * (1.0 - yv),
                            _ => *yv,
                        };
                        *a += gv * d;
                    }
                }
            }
            OpKind::Relu => {
                if wants(0) {
                    let x = val(0).data();
                    let ga = acc(&mut lo[inputs[0]], g.len());
                    for ((a, gv), xv) in ga.iter_mut().zip(g).zip(x) {
                        if *xv > 0.0 {
                            *a += gv;
                        }
                    }
                }
            }
            OpKind::Sum | OpKind::Mean => {
                if wants(0) {
                    let n = val(0).numel();
                    let d = if matches!(op, OpKind::Mean) { g[0] / n as f64 } else { g[0] };
                    let ga = acc(&mut lo[inputs[0]], n);
                    ga.iter_mut().for_each(|a| *a += d);
                }
            }
            OpKind::Softmax => {
                if wants(0) {
                    let c = *val(0).shape().last().unwrap_or(&1);
                    let ga = acc(&mut lo[inputs[0]], g.len());
                    for ((ar, gr), yr) in ga.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((a, gv), yv) in ar.iter_mut().zip(gr).zip(yr) {
                            *a += yv * (gv - dot);
                        }
                    }
                }
            }
            OpKind::Matmul => {
                let (a, b) = (val(0), val(1));
                let (m, k) = a.dims2().unwrap();
                let n = b.dims2().unwrap().1;
                let (ad, bd) = (a.data(), b.data());
                if wants(0) {
                    let ga = acc(&mut lo[inputs[0]], m * k);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &bd[kk * n..(kk + 1) * n];
                            ga[i * k + kk] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if wants(1) {
                    let gb = acc(&mut lo[inputs[1]], k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let av = ad[i * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            let gbrow = &mut gb[kk * n..(kk + 1) * n];
                            for (o, gv) in gbrow.iter_mut().zip(grow) {
                                *o += av * gv;
                            }
                        }
                    }
                }
            }
            OpKind::Concat { axis } => {
                let total_c: usize = inputs.iter().map(|&ix| self.nodes[ix].value.shape()[1]).sum();
                let mut row_off = 0;
                let mut col_off = 0;
                for (k, &ix) in inputs.iter().enumerate() {
                    let (r, c) = self.nodes[ix].value.dims2().unwrap();
                    if wants(k) {
                        let gk = acc(&mut lo[ix], r * c);
                        if *axis == 0 {
                            let src = &g[row_off * c..(row_off + r) * c];
                            gk.iter_mut().zip(src).for_each(|(a, gv)| *a += gv);
                        } else {
                            for i in 0..r {
                                let src = &g[i * total_c + col_off..i * total_c + col_off + c];
                                gk[i * c..(i + 1) * c].iter_mut().zip(src).for_each(|(a, gv)| *a += gv);
                            }
                        }
                    }
                    row_off += r;
                    col_off += c;
                }
            }
            OpKind::SegmentSum { segments, .. } => {
                if wants(0) {
                    let (r, c) = val(0).dims2().unwrap();
                    let ga = acc(&mut lo[inputs[0]], r * c);
                    for (row, &s) in segments.iter().enumerate() {
                        let src = &g[s * c..(s + 1) * c];
                        ga[row * c..(row + 1) * c].iter_mut().zip(src).for_each(|(a, gv)| *a += gv);
                    }
                }
            }
            OpKind::GatherRows { index } => {
                if wants(0) {
                    let (r, c) = val(0).dims2().unwrap();
                    let ga = acc(&mut lo[inputs[0]], r * c);
                    for (i, &src_row) in index.iter().enumerate() {
                        let src = &g[i * c..(i + 1) * c];
                        ga[src_row * c..(src_row + 1) * c].iter_mut().zip(src).for_each(|(a, gv)| *a += gv);
                    }
                }
            }
            OpKind::SumRows => {
                if wants(0) {
                    let (r, c) = val(0).dims2().unwrap();
                    let ga = acc(&mut lo[inputs[0]], r * c);
                    for i in 0..r {
                        ga[i * c..(i + 1) * c].iter_mut().for_each(|a| *a += g[i]);
                    }
                }
            }
            OpKind::ScaleRows => {
                let (r, c) = val(0).dims2().unwrap();
                let (x, s) = (val(0).data(), val(1).data());
                if wants(0) {
                    let ga = acc(&mut lo[inputs[0]], r * c);
                    for k in 0..r * c {
                        ga[k] += g[k] * s[k / c];
                    }
                }
                if wants(1) {
                    let gs = acc(&mut lo[inputs[1]], r);
                    for i in 0..r {
                        gs[i] += (0..c).map(|j| g[i * c + j] * x[i * c + j]).sum::<f64>();
                    }
                }
            }
            OpKind::RepeatRows { times } => {
                if wants(0) {
                    let c = val(0).shape()[1];
                    let ga = acc(&mut lo[inputs[0]], c);
                    for t in 0..*times {
                        ga.iter_mut().zip(&g[t * c..(t + 1) * c]).for_each(|(a, gv)| *a += gv);
                    }
                }
            }
        }
    }
}
