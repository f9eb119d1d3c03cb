//! Dynamically constructed computational graph with reverse-mode adjoints.
//!
//! The graph is a Wengert list: an append-only, topologically ordered vector
//! of nodes. Values are computed eagerly as operations are recorded
//! (define-by-run); `forward` re-evaluates a retained tape for fresh inputs
//! of the same shapes; `backward` runs one reverse sweep, accumulating each
//! node's adjoint into a per-node slot and returning gradients for every
//! registered parameter.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor, EXP_CLAMP};

/// Index of a node on a tape. Only meaningful for the tape that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

/// Primitive differentiable operations. Each variant carries its parents.
#[derive(Clone, Debug)]
pub enum Op {
    /// Leading input variable; replaced by `forward`.
    Input,
    /// Fixed leaf. Parameters are constants registered by name.
    Constant,
    /// m[rows x cols] * v[cols]; adjoints flow to both the matrix and the vector.
    MatVec { m: NodeId, v: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// Elementwise product. If one operand has shape (1,), it broadcasts as a scalar.
    Mul { a: NodeId, b: NodeId },
    /// Elementwise quotient, same broadcast rule as Mul.
    Div { a: NodeId, b: NodeId },
    /// Multiply by a compile-time constant.
    Scale { x: NodeId, c: f64 },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    /// Saturating exponential (input clamped at EXP_CLAMP).
    Exp { x: NodeId },
    /// Stable softmax over a nonempty vector.
    Softmax { x: NodeId },
    /// Concatenation of 1-D parts, in order.
    Concat { parts: Vec<NodeId> },
    /// Inner product of two equal-length vectors; output shape (1,).
    Dot { a: NodeId, b: NodeId },
    /// Cosine similarity of two nonzero vectors; output shape (1,), range [-1, 1].
    Cosine { a: NodeId, b: NodeId },
    /// Convex mix gate*on + (1-gate)*off with a scalar gate node.
    BranchMix { gate: NodeId, on: NodeId, off: NodeId },
    /// Contiguous slice of the parent's flat data; output is 1-D.
    Slice { x: NodeId, start: usize, len: usize },
    /// Sum of all entries; output shape (1,).
    Sum { x: NodeId },
    /// Outer product of two vectors: rows follow `a`, columns follow `b`.
    Outer { a: NodeId, b: NodeId },
    Sin { x: NodeId },
    Cos { x: NodeId },
}

impl Op {
    pub fn parents(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Input | Constant => vec![],
            MatVec { m, v } => vec![*m, *v],
            Add { a, b } | Sub { a, b } | Mul { a, b } | Div { a, b } | Dot { a, b }
            | Cosine { a, b } | Outer { a, b } => vec![*a, *b],
            Scale { x, .. } | Tanh { x } | Sigmoid { x } | Exp { x } | Softmax { x }
            | Slice { x, .. } | Sum { x } | Sin { x } | Cos { x } => vec![*x],
            Concat { parts } => parts.clone(),
            BranchMix { gate, on, off } => vec![*gate, *on, *off],
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Input | Op::Constant)
    }
}

/// One entry of the tape: the operation, its current value, and the adjoint
/// slot filled by the reverse sweep.
#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub value: Tensor,
    pub adjoint: Tensor,
}

/// Gradients keyed by parameter name, as returned by `Tape::backward`.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_name.iter()
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Euclidean norm over all entries, used for clipping.
    pub fn global_norm(&self) -> f64 {
        self.by_name
            .values()
            .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.by_name.insert(name, grad);
    }

    /// Accumulate another gradient map entrywise (for minibatch averaging).
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (name, g) in other.iter() {
            match self.by_name.get_mut(name) {
                Some(acc) => {
                    let sum = tensor::add(acc, g)?;
                    *acc = sum;
                }
                None => {
                    self.by_name.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, c: f64) {
        for g in self.by_name.values_mut() {
            *g = tensor::scale(g, c);
        }
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    input_count: usize,
    params: BTreeMap<String, NodeId>,
    outputs: Vec<NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input_count(&self) -> usize {
        self.input_count
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn adjoint(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].adjoint
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Record a leading input variable. Inputs must precede all other nodes.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        if self.nodes.len() != self.input_count {
            return Err(Error::State(
                "inputs must be recorded before any other node".into(),
            ));
        }
        self.input_count += 1;
        self.push(Op::Input, value)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Constant, value)
    }

    /// Record a named parameter (a constant leaf whose gradient `backward`
    /// reports). Names must be unique per tape.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        if self.params.contains_key(name) {
            return Err(Error::Contract(format!(
                "parameter {name:?} registered twice"
            )));
        }
        let id = self.push(Op::Constant, value)?;
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Mark a node as a designated output of `forward`.
    pub fn mark_output(&mut self, id: NodeId) {
        self.outputs.push(id);
    }

    /// Append a node whose value was computed by the caller. Validates the
    /// topological-order invariant: every parent index is strictly smaller
    /// than the new node's index.
    pub fn record(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        let own = self.nodes.len();
        for p in op.parents() {
            if p.0 >= own {
                return Err(Error::GraphOrder {
                    node: own,
                    parent: p.0,
                });
            }
        }
        self.push(op, value)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if !value.all_finite() && !matches!(op, Op::Exp { .. }) {
            return Err(Error::numeric(
                format!("node {}", id.0),
                "non-finite value recorded",
            ));
        }
        let adjoint = Tensor::zeros_like(&value);
        self.nodes.push(Node { op, value, adjoint });
        Ok(id)
    }

    /// Evaluate one operation from current node values. Shared by the eager
    /// recording helpers and by `forward` re-evaluation so both paths agree.
    fn eval(nodes: &[Node], op: &Op) -> Result<Tensor> {
        let val = |id: NodeId| &nodes[id.0].value;
        use Op::*;
        match op {
            Input | Constant => Err(Error::State("leaf nodes are not re-evaluated".into())),
            MatVec { m, v } => tensor::matvec(val(*m), val(*v)),
            Add { a, b } => tensor::add(val(*a), val(*b)),
            Sub { a, b } => tensor::sub(val(*a), val(*b)),
            Mul { a, b } => {
                let (a, b) = (val(*a), val(*b));
                if a.is_scalar() && !b.is_scalar() {
                    Ok(tensor::scale(b, a.item()))
                } else if b.is_scalar() && !a.is_scalar() {
                    Ok(tensor::scale(a, b.item()))
                } else {
                    tensor::mul(a, b)
                }
            }
            Div { a, b } => {
                let (a, b) = (val(*a), val(*b));
                if b.is_scalar() && !a.is_scalar() {
                    Ok(tensor::scale(a, 1.0 / b.item()))
                } else {
                    tensor::div(a, b)
                }
            }
            Scale { x, c } => Ok(tensor::scale(val(*x), *c)),
            Tanh { x } => Ok(tensor::tanh(val(*x))),
            Sigmoid { x } => Ok(tensor::sigmoid(val(*x))),
            Exp { x } => Ok(tensor::exp(val(*x))),
            Softmax { x } => tensor::softmax(val(*x)),
            Concat { parts } => {
                let tensors: Vec<&Tensor> = parts.iter().map(|p| val(*p)).collect();
                tensor::concat_all(&tensors)
            }
            Dot { a, b } => Ok(Tensor::scalar(tensor::dot(val(*a), val(*b))?)),
            Cosine { a, b } => {
                let (a, b) = (val(*a), val(*b));
                let (na, nb) = (a.norm(), b.norm());
                if na == 0.0 || nb == 0.0 {
                    return Err(Error::numeric("cosine", "zero-norm operand"));
                }
                Ok(Tensor::scalar(tensor::dot(a, b)? / (na * nb)))
            }
            BranchMix { gate, on, off } => {
                let g = val(*gate);
                if !g.is_scalar() {
                    return Err(Error::dim("branch gate", &[1], g.shape()));
                }
                let a = g.item();
                tensor::add(
                    &tensor::scale(val(*on), a),
                    &tensor::scale(val(*off), 1.0 - a),
                )
            }
            Slice { x, start, len } => {
                let t = val(*x);
                if start + len > t.len() {
                    return Err(Error::Contract(format!(
                        "slice [{start}, {}) exceeds length {}",
                        start + len,
                        t.len()
                    )));
                }
                Ok(Tensor::vector(t.data()[*start..start + len].to_vec()))
            }
            Sum { x } => Ok(Tensor::scalar(val(*x).data().iter().sum())),
            Outer { a, b } => tensor::outer(val(*a), val(*b)),
            Sin { x } => Ok(tensor::sin(val(*x))),
            Cos { x } => Ok(tensor::cos(val(*x))),
        }
    }

    fn apply(&mut self, op: Op) -> Result<NodeId> {
        let value = Self::eval(&self.nodes, &op).map_err(|e| self.annotate(e))?;
        self.record(op, value)
    }

    fn annotate(&self, e: Error) -> Error {
        match e {
            Error::Dim {
                context,
                expected,
                actual,
            } => Error::Dim {
                context: format!("{context} (recording node {})", self.nodes.len()),
                expected,
                actual,
            },
            other => other,
        }
    }

    // Eager recording helpers: compute the value, then append the node.

    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        self.apply(Op::MatVec { m, v })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul { a, b })
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Div { a, b })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale { x, c })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid { x })
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Exp { x })
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Softmax { x })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        self.apply(Op::Concat {
            parts: parts.to_vec(),
        })
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Dot { a, b })
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Cosine { a, b })
    }

    pub fn branch_mix(&mut self, gate: NodeId, on: NodeId, off: NodeId) -> Result<NodeId> {
        let (sy, sz) = (self.value(on).shape(), self.value(off).shape());
        if sy != sz {
            return Err(Error::dim("branch_mix arms", sy, sz));
        }
        self.apply(Op::BranchMix { gate, on, off })
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(Op::Slice { x, start, len })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum { x })
    }

    pub fn outer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Outer { a, b })
    }

    pub fn sin(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sin { x })
    }

    pub fn cos(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Cos { x })
    }

    /// Re-evaluate the retained tape for fresh input values. Input shapes
    /// must match the originals; every non-leaf node is recomputed in index
    /// order. Returns the values of the designated outputs (or of the final
    /// node when none were marked).
    pub fn forward(&mut self, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
        if inputs.len() != self.input_count {
            return Err(Error::Contract(format!(
                "expected {} inputs, got {}",
                self.input_count,
                inputs.len()
            )));
        }
        for (i, x) in inputs.iter().enumerate() {
            if x.shape() != self.nodes[i].value.shape() {
                return Err(Error::dim(
                    format!("input {i}"),
                    self.nodes[i].value.shape(),
                    x.shape(),
                ));
            }
            self.nodes[i].value = x.clone();
        }
        for i in self.input_count..self.nodes.len() {
            if self.nodes[i].op.is_leaf() {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let value = Self::eval(&self.nodes, &op).map_err(|e| match e {
                Error::Dim {
                    context,
                    expected,
                    actual,
                } => Error::Dim {
                    context: format!("{context} (node {i})"),
                    expected,
                    actual,
                },
                other => other,
            })?;
            if !value.all_finite() && !matches!(op, Op::Exp { .. }) {
                return Err(Error::numeric(
                    format!("node {i}"),
                    "non-finite value during forward",
                ));
            }
            self.nodes[i].value = value;
        }
        let outs = if self.outputs.is_empty() {
            match self.nodes.last() {
                Some(n) => vec![n.value.clone()],
                None => vec![],
            }
        } else {
            self.outputs
                .iter()
                .map(|id| self.nodes[id.0].value.clone())
                .collect()
        };
        Ok(outs)
    }

    /// One reverse sweep from a scalar output node. Zeroes every adjoint,
    /// seeds the output with 1, propagates local derivatives in reverse index
    /// order, and returns the gradient of each registered parameter.
    pub fn backward(&mut self, output: NodeId) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward on an empty tape".into()));
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "output node {} out of range",
                output.0
            )));
        }
        if !self.nodes[output.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, node {} has shape {:?}",
                output.0,
                self.nodes[output.0].value.shape()
            )));
        }
        for n in &mut self.nodes {
            n.adjoint = Tensor::zeros_like(&n.value);
        }
        self.nodes[output.0].adjoint = Tensor::scalar(1.0);

        for i in (0..=output.0).rev() {
            let op = self.nodes[i].op.clone();
            if op.is_leaf() {
                continue;
            }
            self.propagate(i, &op)?;
        }

        let mut grads = Gradients::default();
        for (name, id) in &self.params {
            grads.insert(name.clone(), self.nodes[id.0].adjoint.clone());
        }
        Ok(grads)
    }

    /// Scatter node i's adjoint into its parents using the op's local
    /// derivative. Accumulation is in-place addition into the parent slots.
    fn propagate(&mut self, i: usize, op: &Op) -> Result<()> {
        let g = self.nodes[i].adjoint.clone();
        let y = self.nodes[i].value.clone();
        use Op::*;
        match op {
            Input | Constant => {}
            MatVec { m, v } => {
                // d m += outer(g, v); d v += m^T g
                let mv = self.nodes[m.0].value.clone();
                let vv = self.nodes[v.0].value.clone();
                let dm = tensor::outer(&g, &vv)?;
                self.accum(*m, &dm)?;
                let mt = tensor::transpose(&mv)?;
                let dv = tensor::matvec(&mt, &g)?;
                self.accum(*v, &dv)?;
            }
            Add { a, b } => {
                self.accum(*a, &g)?;
                self.accum(*b, &g)?;
            }
            Sub { a, b } => {
                self.accum(*a, &g)?;
                self.accum(*b, &tensor::scale(&g, -1.0))?;
            }
            Mul { a, b } => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                if av.is_scalar() && !bv.is_scalar() {
                    // d a += sum(g .* b); d b += a * g
                    self.accum(*a, &Tensor::scalar(tensor::dot(&g, &bv)?))?;
                    self.accum(*b, &tensor::scale(&g, av.item()))?;
                } else if bv.is_scalar() && !av.is_scalar() {
                    self.accum(*b, &Tensor::scalar(tensor::dot(&g, &av)?))?;
                    self.accum(*a, &tensor::scale(&g, bv.item()))?;
                } else {
                    self.accum(*a, &tensor::mul(&g, &bv)?)?;
                    self.accum(*b, &tensor::mul(&g, &av)?)?;
                }
            }
            Div { a, b } => {
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                if bv.is_scalar() && !av.is_scalar() {
                    let inv = 1.0 / bv.item();
                    self.accum(*a, &tensor::scale(&g, inv))?;
                    // d b = -sum(g .* a) / b^2
                    let s = -tensor::dot(&g, &av)? * inv * inv;
                    self.accum(*b, &Tensor::scalar(s))?;
                } else {
                    let da = tensor::div(&g, &bv)?;
                    self.accum(*a, &da)?;
                    // d b = -g .* a / b^2
                    let mut db = tensor::mul(&g, &av)?;
                    for (d, bj) in db.data_mut().iter_mut().zip(bv.data()) {
                        *d = -*d / (bj * bj);
                    }
                    self.accum(*b, &db)?;
                }
            }
            Scale { x, c } => {
                self.accum(*x, &tensor::scale(&g, *c))?;
            }
            Tanh { x } => {
                // d x = g .* (1 - y^2)
                let mut d = g.clone();
                for (dv, yv) in d.data_mut().iter_mut().zip(y.data()) {
                    *dv *= 1.0 - yv * yv;
                }
                self.accum(*x, &d)?;
            }
            Sigmoid { x } => {
                let mut d = g.clone();
                for (dv, yv) in d.data_mut().iter_mut().zip(y.data()) {
                    *dv *= yv * (1.0 - yv);
                }
                self.accum(*x, &d)?;
            }
            Exp { x } => {
                // Saturated coordinates have zero derivative.
                let xv = self.nodes[x.0].value.clone();
                let mut d = g.clone();
                for ((dv, yv), xin) in d.data_mut().iter_mut().zip(y.data()).zip(xv.data()) {
                    *dv = if *xin <= EXP_CLAMP { *dv * yv } else { 0.0 };
                }
                self.accum(*x, &d)?;
            }
            Softmax { x } => {
                // d z_i = s_i (g_i - sum_j g_j s_j)
                let s = y.data();
                let inner: f64 = g.data().iter().zip(s).map(|(gi, si)| gi * si).sum();
                let d = Tensor::vector(
                    g.data()
                        .iter()
                        .zip(s)
                        .map(|(gi, si)| si * (gi - inner))
                        .collect(),
                );
                self.accum(*x, &d)?;
            }
            Concat { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    let seg = Tensor::vector(g.data()[offset..offset + len].to_vec());
                    self.accum(*p, &seg)?;
                    offset += len;
                }
            }
            Dot { a, b } => {
                let gs = g.item();
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                self.accum(*a, &tensor::scale(&bv, gs))?;
                self.accum(*b, &tensor::scale(&av, gs))?;
            }
            Cosine { a, b } => {
                // c = a.b/(|a||b|); d a = g (b/(|a||b|) - c a/|a|^2), symmetric in b.
                let gs = g.item();
                let c = y.item();
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let (na, nb) = (av.norm(), bv.norm());
                let da = tensor::sub(
                    &tensor::scale(&bv, 1.0 / (na * nb)),
                    &tensor::scale(&av, c / (na * na)),
                )?;
                let db = tensor::sub(
                    &tensor::scale(&av, 1.0 / (na * nb)),
                    &tensor::scale(&bv, c / (nb * nb)),
                )?;
                self.accum(*a, &tensor::scale(&da, gs))?;
                self.accum(*b, &tensor::scale(&db, gs))?;
            }
            BranchMix { gate, on, off } => {
                let a = self.nodes[gate.0].value.item();
                let onv = self.nodes[on.0].value.clone();
                let offv = self.nodes[off.0].value.clone();
                // d gate = g . (on - off)
                let diff = tensor::sub(&onv, &offv)?;
                let dg: f64 = g.data().iter().zip(diff.data()).map(|(x, y)| x * y).sum();
                self.accum(*gate, &Tensor::scalar(dg))?;
                self.accum(*on, &tensor::scale(&g, a))?;
                self.accum(*off, &tensor::scale(&g, 1.0 - a))?;
            }
            Slice { x, start, .. } => {
                let mut d = Tensor::zeros_like(&self.nodes[x.0].value);
                for (k, gv) in g.data().iter().enumerate() {
                    d.data_mut()[start + k] = *gv;
                }
                self.accum(*x, &d)?;
            }
            Sum { x } => {
                let gs = g.item();
                let mut d = Tensor::zeros_like(&self.nodes[x.0].value);
                for dv in d.data_mut() {
                    *dv = gs;
                }
                self.accum(*x, &d)?;
            }
            Outer { a, b } => {
                // d a_j = sum_i g[j,i] b_i ; d b_i = sum_j g[j,i] a_j
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                let da = tensor::matvec(&g, &bv)?;
                let gt = tensor::transpose(&g)?;
                let db = tensor::matvec(&gt, &av)?;
                self.accum(*a, &da)?;
                self.accum(*b, &db)?;
            }
            Sin { x } => {
                let xv = self.nodes[x.0].value.clone();
                let mut d = g.clone();
                for (dv, xin) in d.data_mut().iter_mut().zip(xv.data()) {
                    *dv *= xin.cos();
                }
                self.accum(*x, &d)?;
            }
            Cos { x } => {
                let xv = self.nodes[x.0].value.clone();
                let mut d = g.clone();
                for (dv, xin) in d.data_mut().iter_mut().zip(xv.data()) {
                    *dv *= -xin.sin();
                }
                self.accum(*x, &d)?;
            }
        }
        Ok(())
    }

    fn accum(&mut self, id: NodeId, delta: &Tensor) -> Result<()> {
        let adj = &mut self.nodes[id.0].adjoint;
        if adj.shape() != delta.shape() {
            return Err(Error::dim(
                format!("adjoint of node {}", id.0),
                adj.shape(),
                delta.shape(),
            ));
        }
        for (a, d) in adj.data_mut().iter_mut().zip(delta.data()) {
            *a += d;
        }
        Ok(())
    }

    /// Overwrite one coordinate of a registered parameter's value. Used by
    /// the finite-difference checker to probe the retained tape.
    pub fn nudge_param(&mut self, name: &str, coord: usize, value: f64) -> Result<()> {
        let id = self
            .params
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))?;
        let t = &mut self.nodes[id.0].value;
        if coord >= t.len() {
            return Err(Error::Contract(format!(
                "coordinate {coord} out of range for parameter {name:?}"
            )));
        }
        t.data_mut()[coord] = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_input_gets_index_zero() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(7.0)).unwrap();
        assert_eq!(x, NodeId(0));
        assert_eq!(tape.input_count(), 1);
    }

    #[test]
    fn record_add_after_two_inputs_is_index_two() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::scalar(1.0)).unwrap();
        let b = tape.input(Tensor::scalar(2.0)).unwrap();
        let c = tape.add(a, b).unwrap();
        assert_eq!(c, NodeId(2));
        assert_eq!(tape.value(c).item(), 3.0);
    }

    #[test]
    fn forward_referencing_parent_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::scalar(1.0)).unwrap();
        let err = tape
            .record(Op::Add { a, b: NodeId(5) }, Tensor::scalar(0.0))
            .unwrap_err();
        assert!(matches!(err, Error::GraphOrder { node: 1, parent: 5 }));
    }

    #[test]
    fn input_after_op_is_a_state_error() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::scalar(1.0)).unwrap();
        let _ = tape.scale(a, 2.0).unwrap();
        assert!(matches!(
            tape.input(Tensor::scalar(3.0)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn forward_identity_graph() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(0.0)).unwrap();
        tape.mark_output(x);
        let out = tape.forward(&[Tensor::scalar(7.0)]).unwrap();
        assert_eq!(out[0].item(), 7.0);
    }

    #[test]
    fn forward_product_graph() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::scalar(0.0)).unwrap();
        let b = tape.input(Tensor::scalar(0.0)).unwrap();
        let y = tape.mul(a, b).unwrap();
        tape.mark_output(y);
        let out = tape
            .forward(&[Tensor::scalar(3.0), Tensor::scalar(4.0)])
            .unwrap();
        assert_eq!(out[0].item(), 12.0);
    }

    #[test]
    fn forward_tanh_with_zero_weight() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, -2.0])).unwrap();
        let w = tape.param("w", Tensor::zeros(&[1, 2])).unwrap();
        let z = tape.matvec(w, x).unwrap();
        let y = tape.tanh(z).unwrap();
        assert_eq!(tape.value(y).item(), 0.0);
    }

    #[test]
    fn forward_shape_mismatch_names_node() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let w = tape.constant(Tensor::identity(2)).unwrap();
        let _ = tape.matvec(w, x).unwrap();
        let err = tape.forward(&[Tensor::vector(vec![1.0])]).unwrap_err();
        assert!(matches!(err, Error::Dim { .. }));
    }

    #[test]
    fn backward_square() {
        // y = x^2 at x = 3 -> dy/dx = 6.
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(3.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.adjoint(x).item(), 6.0);
    }

    #[test]
    fn backward_product_plus_first() {
        // y = x1*x2 + x1 at (2, 5) -> (6, 2).
        let mut tape = Tape::new();
        let x1 = tape.input(Tensor::scalar(2.0)).unwrap();
        let x2 = tape.input(Tensor::scalar(5.0)).unwrap();
        let p = tape.mul(x1, x2).unwrap();
        let y = tape.add(p, x1).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.adjoint(x1).item(), 6.0);
        assert_eq!(tape.adjoint(x2).item(), 2.0);
    }

    #[test]
    fn backward_returns_param_gradients() {
        // y = w . x with w a parameter: dy/dw = x.
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let w = tape
            .param("w", Tensor::vector(vec![0.5, -1.0, 2.0]))
            .unwrap();
        let y = tape.dot(w, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn backward_on_empty_tape_is_state_error() {
        let mut tape = Tape::new();
        assert!(matches!(tape.backward(NodeId(0)), Err(Error::State(_))));
    }

    #[test]
    fn backward_non_scalar_output_is_contract_error() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn fan_out_adjoints_sum_over_children() {
        // y = x*x + 3x as a fan-out graph must match the expanded
        // derivative 2x + 3 obtained from separate single-use nodes.
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(1.7)).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let tripled = tape.scale(x, 3.0).unwrap();
        let y = tape.add(sq, tripled).unwrap();
        tape.backward(y).unwrap();
        let expected = 2.0 * 1.7 + 3.0;
        assert!((tape.adjoint(x).item() - expected).abs() < 1e-14);
    }

    #[test]
    fn duplicate_param_name_is_rejected() {
        let mut tape = Tape::new();
        tape.param("w", Tensor::scalar(1.0)).unwrap();
        assert!(tape.param("w", Tensor::scalar(2.0)).is_err());
    }

    #[test]
    fn cosine_of_zero_vector_is_numeric_error() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let b = tape.input(Tensor::vector(vec![1.0, 0.0])).unwrap();
        assert!(matches!(tape.cosine(a, b), Err(Error::Numeric { .. })));
    }

    #[test]
    fn retained_tape_reevaluates_consistently() {
        // Build y = tanh(w x) eagerly, then re-run forward at a new point and
        // confirm the value matches a fresh eager build.
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![0.3, -0.1])).unwrap();
        let w = tape
            .param(
                "w",
                Tensor::matrix(2, 2, vec![0.5, -0.2, 0.1, 0.9]).unwrap(),
            )
            .unwrap();
        let z = tape.matvec(w, x).unwrap();
        let y = tape.tanh(z).unwrap();
        tape.mark_output(y);

        let fresh_point = Tensor::vector(vec![1.0, 2.0]);
        let out = tape.forward(&[fresh_point.clone()]).unwrap();

        let mut fresh = Tape::new();
        let x2 = fresh.input(fresh_point).unwrap();
        let w2 = fresh
            .param(
                "w",
                Tensor::matrix(2, 2, vec![0.5, -0.2, 0.1, 0.9]).unwrap(),
            )
            .unwrap();
        let z2 = fresh.matvec(w2, x2).unwrap();
        let y2 = fresh.tanh(z2).unwrap();
        assert_eq!(out[0].data(), fresh.value(y2).data());
    }

    #[test]
    fn forward_determinism_is_bitwise() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::vector(vec![0.1, 0.2, 0.3])).unwrap();
        let s = tape.softmax(x).unwrap();
        let c = tape.constant(Tensor::vector(vec![1.0, -1.0, 0.5])).unwrap();
        let d = tape.dot(s, c).unwrap();
        tape.mark_output(d);
        let point = [Tensor::vector(vec![0.7, -0.4, 1.1])];
        let a = tape.forward(&point).unwrap();
        let b = tape.forward(&point).unwrap();
        assert_eq!(a[0].data(), b[0].data());
    }
}
