//! Differentiable building blocks: dense layers, attention with pluggable
//! score functions, self-attention, and convex branching.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::Parameterized;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Default hidden width of the feedforward score network.
pub const DEFAULT_SCORE_HIDDEN: usize = 16;

/// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
pub fn init_matrix<R: Rng>(rng: &mut R, out_dim: usize, in_dim: usize) -> Tensor {
    let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
    let data = (0..out_dim * in_dim)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::matrix(out_dim, in_dim, data).expect("sized by construction")
}

pub fn init_vector<R: Rng>(rng: &mut R, dim: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::vector((0..dim).map(|_| rng.gen_range(-bound..bound)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softmax => tape.softmax(x),
        }
    }
}

/// Fully connected layer sigma(W x + b). The bias is optional; without it the
/// layer is the bare weight-matrix map.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub name: String,
    pub w: Tensor,
    pub b: Option<Tensor>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new<R: Rng>(
        name: impl Into<String>,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        DenseLayer {
            name: name.into(),
            w: init_matrix(rng, out_dim, in_dim),
            b: bias.then(|| Tensor::zeros(&[out_dim])),
            activation,
        }
    }

    pub fn from_parts(
        name: impl Into<String>,
        w: Tensor,
        b: Option<Tensor>,
        activation: Activation,
    ) -> Result<Self> {
        if let Some(b) = &b {
            if b.len() != w.rows() {
                return Err(Error::dim("dense bias", &[w.rows()], b.shape()));
            }
        }
        Ok(DenseLayer {
            name: name.into(),
            w,
            b,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<DenseNodes> {
        let w = tape.param(&format!("{}.w", self.name), self.w.clone())?;
        let b = match &self.b {
            Some(b) => Some(tape.param(&format!("{}.b", self.name), b.clone())?),
            None => None,
        };
        Ok(DenseNodes {
            w,
            b,
            activation: self.activation,
        })
    }
}

impl Parameterized for DenseLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.w", self.name), &self.w);
        if let Some(b) = &self.b {
            f(&format!("{}.b", self.name), b);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.w", self.name), &mut self.w);
        if let Some(b) = &mut self.b {
            f(&format!("{}.b", self.name), b);
        }
    }
}

/// Tape-bound dense layer.
#[derive(Clone, Copy, Debug)]
pub struct DenseNodes {
    w: NodeId,
    b: Option<NodeId>,
    activation: Activation,
}

impl DenseNodes {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let mut z = tape.matvec(self.w, x)?;
        if let Some(b) = self.b {
            z = tape.add(z, b)?;
        }
        self.activation.apply(tape, z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Feedforward,
    Cosine,
}

/// Similarity between a query and a key. The feedforward form carries its
/// two matrices; cosine is parameter-free.
#[derive(Clone, Debug)]
pub enum ScoreParams {
    Feedforward { z_a: Tensor, w_a: Tensor },
    Cosine,
}

#[derive(Clone, Debug)]
pub struct AttentionSpec {
    pub name: String,
    pub score: ScoreParams,
}

impl AttentionSpec {
    /// Feedforward score z_a . tanh(w_a [q, k]) with hidden width `hidden`.
    pub fn feedforward<R: Rng>(
        name: impl Into<String>,
        q_dim: usize,
        k_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        AttentionSpec {
            name: name.into(),
            score: ScoreParams::Feedforward {
                z_a: init_matrix(rng, 1, hidden),
                w_a: init_matrix(rng, hidden, q_dim + k_dim),
            },
        }
    }

    pub fn cosine(name: impl Into<String>) -> Self {
        AttentionSpec {
            name: name.into(),
            score: ScoreParams::Cosine,
        }
    }

    pub fn kind(&self) -> ScoreKind {
        match self.score {
            ScoreParams::Feedforward { .. } => ScoreKind::Feedforward,
            ScoreParams::Cosine => ScoreKind::Cosine,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<AttentionNodes> {
        let score = match &self.score {
            ScoreParams::Feedforward { z_a, w_a } => ScoreNodes::Feedforward {
                z_a: tape.param(&format!("{}.z_a", self.name), z_a.clone())?,
                w_a: tape.param(&format!("{}.w_a", self.name), w_a.clone())?,
            },
            ScoreParams::Cosine => ScoreNodes::Cosine,
        };
        Ok(AttentionNodes { score })
    }
}

impl Parameterized for AttentionSpec {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        if let ScoreParams::Feedforward { z_a, w_a } = &self.score {
            f(&format!("{}.z_a", self.name), z_a);
            f(&format!("{}.w_a", self.name), w_a);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let ScoreParams::Feedforward { z_a, w_a } = &mut self.score {
            f(&format!("{}.z_a", self.name), z_a);
            f(&format!("{}.w_a", self.name), w_a);
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum ScoreNodes {
    Feedforward { z_a: NodeId, w_a: NodeId },
    Cosine,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionNodes {
    score: ScoreNodes,
}

impl AttentionNodes {
    /// Scalar alignment score between query and key.
    pub fn score(&self, tape: &mut Tape, q: NodeId, k: NodeId) -> Result<NodeId> {
        match self.score {
            ScoreNodes::Feedforward { z_a, w_a } => {
                let qk = tape.concat(&[q, k])?;
                let hidden = tape.matvec(w_a, qk)?;
                let act = tape.tanh(hidden)?;
                tape.matvec(z_a, act)
            }
            ScoreNodes::Cosine => tape.cosine(q, k),
        }
    }

    /// Softmax-weighted convex combination of the values. Returns the context
    /// node and the weight-vector node.
    pub fn attention(
        &self,
        tape: &mut Tape,
        q: NodeId,
        keys: &[NodeId],
        values: &[NodeId],
    ) -> Result<(NodeId, NodeId)> {
        if keys.is_empty() {
            return Err(Error::Contract("attention over an empty key set".into()));
        }
        if keys.len() != values.len() {
            return Err(Error::Contract(format!(
                "attention requires |keys| == |values|, got {} vs {}",
                keys.len(),
                values.len()
            )));
        }
        let mut scores = Vec::with_capacity(keys.len());
        for k in keys {
            scores.push(self.score(tape, q, *k)?);
        }
        let stacked = tape.concat(&scores)?;
        let weights = tape.softmax(stacked)?;
        let mut context = None;
        for (i, v) in values.iter().enumerate() {
            let wi = tape.slice(weights, i, 1)?;
            let term = tape.mul(wi, *v)?;
            context = Some(match context {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        Ok((context.expect("nonempty values"), weights))
    }

    /// Attention at every position of a sequence with query, keys and values
    /// all drawn from the sequence itself.
    pub fn self_attention(&self, tape: &mut Tape, sequence: &[NodeId]) -> Result<Vec<NodeId>> {
        if sequence.is_empty() {
            return Err(Error::Contract("self-attention over empty sequence".into()));
        }
        let mut out = Vec::with_capacity(sequence.len());
        for q in sequence {
            let (ctx, _) = self.attention(tape, *q, sequence, sequence)?;
            out.push(ctx);
        }
        Ok(out)
    }
}

/// Convex branch a*y + (1-a)*z; the gate is a scalar node, contractually in
/// [0, 1] (produced by a sigmoid). Both arms always evaluate.
pub fn diff_branch(tape: &mut Tape, gate: NodeId, on: NodeId, off: NodeId) -> Result<NodeId> {
    tape.branch_mix(gate, on, off)
}
