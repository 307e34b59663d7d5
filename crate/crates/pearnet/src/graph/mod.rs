//! Graph attention over the generated nodes.
//!
//! Each head projects the nodes with its own `W`, scores every node pair
//! (absolute Pearson correlation, cosine similarity or a single-layer
//! feed-forward score), derives a non-negative adjacency from the scores,
//! and aggregates the projected nodes with a softmax restricted to each
//! node's neighbourhood plus itself.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nodegen::vif::{correlation, cosine_similarity};
use crate::nodegen::NodeInfo;
use crate::params::{Bound, ParamId, ParamStore};

/// Floor for the row std (pearson) or norm (cosine) of projected nodes.
pub const ATTENTION_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Pearson,
    Cosine,
    GatFf,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::GatFf, Mechanism::Cosine, Mechanism::Pearson];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Pearson => "pearson",
            Mechanism::Cosine => "cosine",
            Mechanism::GatFf => "gat_ff",
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMerge {
    Concat,
    Average,
}

/// How the adjacency MLP starts out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyInit {
    Zero,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub mechanism: Mechanism,
    pub heads: usize,
    pub out_dim: usize,
    pub head_merge: HeadMerge,
    pub adjacency_hidden: usize,
    pub adjacency_init: AdjacencyInit,
    pub leaky_slope: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            mechanism: Mechanism::Pearson,
            heads: 3,
            out_dim: 16,
            head_merge: HeadMerge::Concat,
            adjacency_hidden: 16,
            adjacency_init: AdjacencyInit::Zero,
            leaky_slope: 0.2,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::config("model.graph.heads", "must be >= 1"));
        }
        if self.out_dim == 0 {
            return Err(Error::config("model.graph.out_dim", "must be >= 1"));
        }
        if self.adjacency_hidden == 0 {
            return Err(Error::config("model.graph.adjacency_hidden", "must be >= 1"));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::config("model.graph.leaky_slope", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Width of each node embedding after merging heads.
    pub fn merged_width(&self) -> usize {
        match self.head_merge {
            HeadMerge::Concat => self.heads * self.out_dim,
            HeadMerge::Average => self.out_dim,
        }
    }
}

/// Learned non-negative adjacency and its edge set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    pub a: Tensor,
    pub edges: Vec<(usize, usize)>,
}

impl Adjacency {
    pub fn node_count(&self) -> usize {
        self.a.shape()[0]
    }

    /// Softmax support: learned edges plus every self-loop.
    pub fn neighbourhood_mask(&self) -> Vec<bool> {
        let n = self.node_count();
        (0..n * n).map(|k| k / n == k % n || self.a.data()[k] > 0.0).collect()
    }
}

/// `ReLU(x + w2ᵀ ReLU(w1 x))` for one scalar score.
pub fn adjacency_entry(x: f64, w1: &[f64], w2: &[f64]) -> f64 {
    let inner: f64 = w1.iter().zip(w2).map(|(a, b)| b * (a * x).max(0.0)).sum();
    (x + inner).max(0.0)
}

/// Apply the scalar adjacency MLP to every coefficient; edges are the
/// strictly positive entries.
pub fn learn_adjacency(e: &Tensor, w1: &[f64], w2: &[f64]) -> Result<Adjacency> {
    let (n, m) = e.dims2()?;
    if n != m {
        return Err(Error::invalid(format!("coefficient matrix must be square, got {n}x{m}")));
    }
    if w1.len() != w2.len() {
        return Err(Error::invalid("adjacency MLP layers disagree on hidden width"));
    }
    let data: Vec<f64> = e.data().iter().map(|&x| adjacency_entry(x, w1, w2)).collect();
    let edges = (0..n * n).filter(|&k| data[k] > 0.0).map(|k| (k / n, k % n)).collect();
    Ok(Adjacency { a: Tensor::new(vec![n, n], data)?, edges })
}

/// Row softmax of `e` over each node's neighbourhood and itself.
pub fn normalize_attention(tape: &mut Tape, e: Var, adjacency: &Adjacency) -> Result<Var> {
    tape.masked_softmax_rows(e, adjacency.neighbourhood_mask())
}

/// `h'_i = Σ_j α_ij · (W h)_j`.
pub fn aggregate(tape: &mut Tape, alpha: Var, wh: Var) -> Result<Var> {
    tape.matmul(alpha, wh)
}

/// Parameters of one attention head.
#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub mechanism: Mechanism,
    pub leaky_slope: f64,
    /// `[F, F']`, applied as `h · W`.
    pub w: ParamId,
    /// Scale for pearson and cosine scores.
    pub beta: Option<ParamId>,
    /// Feed-forward score vector split into the `i` and `j` halves, `[F', 1]` each.
    pub ff: Option<(ParamId, ParamId)>,
    /// Adjacency MLP `[1, H]` and `[H, 1]`, no biases.
    pub mlp_w1: ParamId,
    pub mlp_w2: ParamId,
}

/// Values from one head's forward pass.
#[derive(Clone, Debug)]
pub struct HeadTrace {
    pub wh: Var,
    pub e: Var,
    pub adjacency: Adjacency,
    pub alpha: Var,
    pub output: Var,
}

impl AttentionHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cfg: &GraphConfig,
        features: usize,
    ) -> Self {
        let fo = cfg.out_dim;
        let w = store.add_uniform(format!("{name}.w"), &[features, fo], features, rng);
        let (beta, ff) = match cfg.mechanism {
            Mechanism::Pearson | Mechanism::Cosine => {
                (Some(store.add(format!("{name}.beta"), Tensor::vector(vec![1.0]))), None)
            }
            Mechanism::GatFf => {
                let a1 = store.add_uniform(format!("{name}.a_src"), &[fo, 1], 2 * fo, rng);
                let a2 = store.add_uniform(format!("{name}.a_dst"), &[fo, 1], 2 * fo, rng);
                (None, Some((a1, a2)))
            }
        };
        let h = cfg.adjacency_hidden;
        let (mlp_w1, mlp_w2) = match cfg.adjacency_init {
            AdjacencyInit::Zero => (
                store.add(format!("{name}.adj_w1"), Tensor::zeros(&[1, h])),
                store.add(format!("{name}.adj_w2"), Tensor::zeros(&[h, 1])),
            ),
            AdjacencyInit::Uniform => (
                store.add_uniform(format!("{name}.adj_w1"), &[1, h], 1, rng),
                store.add_uniform(format!("{name}.adj_w2"), &[h, 1], h, rng),
            ),
        };
        Self { mechanism: cfg.mechanism, leaky_slope: cfg.leaky_slope, w, beta, ff, mlp_w1, mlp_w2 }
    }

    /// Pairwise scores `e [n, n]` from projected nodes `wh [n, F']`.
    pub fn coefficients(&self, tape: &mut Tape, p: &Bound, wh: Var) -> Result<Var> {
        match self.mechanism {
            Mechanism::Pearson | Mechanism::Cosine => {
                let sim = if self.mechanism == Mechanism::Pearson {
                    let c = correlation(tape, wh, ATTENTION_FLOOR)?;
                    tape.abs(c)
                } else {
                    cosine_similarity(tape, wh, ATTENTION_FLOOR)?
                };
                let beta = p.var(self.beta.expect("similarity heads carry beta"));
                tape.mul(sim, beta)
            }
            Mechanism::GatFf => {
                let (a1, a2) = self.ff.expect("feed-forward heads carry a score vector");
                let src = tape.matmul(wh, p.var(a1))?;
                let dst = tape.matmul(wh, p.var(a2))?;
                let dst = tape.transpose(dst)?;
                let s = tape.add(src, dst)?;
                Ok(tape.leaky_relu(s, self.leaky_slope))
            }
        }
    }

    pub fn adjacency(&self, tape: &Tape, p: &Bound, e: Var) -> Result<Adjacency> {
        let w1 = tape.value(p.var(self.mlp_w1)).data().to_vec();
        let w2 = tape.value(p.var(self.mlp_w2)).data().to_vec();
        learn_adjacency(tape.value(e), &w1, &w2)
    }

    /// Nodes `h [n, F]` → head output `[n, F']`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, h: Var) -> Result<HeadTrace> {
        let wh = tape.matmul(h, p.var(self.w))?;
        let e = self.coefficients(tape, p, wh)?;
        let adjacency = self.adjacency(tape, p, e)?;
        let alpha = normalize_attention(tape, e, &adjacency)?;
        let output = aggregate(tape, alpha, wh)?;
        Ok(HeadTrace { wh, e, adjacency, alpha, output })
    }
}

#[derive(Clone, Debug)]
pub struct GraphAttention {
    pub heads: Vec<AttentionHead>,
    pub merge: HeadMerge,
    pub out_dim: usize,
}

#[derive(Clone, Debug)]
pub struct GraphTrace {
    pub heads: Vec<HeadTrace>,
    pub output: Var,
}

impl GraphAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &GraphConfig,
        features: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let heads =
            (0..cfg.heads).map(|k| AttentionHead::new(store, rng, &format!("graph.head{k}"), cfg, features)).collect();
        Ok(Self { heads, merge: cfg.head_merge, out_dim: cfg.out_dim })
    }

    pub fn merged_width(&self) -> usize {
        match self.merge {
            HeadMerge::Concat => self.heads.len() * self.out_dim,
            HeadMerge::Average => self.out_dim,
        }
    }

    /// Nodes `[n, F]` → merged embeddings `[n, width]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, h: Var) -> Result<GraphTrace> {
        let heads = self.heads.iter().map(|head| head.forward(tape, p, h)).collect::<Result<Vec<_>>>()?;
        let outs: Vec<Var> = heads.iter().map(|t| t.output).collect();
        let output = if outs.len() == 1 {
            outs[0]
        } else {
            match self.merge {
                HeadMerge::Concat => tape.concat(&outs, 1)?,
                HeadMerge::Average => {
                    let mut acc = outs[0];
                    for &o in &outs[1..] {
                        acc = tape.add(acc, o)?;
                    }
                    tape.scale(acc, 1.0 / outs.len() as f64)
                }
            }
        };
        Ok(GraphTrace { heads, output })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub level: usize,
    pub segment: usize,
}

/// Plot-ready snapshot of the learned graph for one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub mechanism: Mechanism,
    pub nodes: Vec<NodeRecord>,
    /// Adjacency of the first head.
    pub adjacency: Vec<Vec<f64>>,
    pub adjacency_per_head: Vec<Vec<Vec<f64>>>,
    pub alpha_per_head: Vec<Vec<Vec<f64>>>,
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let n = t.shape()[0];
    (0..n).map(|i| t.row(i).to_vec()).collect()
}

impl GraphDump {
    pub fn new(tape: &Tape, trace: &GraphTrace, provenance: &[NodeInfo], mechanism: Mechanism) -> Self {
        let nodes = provenance
            .iter()
            .enumerate()
            .map(|(id, info)| NodeRecord { id, level: info.level, segment: info.segment })
            .collect();
        let adjacency_per_head: Vec<_> = trace.heads.iter().map(|h| rows(&h.adjacency.a)).collect();
        Self {
            mechanism,
            nodes,
            adjacency: adjacency_per_head[0].clone(),
            alpha_per_head: trace.heads.iter().map(|h| rows(tape.value(h.alpha))).collect(),
            adjacency_per_head,
        }
    }
}
