//! The end-to-end classifier: segments → nodes → graph attention → dense head.

pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{GraphAttention, GraphConfig, GraphDump, GraphTrace};
use crate::nodegen::{vif, NodeGenerator, SpatialConfig, TemporalConfig};
use crate::params::{Bound, Dense, ParamStore};
use crate::signal::NUM_CLASSES;

/// Probability floor inside the cross-entropy logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Node embeddings concatenated in provenance order.
    Flatten,
    MeanPool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub epoch_len: usize,
    pub s_count: usize,
    pub l_max: usize,
    pub spatial: SpatialConfig,
    pub temporal: TemporalConfig,
    pub graph: GraphConfig,
    pub classifier_hidden: usize,
    pub readout: Readout,
    /// Dropout on node embeddings and inside the classifier.
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            epoch_len: crate::signal::DEFAULT_EPOCH_LEN,
            s_count: 5,
            l_max: 2,
            spatial: SpatialConfig::default(),
            temporal: TemporalConfig::default(),
            graph: GraphConfig::default(),
            classifier_hidden: 128,
            readout: Readout::Flatten,
            dropout_p: 0.5,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks: 40-sample epochs,
    /// 4 segments, one temporal level, 6 features per node, 2 heads.
    pub fn tiny() -> Self {
        Self {
            epoch_len: 40,
            s_count: 4,
            l_max: 1,
            spatial: SpatialConfig { conv_b_channels: 3, ..SpatialConfig::tiny() },
            temporal: TemporalConfig::default(),
            graph: GraphConfig { heads: 2, out_dim: 4, ..GraphConfig::default() },
            classifier_hidden: 8,
            readout: Readout::Flatten,
            dropout_p: 0.5,
        }
    }

    pub fn segment_len(&self) -> usize {
        self.epoch_len / self.s_count.max(1)
    }

    pub fn node_count(&self) -> usize {
        crate::nodegen::node_count(self.s_count, self.l_max)
    }

    /// Features per node.
    pub fn features(&self) -> Result<usize> {
        self.spatial.out_dim(self.segment_len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epoch_len == 0 {
            return Err(Error::config("model.epoch_len", "must be >= 1"));
        }
        if self.s_count == 0 || !self.epoch_len.is_multiple_of(self.s_count) {
            return Err(Error::config(
                "model.s_count",
                format!("{} does not divide epoch_len {}", self.s_count, self.epoch_len),
            ));
        }
        if self.temporal.kernel == 0 {
            return Err(Error::config("model.temporal.kernel", "must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.temporal.dropout) {
            return Err(Error::config("model.temporal.dropout", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config("model.dropout_p", "must be in [0, 1)"));
        }
        if self.classifier_hidden == 0 {
            return Err(Error::config("model.classifier_hidden", "must be >= 1"));
        }
        self.spatial.lengths(self.segment_len()).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::config("model.spatial", m),
            other => other,
        })?;
        self.graph.validate()
    }
}

/// One loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vif: f64,
    pub ce: f64,
    pub total: f64,
}

/// Loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub vif: Var,
    pub ce: Var,
    pub total: Var,
    pub probs: Var,
}

impl LossVars {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            vif: tape.value(self.vif).item(),
            ce: tape.value(self.ce).item(),
            total: tape.value(self.total).item(),
        }
    }
}

/// Result of a batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchForward {
    /// `[B, 5]` class probabilities.
    pub probs: Var,
    /// Node matrices `[n, F]`, one per epoch.
    pub nodes: Vec<Var>,
    pub graphs: Vec<GraphTrace>,
}

#[derive(Clone, Debug)]
pub struct PearNetModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub nodegen: NodeGenerator,
    pub graph: GraphAttention,
    pub fc1: Dense,
    pub fc2: Dense,
}

impl PearNetModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let nodegen = NodeGenerator::new(
            &mut store,
            &mut rng,
            &config.spatial,
            &config.temporal,
            config.epoch_len,
            config.s_count,
            config.l_max,
        )?;
        let graph = GraphAttention::new(&mut store, &mut rng, &config.graph, nodegen.features())?;
        let width = match config.readout {
            Readout::Flatten => config.node_count() * graph.merged_width(),
            Readout::MeanPool => graph.merged_width(),
        };
        let fc1 = Dense::new(&mut store, &mut rng, "classifier.fc1", width, config.classifier_hidden);
        let fc2 = Dense::new(&mut store, &mut rng, "classifier.fc2", config.classifier_hidden, NUM_CLASSES);
        Ok(Self { config, store, nodegen, graph, fc1, fc2 })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn classify<R: Rng + ?Sized>(&self, tape: &mut Tape, p: &Bound, emb: Var, train: bool, rng: &mut R) -> Result<Var> {
        let x = tape.dropout(emb, self.config.dropout_p, train, rng)?;
        let x = match self.config.readout {
            Readout::Flatten => {
                let n = tape.value(x).len();
                tape.reshape(x, &[1, n])?
            }
            Readout::MeanPool => {
                let m = tape.mean_axis(x, 0)?;
                let w = tape.value(m).len();
                tape.reshape(m, &[1, w])?
            }
        };
        let x = self.fc1.forward(tape, p, x)?;
        let x = tape.relu(x);
        let x = tape.dropout(x, self.config.dropout_p, train, rng)?;
        let x = self.fc2.forward(tape, p, x)?;
        tape.softmax(x, 1)
    }

    /// Forward a batch of epochs with parameters already bound to `tape`.
    pub fn forward_batch<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        samples: &[&[f64]],
        train: bool,
        rng: &mut R,
    ) -> Result<BatchForward> {
        if samples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut rows = Vec::with_capacity(samples.len());
        let mut nodes = Vec::with_capacity(samples.len());
        let mut graphs = Vec::with_capacity(samples.len());
        for s in samples {
            let v = self.nodegen.forward(tape, p, s, train, rng)?;
            let g = self.graph.forward(tape, p, v)?;
            rows.push(self.classify(tape, p, g.output, train, rng)?);
            nodes.push(v);
            graphs.push(g);
        }
        let probs = if rows.len() == 1 { rows[0] } else { tape.concat(&rows, 0)? };
        Ok(BatchForward { probs, nodes, graphs })
    }

    /// Eval-mode class probabilities, one row per epoch.
    pub fn predict(&self, samples: &[&[f64]]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            let mut tape = Tape::new();
            let p = self.store.bind(&mut tape);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let f = self.forward_batch(&mut tape, &p, &[s], false, &mut rng)?;
            let row = tape.value(f.probs).data();
            let mut probs = [0.0; NUM_CLASSES];
            probs.copy_from_slice(row);
            out.push(probs);
        }
        Ok(out)
    }

    /// Eval-mode graph snapshot for one epoch.
    pub fn graph_dump(&self, samples: &[f64]) -> Result<GraphDump> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = self.forward_batch(&mut tape, &p, &[samples], false, &mut rng)?;
        Ok(GraphDump::new(&tape, &f.graphs[0], &self.nodegen.provenance(), self.config.graph.mechanism))
    }

    /// Record the composite loss for a batch. When `vif_enabled` is false
    /// the VIF term is the constant 0.
    #[allow(clippy::too_many_arguments)]
    pub fn total_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        samples: &[&[f64]],
        labels: &[u8],
        weights: &[f64; NUM_CLASSES],
        vif_enabled: bool,
        train: bool,
        rng: &mut R,
    ) -> Result<LossVars> {
        if labels.len() != samples.len() {
            return Err(Error::invalid(format!("{} labels for {} epochs", labels.len(), samples.len())));
        }
        let f = self.forward_batch(tape, p, samples, train, rng)?;
        let ce = weighted_cross_entropy(tape, f.probs, labels, weights)?;
        let vif = if vif_enabled {
            let terms = f.nodes.iter().map(|&v| vif::vif_loss(tape, v)).collect::<Result<Vec<_>>>()?;
            let all = if terms.len() == 1 { terms[0] } else { tape.concat(&terms, 0)? };
            tape.mean(all)
        } else {
            tape.constant(Tensor::vector(vec![0.0]))
        };
        let total = tape.add(vif, ce)?;
        Ok(LossVars { vif, ce, total, probs: f.probs })
    }
}

fn check_labels(labels: &[u8]) -> Result<()> {
    match labels.iter().position(|&y| y as usize >= NUM_CLASSES) {
        Some(i) => Err(Error::invalid(format!("label {} at position {i} is outside 0..=4", labels[i]))),
        None => Ok(()),
    }
}

/// `-(1/B) Σ_i ω_{y_i} log max(p_i[y_i], 1e-12)` on the tape.
pub fn weighted_cross_entropy(tape: &mut Tape, probs: Var, labels: &[u8], weights: &[f64; NUM_CLASSES]) -> Result<Var> {
    check_labels(labels)?;
    let (b, c) = tape.value(probs).dims2()?;
    if b != labels.len() || c != NUM_CLASSES {
        return Err(Error::invalid(format!("predictions {b}x{c} do not match {} labels", labels.len())));
    }
    let picked = tape.gather(probs, labels.iter().enumerate().map(|(i, &y)| i * c + y as usize).collect(), &[b])?;
    let logs = tape.log_clamped(picked, LOG_FLOOR);
    let w = tape.constant(Tensor::vector(labels.iter().map(|&y| weights[y as usize]).collect()));
    let weighted = tape.mul(logs, w)?;
    let s = tape.sum(weighted);
    Ok(tape.scale(s, -1.0 / b as f64))
}

/// Value-only form of [`weighted_cross_entropy`].
pub fn weighted_cross_entropy_value(probs: &Tensor, labels: &[u8], weights: &[f64; NUM_CLASSES]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let l = weighted_cross_entropy(&mut tape, p, labels, weights)?;
    Ok(tape.value(l).item())
}

/// Inverse class frequency, scaled so the present classes average 1.
/// Absent classes get weight 0.
pub fn class_weights(labels: &[u8]) -> Result<[f64; NUM_CLASSES]> {
    check_labels(labels)?;
    if labels.is_empty() {
        return Err(Error::invalid("cannot derive class weights from no labels"));
    }
    let mut counts = [0usize; NUM_CLASSES];
    for &y in labels {
        counts[y as usize] += 1;
    }
    let mut w = [0.0; NUM_CLASSES];
    for k in 0..NUM_CLASSES {
        if counts[k] > 0 {
            w[k] = 1.0 / counts[k] as f64;
        }
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let mean = w.iter().sum::<f64>() / present;
    for v in &mut w {
        *v /= mean;
    }
    Ok(w)
}
