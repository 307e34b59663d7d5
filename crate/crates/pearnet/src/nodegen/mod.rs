//! Graph node generation.
//!
//! An epoch is cut into `S` base segments. Each segment goes through the
//! spatial stack to give the level-0 nodes; level `l` nodes come from a
//! dilated causal block (dilation `2^(l-1)`) applied over the segment axis
//! to the level `l-1` nodes. The union of all levels is the node set, so
//! there are `S × (L_max + 1)` nodes in fixed level-major order.

pub mod spatial;
pub mod temporal;
pub mod vif;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use spatial::{SeBlock, SpatialConfig, SpatialConvStack};
pub use temporal::{level_dilation, TemporalConfig, TemporalConvStack};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::signal::segment;

/// Where a node came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub level: usize,
    pub segment: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    pub features: Tensor,
    pub provenance: Vec<NodeInfo>,
}

impl NodeSet {
    pub fn node_count(&self) -> usize {
        self.provenance.len()
    }
}

pub fn node_count(s_count: usize, l_max: usize) -> usize {
    s_count * (l_max + 1)
}

pub fn provenance(s_count: usize, l_max: usize) -> Vec<NodeInfo> {
    (0..=l_max).flat_map(|level| (0..s_count).map(move |segment| NodeInfo { level, segment })).collect()
}

#[derive(Clone, Debug)]
pub struct NodeGenerator {
    pub spatial: SpatialConvStack,
    pub temporal: TemporalConvStack,
    pub s_count: usize,
    pub epoch_len: usize,
}

impl NodeGenerator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        spatial: &SpatialConfig,
        temporal: &TemporalConfig,
        epoch_len: usize,
        s_count: usize,
        l_max: usize,
    ) -> Result<Self> {
        if s_count == 0 || !epoch_len.is_multiple_of(s_count) {
            return Err(Error::config(
                "model.s_count",
                format!("{s_count} segments do not divide epoch_len {epoch_len}"),
            ));
        }
        let spatial = SpatialConvStack::new(store, rng, spatial, epoch_len / s_count)?;
        let temporal = TemporalConvStack::new(store, rng, temporal, spatial.out_dim, l_max)?;
        Ok(Self { spatial, temporal, s_count, epoch_len })
    }

    pub fn l_max(&self) -> usize {
        self.temporal.l_max()
    }

    pub fn features(&self) -> usize {
        self.spatial.out_dim
    }

    pub fn node_count(&self) -> usize {
        node_count(self.s_count, self.l_max())
    }

    pub fn provenance(&self) -> Vec<NodeInfo> {
        provenance(self.s_count, self.l_max())
    }

    /// Per-level node matrices `[S, F]`, level 0 first.
    pub fn forward_levels<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        samples: &[f64],
        train: bool,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        if samples.len() != self.epoch_len {
            return Err(Error::invalid(format!(
                "epoch has {} samples, model expects {}",
                samples.len(),
                self.epoch_len
            )));
        }
        let batch = segment(samples, self.s_count)?;
        let segs = tape.constant(batch.segments);
        let mut levels = vec![self.spatial.forward(tape, p, segs)?];
        for level in 1..=self.l_max() {
            let prev = *levels.last().unwrap();
            levels.push(self.temporal.forward(tape, p, prev, level, train, rng)?);
        }
        Ok(levels)
    }

    /// All nodes `[S·(L_max+1), F]`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        samples: &[f64],
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let levels = self.forward_levels(tape, p, samples, train, rng)?;
        if levels.len() == 1 {
            return Ok(levels[0]);
        }
        tape.concat(&levels, 0)
    }

    /// Evaluation-mode node set for one epoch.
    pub fn generate_nodes(&self, store: &ParamStore, samples: &[f64]) -> Result<NodeSet> {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let v = self.forward(&mut tape, &p, samples, false, &mut rng)?;
        Ok(NodeSet { features: tape.value(v).clone(), provenance: self.provenance() })
    }
}
