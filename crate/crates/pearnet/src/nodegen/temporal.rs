//! Hierarchical dilated causal convolution over the segment axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Padding, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Conv, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalConfig {
    pub kernel: usize,
    /// Dropout inside each dilated block, between the ReLU and the residual sum.
    pub dropout: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self { kernel: 2, dropout: 0.0 }
    }
}

/// One dilated causal block: conv → ReLU → dropout, plus a 1×1 residual projection.
#[derive(Clone, Debug)]
pub struct TemporalLevel {
    pub conv: Conv,
    pub residual: Conv,
    pub dilation: usize,
}

#[derive(Clone, Debug)]
pub struct TemporalConvStack {
    pub levels: Vec<TemporalLevel>,
    pub features: usize,
    pub dropout: f64,
}

/// Dilation used at hierarchy level `level >= 1`.
pub fn level_dilation(level: usize) -> usize {
    1 << (level - 1)
}

impl TemporalConvStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &TemporalConfig,
        features: usize,
        l_max: usize,
    ) -> Result<Self> {
        if cfg.kernel == 0 {
            return Err(Error::config("model.temporal.kernel", "must be >= 1"));
        }
        let levels = (1..=l_max)
            .map(|level| {
                let dilation = level_dilation(level);
                let conv = Conv::new(
                    store,
                    rng,
                    &format!("temporal.level{level}.conv"),
                    features,
                    features,
                    cfg.kernel,
                    1,
                    dilation,
                    Padding::CausalLeft,
                );
                let residual = Conv::new(
                    store,
                    rng,
                    &format!("temporal.level{level}.residual"),
                    features,
                    features,
                    1,
                    1,
                    1,
                    Padding::None,
                );
                TemporalLevel { conv, residual, dilation }
            })
            .collect();
        Ok(Self { levels, features, dropout: cfg.dropout })
    }

    pub fn l_max(&self) -> usize {
        self.levels.len()
    }

    /// Level input nodes `[S, F]` → level nodes `[S, F]`. Position `s` of
    /// the output depends only on input positions `<= s`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        p: &Bound,
        level_input: Var,
        level: usize,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if level == 0 || level > self.levels.len() {
            return Err(Error::invalid(format!("temporal level {level} outside 1..={}", self.levels.len())));
        }
        let block = &self.levels[level - 1];
        let seq = tape.transpose(level_input)?;
        let y = block.conv.forward(tape, p, seq)?;
        let y = tape.relu(y);
        let y = tape.dropout(y, self.dropout, train, rng)?;
        let r = block.residual.forward(tape, p, seq)?;
        let out = tape.add(y, r)?;
        tape.transpose(out)
    }
}
