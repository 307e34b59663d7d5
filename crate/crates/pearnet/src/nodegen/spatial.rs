//! Per-segment spatial feature extractor with a residual squeeze-and-excitation block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Padding, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Conv, Dense, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialConfig {
    pub conv_a_kernel: usize,
    pub conv_a_stride: usize,
    pub conv_a_channels: usize,
    pub pool_a: usize,
    pub conv_b_kernel: usize,
    pub conv_b_channels: usize,
    pub pool_b: usize,
    pub se_kernel: usize,
    pub se_reduction: usize,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            conv_a_kernel: 50,
            conv_a_stride: 6,
            conv_a_channels: 32,
            pool_a: 8,
            conv_b_kernel: 8,
            conv_b_channels: 32,
            pool_b: 4,
            se_kernel: 3,
            se_reduction: 4,
        }
    }
}

impl SpatialConfig {
    /// Small stack used by tests and the gradient check.
    pub fn tiny() -> Self {
        Self {
            conv_a_kernel: 3,
            conv_a_stride: 1,
            conv_a_channels: 2,
            pool_a: 2,
            conv_b_kernel: 3,
            conv_b_channels: 2,
            pool_b: 2,
            se_kernel: 3,
            se_reduction: 2,
        }
    }

    /// `(L after conv_a, after pool_a, after pool_b)` for a segment length.
    pub fn lengths(&self, segment_len: usize) -> Result<(usize, usize, usize)> {
        let fields = [
            ("conv_a_kernel", self.conv_a_kernel),
            ("conv_a_stride", self.conv_a_stride),
            ("conv_a_channels", self.conv_a_channels),
            ("pool_a", self.pool_a),
            ("conv_b_kernel", self.conv_b_kernel),
            ("conv_b_channels", self.conv_b_channels),
            ("pool_b", self.pool_b),
            ("se_kernel", self.se_kernel),
            ("se_reduction", self.se_reduction),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("model.spatial.{name}"), "must be >= 1"));
        }
        let too_short = |stage: &str| {
            Err(Error::invalid(format!(
                "segment length {segment_len} is too short for the spatial stack ({stage} output would be empty)"
            )))
        };
        if segment_len < self.conv_a_kernel {
            return too_short("conv_a");
        }
        let l1 = (segment_len - self.conv_a_kernel) / self.conv_a_stride + 1;
        let l2 = l1 / self.pool_a;
        if l2 == 0 {
            return too_short("pool_a");
        }
        let l3 = l2 / self.pool_b;
        if l3 == 0 {
            return too_short("pool_b");
        }
        Ok((l1, l2, l3))
    }

    /// Features per node for a segment length.
    pub fn out_dim(&self, segment_len: usize) -> Result<usize> {
        Ok(self.conv_b_channels * self.lengths(segment_len)?.2)
    }
}

/// Squeeze-and-excitation gate with a residual shortcut.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    pub fc1: Dense,
    pub fc2: Dense,
    pub channels: usize,
}

/// Intermediate values of one SE pass, kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct SeTrace {
    pub recalibrated: Var,
    pub gate: Var,
    pub output: Var,
}

impl SeBlock {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &SpatialConfig) -> Self {
        let c = cfg.conv_b_channels;
        let hidden = (c / cfg.se_reduction).max(1);
        let conv = |store: &mut ParamStore, rng: &mut R, name| {
            Conv::new(store, rng, name, c, c, cfg.se_kernel, 1, 1, Padding::Symmetric)
        };
        Self {
            conv1: conv(store, rng, "spatial.se.conv1"),
            conv2: conv(store, rng, "spatial.se.conv2"),
            fc1: Dense::new(store, rng, "spatial.se.fc1", c, hidden),
            fc2: Dense::new(store, rng, "spatial.se.fc2", hidden, c),
            channels: c,
        }
    }

    /// `phi [C, L]` → `ReLU(phi + phi' ⊗ ψ)`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, phi: Var) -> Result<SeTrace> {
        let c = self.channels;
        let x = self.conv1.forward(tape, p, phi)?;
        let recalibrated = self.conv2.forward(tape, p, x)?;
        let squeezed = tape.adaptive_avgpool1d(recalibrated, 1)?;
        let squeezed = tape.reshape(squeezed, &[1, c])?;
        let h = self.fc1.forward(tape, p, squeezed)?;
        let h = tape.relu(h);
        let h = self.fc2.forward(tape, p, h)?;
        let gate = tape.sigmoid(h);
        let gate_col = tape.reshape(gate, &[c, 1])?;
        let scaled = tape.mul(recalibrated, gate_col)?;
        let sum = tape.add(phi, scaled)?;
        let output = tape.relu(sum);
        Ok(SeTrace { recalibrated, gate, output })
    }
}

/// conv_a → maxpool → conv_b1 → conv_b2 → maxpool → residual SE.
#[derive(Clone, Debug)]
pub struct SpatialConvStack {
    pub conv_a: Conv,
    pub pool_a: usize,
    pub conv_b1: Conv,
    pub conv_b2: Conv,
    pub pool_b: usize,
    pub se: SeBlock,
    pub segment_len: usize,
    pub out_dim: usize,
}

impl SpatialConvStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        cfg: &SpatialConfig,
        segment_len: usize,
    ) -> Result<Self> {
        let out_dim = cfg.out_dim(segment_len)?;
        let conv_a = Conv::new(
            store,
            rng,
            "spatial.conv_a",
            1,
            cfg.conv_a_channels,
            cfg.conv_a_kernel,
            cfg.conv_a_stride,
            1,
            Padding::None,
        );
        let (ca, cb, kb) = (cfg.conv_a_channels, cfg.conv_b_channels, cfg.conv_b_kernel);
        let conv_b1 = Conv::new(store, rng, "spatial.conv_b1", ca, cb, kb, 1, 1, Padding::Symmetric);
        let conv_b2 = Conv::new(store, rng, "spatial.conv_b2", cb, cb, kb, 1, 1, Padding::Symmetric);
        let se = SeBlock::new(store, rng, cfg);
        Ok(Self { conv_a, pool_a: cfg.pool_a, conv_b1, conv_b2, pool_b: cfg.pool_b, se, segment_len, out_dim })
    }

    /// One segment `[1, M_seg]` → node feature row `[1, F]`.
    pub fn forward_segment(&self, tape: &mut Tape, p: &Bound, segment: Var) -> Result<Var> {
        if tape.shape(segment) != [1, self.segment_len] {
            return Err(Error::invalid(format!(
                "spatial stack expects a [1, {}] segment, got {:?}",
                self.segment_len,
                tape.shape(segment)
            )));
        }
        let x = self.conv_a.forward(tape, p, segment)?;
        let x = tape.maxpool1d(x, self.pool_a)?;
        let x = self.conv_b1.forward(tape, p, x)?;
        let x = self.conv_b2.forward(tape, p, x)?;
        let phi = tape.maxpool1d(x, self.pool_b)?;
        let se = self.se.forward(tape, p, phi)?;
        tape.reshape(se.output, &[1, self.out_dim])
    }

    /// Segments `[S, M_seg]` → level-0 nodes `[S, F]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, segments: Var) -> Result<Var> {
        let s = tape.shape(segments)[0];
        let rows = (0..s)
            .map(|i| {
                let seg = tape.select_rows(segments, &[i])?;
                self.forward_segment(tape, p, seg)
            })
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&rows, 0)
    }
}
