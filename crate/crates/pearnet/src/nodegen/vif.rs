//! Pearson correlation between nodes and the variance-inflation decorrelation loss.
//!
//! For nodes `v_1..v_n` (rows of a feature matrix) the correlation matrix
//! `P` is computed over the feature dimension. The variance inflation factor
//! of node `i` is `M_ii / |P|`, where `M_ii` is the determinant of `P` with
//! row and column `i` removed. The loss squashes each factor with
//! `δ(v) = 1 / (1 + e^(1 - v))` (so `δ(1) = 0.5`) and pulls it towards 0.5
//! with a smooth L1 penalty.

use crate::diff::{linalg, sigmoid, smooth_l1, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;
pub const DET_FLOOR: f64 = 1e-12;
pub const VIF_CEILING: f64 = 1e6;
pub const VIF_TARGET: f64 = 0.5;
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// `1 / (1 + e^(-v + 1))`.
pub fn modified_sigmoid(v: f64) -> f64 {
    sigmoid(v - 1.0)
}

/// Row-wise Pearson correlation of `x [n, F]` recorded on the tape, with
/// each row's standard deviation floored at `std_floor`.
pub fn correlation(tape: &mut Tape, x: Var, std_floor: f64) -> Result<Var> {
    let f = tape.shape(x)[1] as f64;
    let mean = tape.mean_axis(x, 1)?;
    let centered = tape.sub(x, mean)?;
    let std = tape.std_axis(x, 1, std_floor)?;
    let z = tape.div(centered, std)?;
    let zt = tape.transpose(z)?;
    let gram = tape.matmul(z, zt)?;
    Ok(tape.scale(gram, 1.0 / f))
}

/// Cosine similarity between rows of `x [n, F]`, norms floored at `norm_floor`.
pub fn cosine_similarity(tape: &mut Tape, x: Var, norm_floor: f64) -> Result<Var> {
    let norm = tape.norm_axis(x, 1, norm_floor)?;
    let z = tape.div(x, norm)?;
    let zt = tape.transpose(z)?;
    tape.matmul(z, zt)
}

fn check_nodes(features: &Tensor) -> Result<()> {
    let (n, f) = features.dims2()?;
    if n < 1 || f < 2 {
        return Err(Error::invalid(format!("need node features of length >= 2, got {n}x{f}")));
    }
    for i in 0..n {
        let row = features.row(i);
        let mean = row.iter().sum::<f64>() / f as f64;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f as f64).sqrt();
        if std <= STD_FLOOR {
            return Err(Error::DegenerateNode { index: i, std, floor: STD_FLOOR });
        }
    }
    Ok(())
}

/// Pearson correlation matrix of node features `[n, F]`; errors on a node
/// whose standard deviation is at or below [`STD_FLOOR`].
pub fn pearson_matrix(features: &Tensor) -> Result<Tensor> {
    check_nodes(features)?;
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let p = correlation(&mut tape, x, STD_FLOOR)?;
    Ok(tape.value(p).clone())
}

fn minor(p: &Tensor, skip: usize) -> Vec<f64> {
    let n = p.shape()[0];
    let mut out = Vec::with_capacity((n - 1) * (n - 1));
    for r in (0..n).filter(|&r| r != skip) {
        for c in (0..n).filter(|&c| c != skip) {
            out.push(p.at2(r, c));
        }
    }
    out
}

/// `M_ii / |P|` for one node. Errors when `|P| <= DET_FLOOR`.
pub fn vif(p: &Tensor, i: usize) -> Result<f64> {
    let (n, m) = p.dims2()?;
    if n != m || i >= n {
        return Err(Error::invalid(format!("node {i} is not in a {n}x{m} correlation matrix")));
    }
    if n == 1 {
        return Ok(1.0);
    }
    let det = linalg::determinant(p.data(), n);
    if det <= DET_FLOOR {
        return Err(Error::NearSingular { det, floor: DET_FLOOR });
    }
    Ok(linalg::determinant(&minor(p, i), n - 1) / det)
}

pub fn vif_all(p: &Tensor) -> Result<Vec<f64>> {
    (0..p.shape()[0]).map(|i| vif(p, i)).collect()
}

/// Strict loss value: `mean_i smoothL1(δ(VIF_i) - 0.5)`.
pub fn vif_loss_value(features: &Tensor) -> Result<f64> {
    let p = pearson_matrix(features)?;
    let v = vif_all(&p)?;
    Ok(v.iter().map(|&x| smooth_l1(modified_sigmoid(x) - VIF_TARGET, SMOOTH_L1_BETA)).sum::<f64>() / v.len() as f64)
}

/// Differentiable loss on node features `[n, F]` as used in training.
///
/// Standard deviations are floored at [`STD_FLOOR`]. If `|P| <= DET_FLOOR`
/// every factor is set to [`VIF_CEILING`] (the limit as `P` turns
/// singular), otherwise each factor is capped at the ceiling. Gradients
/// flow through the determinants.
pub fn vif_loss(tape: &mut Tape, nodes: Var) -> Result<Var> {
    let n = tape.shape(nodes)[0];
    let p = correlation(tape, nodes, STD_FLOOR)?;
    let det = tape.determinant(p)?;
    let factors = if n == 1 {
        tape.constant(Tensor::vector(vec![1.0]))
    } else if tape.value(det).item() <= DET_FLOOR {
        tape.constant(Tensor::full(&[n], VIF_CEILING))
    } else {
        let minors = (0..n)
            .map(|i| {
                let m = tape.principal_minor(p, i)?;
                tape.determinant(m)
            })
            .collect::<Result<Vec<_>>>()?;
        let m = tape.concat(&minors, 0)?;
        let ratio = tape.div(m, det)?;
        tape.clamp_max(ratio, VIF_CEILING)
    };
    let shifted = tape.add_scalar(factors, -1.0);
    let squashed = tape.sigmoid(shifted);
    let diff = tape.add_scalar(squashed, -VIF_TARGET);
    let per_node = tape.smooth_l1(diff, SMOOTH_L1_BETA);
    Ok(tape.mean(per_node))
}
