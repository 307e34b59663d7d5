//! Reverse-mode differentiation tape.
//!
//! Every primitive appends one record holding its output value and the ids
//! of its inputs (plus whatever it needs for the backward pass). Records are
//! appended in evaluation order, so the tape is topologically sorted by
//! construction and a single reverse sweep yields all gradients.

use rand::Rng;

use super::linalg;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Zero-padding policy for [`Tape::conv1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// No padding.
    None,
    /// `(k - 1) * dilation` zeros on the left only. Output length equals
    /// input length (stride 1) and position `h` only sees inputs `<= h`.
    CausalLeft,
    /// `(k - 1) * dilation` zeros split between both sides, extra on the right.
    Symmetric,
}

impl Padding {
    fn split(self, span: usize) -> (usize, usize) {
        match self {
            Padding::None => (0, 0),
            Padding::CausalLeft => (span, 0),
            Padding::Symmetric => (span / 2, span - span / 2),
        }
    }
}

/// Geometry of a reduction along one axis: `outer × len × inner`.
#[derive(Clone, Copy, Debug)]
struct Axis {
    outer: usize,
    len: usize,
    inner: usize,
}

impl Axis {
    fn of(shape: &[usize], axis: usize) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::invalid(format!("axis {axis} out of range for shape {shape:?}")));
        }
        Ok(Axis { outer: shape[..axis].iter().product(), len: shape[axis], inner: shape[axis + 1..].iter().product() })
    }

    #[inline]
    fn at(&self, o: usize, k: usize, i: usize) -> usize {
        (o * self.len + k) * self.inner + i
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary { kind: Binary, a: Var, b: Var, map_a: Option<Vec<usize>>, map_b: Option<Vec<usize>> },
    Scale(Var, f64),
    AddScalar(Var),
    ClampMax(Var, f64),
    MatMul(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Log { x: Var, floor: f64 },
    Abs(Var),
    SmoothL1 { x: Var, beta: f64 },
    Softmax { x: Var, axis: Axis },
    MaskedSoftmax { x: Var, mask: Vec<bool>, cols: usize },
    Conv1d { input: Var, weight: Var, bias: Option<Var>, stride: usize, dilation: usize, pad_left: usize },
    MaxPool1d { input: Var, argmax: Vec<usize> },
    AdaptiveAvgPool1d { input: Var },
    Dropout { input: Var, mask: Vec<f64> },
    Determinant(Var),
    Sum(Var),
    Mean(Var),
    MeanAxis { x: Var, axis: Axis },
    StdAxis { x: Var, axis: Axis },
    NormAxis { x: Var, axis: Axis },
    Gather { x: Var, index: Vec<usize> },
    Concat { inputs: Vec<Var>, outer: usize, chunk: Vec<usize> },
    Reshape(Var),
}

#[derive(Debug)]
struct Record {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// Ordered record of primitive applications.
///
/// A tape is single-writer. Independent tapes share nothing and can be
/// driven from different threads.
#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.records[v.0].requires_grad);
        self.records.push(Record { value, requires_grad, grad: None, op });
        Var(self.records.len() - 1)
    }

    /// Leaf that is not differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.records.push(Record { value, requires_grad: false, grad: None, op: Op::Leaf });
        Var(self.records.len() - 1)
    }

    /// Leaf whose gradient is populated by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        let n = value.len();
        self.records.push(Record { value, requires_grad: true, grad: Some(vec![0.0; n]), op: Op::Leaf });
        Var(self.records.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.records[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.records[v.0].requires_grad
    }

    /// Gradient buffer, present iff the value requires a gradient.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let r = &self.records[v.0];
        r.grad.as_ref().map(|g| Tensor::new(r.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for r in &mut self.records {
            if let Some(g) = r.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    // ----- elementwise ---------------------------------------------------

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (out_shape, map_a, map_b) = if sa == sb {
            (sa, None, None)
        } else {
            let out = broadcast_shape(&sa, &sb)?;
            let ma = (sa != out).then(|| broadcast_map(&out, &sa));
            let mb = (sb != out).then(|| broadcast_map(&out, &sb));
            (out, ma, mb)
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let n: usize = out_shape.iter().product();
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<f64> = (0..n)
            .map(|k| {
                let ia = map_a.as_ref().map_or(k, |m| m[k]);
                let ib = map_b.as_ref().map_or(k, |m| m[k]);
                f(av[ia], bv[ib])
            })
            .collect();
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Binary { kind, a, b, map_a, map_b }, &[a, b]))
    }

    /// Elementwise sum with trailing-aligned broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    /// Pointwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.map_value(x, |v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.map_value(x, |v| v + c);
        self.push(value, Op::AddScalar(x), &[x])
    }

    /// `min(x, c)`; the gradient is zero where the cap is active.
    pub fn clamp_max(&mut self, x: Var, c: f64) -> Var {
        let value = self.map_value(x, |v| if v > c { c } else { v });
        self.push(value, Op::ClampMax(x, c), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map_value(x, |v| if v < 0.0 { 0.0 } else { v });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.map_value(x, |v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map_value(x, sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.map_value(x, f64::exp);
        self.push(value, Op::Exp(x), &[x])
    }

    /// `ln(max(x, floor))`.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Var {
        let value = self.map_value(x, |v| if v < floor { floor } else { v }.ln());
        self.push(value, Op::Log { x, floor }, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.map_value(x, f64::abs);
        self.push(value, Op::Abs(x), &[x])
    }

    /// Smooth L1 with transition at `beta`: `0.5 x² / beta` inside, `|x| - beta/2` outside.
    pub fn smooth_l1(&mut self, x: Var, beta: f64) -> Var {
        let value = self.map_value(x, |v| smooth_l1(v, beta));
        self.push(value, Op::SmoothL1 { x, beta }, &[x])
    }

    fn map_value(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let src = self.value(x);
        Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    // ----- linear algebra -------------------------------------------------

    /// `[n, k] × [k, m] → [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).dims2()?;
        let (k2, m) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::invalid(format!("matmul inner dims {k} vs {k2}")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let index = (0..c).flat_map(|j| (0..r).map(move |i| i * c + j)).collect();
        self.gather(x, index, &[c, r])
    }

    /// Determinant of a square matrix (LU with partial pivoting).
    pub fn determinant(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if r != c {
            return Err(Error::invalid(format!("determinant of non-square {r}x{c} matrix")));
        }
        let det = linalg::determinant(self.value(x).data(), r);
        Ok(self.push(Tensor::scalar(det), Op::Determinant(x), &[x]))
    }

    // ----- normalisation -------------------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ax = Axis::of(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..ax.outer {
            for i in 0..ax.inner {
                let mx = (0..ax.len).map(|k| src[ax.at(o, k, i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..ax.len {
                    let e = (src[ax.at(o, k, i)] - mx).exp();
                    out[ax.at(o, k, i)] = e;
                    z += e;
                }
                for k in 0..ax.len {
                    out[ax.at(o, k, i)] /= z;
                }
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::Softmax { x, axis: ax }, &[x]))
    }

    /// Row softmax of a matrix restricted to `mask`; masked-out entries are
    /// exactly zero. Every row needs at least one member.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if mask.len() != r * c {
            return Err(Error::invalid("mask size does not match matrix"));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = i * c..(i + 1) * c;
            let members = || row.clone().filter(|&k| mask[k]);
            let mx = members().map(|k| src[k]).fold(f64::NEG_INFINITY, f64::max);
            if members().next().is_none() {
                return Err(Error::invalid(format!("row {i} has an empty softmax support")));
            }
            let mut z = 0.0;
            for k in members() {
                out[k] = (src[k] - mx).exp();
                z += out[k];
            }
            for k in members() {
                out[k] /= z;
            }
        }
        let value = Tensor::new(vec![r, c], out)?;
        Ok(self.push(value, Op::MaskedSoftmax { x, mask, cols: c }, &[x]))
    }

    // ----- convolution and pooling --------------------------------------

    /// 1-D convolution of `input [C_in, L]` with `filters [C_out, C_in, k]`.
    ///
    /// Taps index into the past: tap `i` of an output anchored at input
    /// position `p` reads `p - i·dilation`, so with [`Padding::CausalLeft`]
    /// the output is `Σ f(i)·x[h - d·i]`.
    pub fn conv1d(
        &mut self,
        input: Var,
        filters: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<Var> {
        if stride == 0 || dilation == 0 {
            return Err(Error::invalid("conv1d stride and dilation must be >= 1"));
        }
        let (c_in, len) = self.value(input).dims2()?;
        let (c_out, wc_in, k) = match self.shape(filters) {
            [a, b, c] => (*a, *b, *c),
            s => return Err(Error::invalid(format!("conv1d filters must be rank 3, got {s:?}"))),
        };
        if wc_in != c_in {
            return Err(Error::invalid(format!("conv1d channel mismatch: input has {c_in}, filters expect {wc_in}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return Err(Error::invalid(format!("conv1d bias must have shape [{c_out}]")));
            }
        }
        let span = (k - 1) * dilation;
        let (pl, pr) = padding.split(span);
        let padded = len + pl + pr;
        if padded < span + 1 {
            return Err(Error::invalid(format!(
                "conv1d output length <= 0 (len {len}, kernel {k}, dilation {dilation})"
            )));
        }
        let l_out = (padded - span - 1) / stride + 1;
        let x = self.value(input).data();
        let w = self.value(filters).data();
        let mut out = vec![0.0; c_out * l_out];
        for o in 0..c_out {
            let b0 = bias.map_or(0.0, |b| self.value(b).data()[o]);
            for t in 0..l_out {
                let anchor = (t * stride + span) as isize - pl as isize;
                let mut acc = b0;
                for c in 0..c_in {
                    let wrow = &w[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    let xrow = &x[c * len..(c + 1) * len];
                    for (i, &wi) in wrow.iter().enumerate() {
                        let src = anchor - (i * dilation) as isize;
                        if src >= 0 && (src as usize) < len {
                            acc += wi * xrow[src as usize];
                        }
                    }
                }
                out[o * l_out + t] = acc;
            }
        }
        let value = Tensor::new(vec![c_out, l_out], out)?;
        let mut inputs = vec![input, filters];
        inputs.extend(bias);
        Ok(self.push(value, Op::Conv1d { input, weight: filters, bias, stride, dilation, pad_left: pl }, &inputs))
    }

    /// Non-overlapping max pooling over the last axis of `[C, L]`.
    pub fn maxpool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let (c, len) = self.value(x).dims2()?;
        if window == 0 || len / window == 0 {
            return Err(Error::invalid(format!("maxpool window {window} too large for length {len}")));
        }
        let l_out = len / window;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * l_out);
        let mut argmax = Vec::with_capacity(c * l_out);
        for ch in 0..c {
            for t in 0..l_out {
                let start = ch * len + t * window;
                let mut best = start;
                for k in start + 1..start + window {
                    if src[k] > src[best] || src[k].is_nan() {
                        best = k;
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
        let value = Tensor::new(vec![c, l_out], out)?;
        Ok(self.push(value, Op::MaxPool1d { input: x, argmax }, &[x]))
    }

    /// Adaptive average pooling of `[C, L]` to `[C, target]`; window `t`
    /// spans `floor(t·L/T) .. ceil((t+1)·L/T)`.
    pub fn adaptive_avgpool1d(&mut self, x: Var, target: usize) -> Result<Var> {
        let (c, len) = self.value(x).dims2()?;
        if target == 0 {
            return Err(Error::invalid("adaptive pooling target must be >= 1"));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; c * target];
        for ch in 0..c {
            for t in 0..target {
                let (s, e) = adaptive_window(t, len, target);
                let sum: f64 = src[ch * len + s..ch * len + e].iter().sum();
                out[ch * target + t] = sum / (e - s) as f64;
            }
        }
        let value = Tensor::new(vec![c, target], out)?;
        Ok(self.push(value, Op::AdaptiveAvgPool1d { input: x }, &[x]))
    }

    /// Inverted dropout. With `train == false` the input handle is returned
    /// unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout p must be in [0, 1), got {p}")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> =
            (0..self.value(x).len()).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Dropout { input: x, mask }, &[x]))
    }

    // ----- reductions ------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, f: impl Fn(&[f64]) -> f64) -> Result<(Tensor, Axis)> {
        let ax = Axis::of(self.shape(x), axis)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; ax.outer * ax.inner];
        let mut buf = vec![0.0; ax.len];
        for o in 0..ax.outer {
            for i in 0..ax.inner {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = src[ax.at(o, k, i)];
                }
                out[o * ax.inner + i] = f(&buf);
            }
        }
        let mut shape = self.shape(x).to_vec();
        shape[axis] = 1;
        Ok((Tensor::new(shape, out)?, ax))
    }

    /// Mean along `axis`, keeping it as a unit dimension.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (value, ax) = self.reduce_axis(x, axis, |v| v.iter().sum::<f64>() / v.len() as f64)?;
        Ok(self.push(value, Op::MeanAxis { x, axis: ax }, &[x]))
    }

    /// Population standard deviation along `axis`, floored at `floor`.
    pub fn std_axis(&mut self, x: Var, axis: usize, floor: f64) -> Result<Var> {
        let (value, ax) = self.reduce_axis(x, axis, |v| population_std(v).max(floor))?;
        Ok(self.push(value, Op::StdAxis { x, axis: ax }, &[x]))
    }

    /// Euclidean norm along `axis`, floored at `floor`.
    pub fn norm_axis(&mut self, x: Var, axis: usize, floor: f64) -> Result<Var> {
        let (value, ax) = self.reduce_axis(x, axis, |v| v.iter().map(|a| a * a).sum::<f64>().sqrt().max(floor))?;
        Ok(self.push(value, Op::NormAxis { x, axis: ax }, &[x]))
    }

    // ----- structure ---------------------------------------------------------

    /// `out.flat[k] = x.flat[index[k]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len()) {
            return Err(Error::invalid(format!("gather index {bad} out of range {}", src.len())));
        }
        let data = index.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(value, Op::Gather { x, index }, &[x]))
    }

    /// Rows `rows` of a matrix, in order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::invalid(format!("row {bad} out of range {r}")));
        }
        let index = rows.iter().flat_map(|&i| (0..c).map(move |j| i * c + j)).collect();
        self.gather(x, index, &[rows.len(), c])
    }

    /// Square matrix with row and column `skip` removed.
    pub fn principal_minor(&mut self, x: Var, skip: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if r != c || r < 2 || skip >= r {
            return Err(Error::invalid(format!("cannot remove index {skip} from {r}x{c} matrix")));
        }
        let keep: Vec<usize> = (0..r).filter(|&i| i != skip).collect();
        let index = keep.iter().flat_map(|&i| keep.iter().map(move |&j| i * c + j)).collect();
        self.gather(x, index, &[r - 1, r - 1])
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!("concat axis {axis} out of range")));
        }
        let outer: usize = base[..axis].iter().product();
        let mut chunk = Vec::with_capacity(inputs.len());
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(Error::invalid(format!("concat shape mismatch {s:?} vs {base:?}")));
            }
            chunk.push(s[axis..].iter().product::<usize>());
            total += s[axis];
        }
        let mut data = Vec::with_capacity(outer * chunk.iter().sum::<usize>());
        for o in 0..outer {
            for (&v, &cs) in inputs.iter().zip(&chunk) {
                data.extend_from_slice(&self.value(v).data()[o * cs..(o + 1) * cs]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec(), outer, chunk }, inputs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    // ----- backward -------------------------------------------------------

    /// Accumulates `∂loss/∂v` into the gradient buffer of every
    /// gradient-requiring value recorded before `loss`. Values that `loss`
    /// does not depend on keep their current gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let rec = &self.records[id];
            if !rec.requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            if let Some(buf) = self.records[id].grad.as_mut() {
                buf.iter_mut().zip(&g).for_each(|(b, x)| *b += x);
            } else {
                self.records[id].grad = Some(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let rec = &self.records[id];
        let out = rec.value.data();
        let val = |v: Var| self.records[v.0].value.data();
        let needs = |v: Var| self.records[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !needs(v) {
                return;
            }
            let n = self.records[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        let unary = |x: Var, grads: &mut [Option<Vec<f64>>], d: &dyn Fn(usize) -> f64| {
            if !self.records[x.0].requires_grad {
                return;
            }
            let n = self.records[x.0].value.len();
            let slot = grads[x.0].get_or_insert_with(|| vec![0.0; n]);
            for (k, s) in slot.iter_mut().enumerate() {
                *s += g[k] * d(k);
            }
        };
        match &rec.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b, map_a, map_b } => {
                let (av, bv) = (val(*a), val(*b));
                let ia = |k: usize| map_a.as_ref().map_or(k, |m| m[k]);
                let ib = |k: usize| map_b.as_ref().map_or(k, |m| m[k]);
                acc(*a, &mut |s| {
                    for k in 0..g.len() {
                        let d = match kind {
                            Binary::Add | Binary::Sub => 1.0,
                            Binary::Mul => bv[ib(k)],
                            Binary::Div => 1.0 / bv[ib(k)],
                        };
                        s[ia(k)] += g[k] * d;
                    }
                });
                acc(*b, &mut |s| {
                    for k in 0..g.len() {
                        let d = match kind {
                            Binary::Add => 1.0,
                            Binary::Sub => -1.0,
                            Binary::Mul => av[ia(k)],
                            Binary::Div => -av[ia(k)] / (bv[ib(k)] * bv[ib(k)]),
                        };
                        s[ib(k)] += g[k] * d;
                    }
                });
            }
            Op::Scale(x, c) => unary(*x, grads, &|_| *c),
            Op::AddScalar(x) => unary(*x, grads, &|_| 1.0),
            Op::ClampMax(x, c) => {
                let xv = val(*x);
                unary(*x, grads, &|k| if xv[k] < *c { 1.0 } else { 0.0 })
            }
            Op::Relu(x) => {
                let xv = val(*x);
                unary(*x, grads, &|k| if xv[k] > 0.0 { 1.0 } else { 0.0 })
            }
            Op::LeakyRelu(x, slope) => {
                let xv = val(*x);
                unary(*x, grads, &|k| if xv[k] > 0.0 { 1.0 } else { *slope })
            }
            Op::Sigmoid(x) => unary(*x, grads, &|k| out[k] * (1.0 - out[k])),
            Op::Exp(x) => unary(*x, grads, &|k| out[k]),
            Op::Log { x, floor } => {
                let xv = val(*x);
                unary(*x, grads, &|k| if xv[k] > *floor { 1.0 / xv[k] } else { 0.0 })
            }
            Op::Abs(x) => {
                let xv = val(*x);
                unary(*x, grads, &|k| xv[k].signum() * (xv[k] != 0.0) as u8 as f64)
            }
            Op::SmoothL1 { x, beta } => {
                let xv = val(*x);
                unary(*x, grads, &|k| {
                    if xv[k].abs() < *beta {
                        xv[k] / beta
                    } else {
                        xv[k].signum()
                    }
                })
            }
            Op::MatMul(a, b) => {
                let (n, kd) = self.records[a.0].value.dims2().unwrap();
                let m = self.records[b.0].value.dims2().unwrap().1;
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for i in 0..n {
                        for j in 0..m {
                            let gij = g[i * m + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for k in 0..kd {
                                s[i * kd + k] += gij * bv[k * m + j];
                            }
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..n {
                        for k in 0..kd {
                            let aik = av[i * kd + k];
                            if aik == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                s[k * m + j] += aik * g[i * m + j];
                            }
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let ax = *axis;
                acc(*x, &mut |s| {
                    for o in 0..ax.outer {
                        for i in 0..ax.inner {
                            let dot: f64 = (0..ax.len).map(|k| g[ax.at(o, k, i)] * out[ax.at(o, k, i)]).sum();
                            for k in 0..ax.len {
                                let p = ax.at(o, k, i);
                                s[p] += out[p] * (g[p] - dot);
                            }
                        }
                    }
                });
            }
            Op::MaskedSoftmax { x, mask, cols } => {
                let c = *cols;
                acc(*x, &mut |s| {
                    for row in 0..g.len() / c {
                        let r = row * c..(row + 1) * c;
                        let dot: f64 = r.clone().filter(|&k| mask[k]).map(|k| g[k] * out[k]).sum();
                        for k in r.filter(|&k| mask[k]) {
                            s[k] += out[k] * (g[k] - dot);
                        }
                    }
                });
            }
            Op::Conv1d { input, weight, bias, stride, dilation, pad_left } => {
                let (c_in, len) = self.records[input.0].value.dims2().unwrap();
                let ws = self.records[weight.0].value.shape();
                let (c_out, k) = (ws[0], ws[2]);
                let l_out = g.len() / c_out;
                let span = (k - 1) * dilation;
                let (xv, wv) = (val(*input), val(*weight));
                let src_of = |t: usize, i: usize| -> Option<usize> {
                    let p = (t * stride + span) as isize - *pad_left as isize - (i * dilation) as isize;
                    (p >= 0 && (p as usize) < len).then_some(p as usize)
                };
                acc(*input, &mut |s| {
                    for o in 0..c_out {
                        for t in 0..l_out {
                            let go = g[o * l_out + t];
                            for c in 0..c_in {
                                for i in 0..k {
                                    if let Some(p) = src_of(t, i) {
                                        s[c * len + p] += go * wv[(o * c_in + c) * k + i];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*weight, &mut |s| {
                    for o in 0..c_out {
                        for t in 0..l_out {
                            let go = g[o * l_out + t];
                            for c in 0..c_in {
                                for i in 0..k {
                                    if let Some(p) = src_of(t, i) {
                                        s[(o * c_in + c) * k + i] += go * xv[c * len + p];
                                    }
                                }
                            }
                        }
                    }
                });
                if let Some(b) = bias {
                    acc(*b, &mut |s| {
                        for o in 0..c_out {
                            s[o] += g[o * l_out..(o + 1) * l_out].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::MaxPool1d { input, argmax } => acc(*input, &mut |s| {
                for (k, &src) in argmax.iter().enumerate() {
                    s[src] += g[k];
                }
            }),
            Op::AdaptiveAvgPool1d { input } => {
                let (c, len) = self.records[input.0].value.dims2().unwrap();
                let target = rec.value.shape()[1];
                acc(*input, &mut |s| {
                    for ch in 0..c {
                        for t in 0..target {
                            let (a, e) = adaptive_window(t, len, target);
                            let share = g[ch * target + t] / (e - a) as f64;
                            for v in &mut s[ch * len + a..ch * len + e] {
                                *v += share;
                            }
                        }
                    }
                });
            }
            Op::Dropout { input, mask } => unary(*input, grads, &|k| mask[k]),
            Op::Determinant(x) => {
                let n = self.records[x.0].value.shape()[0];
                let cof = linalg::det_gradient(val(*x), n, out[0]);
                acc(*x, &mut |s| s.iter_mut().zip(&cof).for_each(|(v, c)| *v += g[0] * c));
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.records[x.0].value.len() as f64;
                let gi = g[0] / n;
                acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += gi));
            }
            Op::MeanAxis { x, axis } => {
                let ax = *axis;
                acc(*x, &mut |s| {
                    for o in 0..ax.outer {
                        for i in 0..ax.inner {
                            let gi = g[o * ax.inner + i] / ax.len as f64;
                            for k in 0..ax.len {
                                s[ax.at(o, k, i)] += gi;
                            }
                        }
                    }
                });
            }
            Op::StdAxis { x, axis } => {
                let ax = *axis;
                let xv = val(*x);
                let floor_active = |o: usize, i: usize, std: f64| {
                    let raw: Vec<f64> = (0..ax.len).map(|k| xv[ax.at(o, k, i)]).collect();
                    population_std(&raw) < std
                };
                acc(*x, &mut |s| {
                    for o in 0..ax.outer {
                        for i in 0..ax.inner {
                            let std = out[o * ax.inner + i];
                            if floor_active(o, i, std) {
                                continue;
                            }
                            let mean = (0..ax.len).map(|k| xv[ax.at(o, k, i)]).sum::<f64>() / ax.len as f64;
                            let gi = g[o * ax.inner + i] / (ax.len as f64 * std);
                            for k in 0..ax.len {
                                let p = ax.at(o, k, i);
                                s[p] += gi * (xv[p] - mean);
                            }
                        }
                    }
                });
            }
            Op::NormAxis { x, axis } => {
                let ax = *axis;
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for o in 0..ax.outer {
                        for i in 0..ax.inner {
                            let norm = out[o * ax.inner + i];
                            let raw = (0..ax.len).map(|k| xv[ax.at(o, k, i)].powi(2)).sum::<f64>().sqrt();
                            if raw < norm {
                                continue;
                            }
                            let gi = g[o * ax.inner + i] / norm;
                            for k in 0..ax.len {
                                let p = ax.at(o, k, i);
                                s[p] += gi * xv[p];
                            }
                        }
                    }
                });
            }
            Op::Gather { x, index } => acc(*x, &mut |s| {
                for (k, &i) in index.iter().enumerate() {
                    s[i] += g[k];
                }
            }),
            Op::Concat { inputs, outer, chunk } => {
                let total: usize = chunk.iter().sum();
                let mut offset = 0;
                for (&v, &cs) in inputs.iter().zip(chunk) {
                    acc(v, &mut |s| {
                        for o in 0..*outer {
                            for j in 0..cs {
                                s[o * cs + j] += g[o * total + offset + j];
                            }
                        }
                    });
                    offset += cs;
                }
            }
            Op::Reshape(x) => unary(*x, grads, &|_| 1.0),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn smooth_l1(v: f64, beta: f64) -> f64 {
    if v.abs() < beta {
        0.5 * v * v / beta
    } else {
        v.abs() - 0.5 * beta
    }
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn adaptive_window(t: usize, len: usize, target: usize) -> (usize, usize) {
    let start = t * len / target;
    let end = ((t + 1) * len).div_ceil(target);
    (start, end.max(start + 1))
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[kk * m..(kk + 1) * m]) {
                *o += aik * bv;
            }
        }
    }
    out
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| -> Vec<usize> { std::iter::repeat_n(1, rank - s.len()).chain(s.iter().copied()).collect() };
    let (pa, pb) = (pad(a), pad(b));
    pa.iter()
        .zip(&pb)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::invalid(format!("cannot broadcast {a:?} with {b:?}"))),
        })
        .collect()
}

/// For each flat index of `out`, the flat index into a broadcast source.
fn broadcast_map(out: &[usize], src: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let src: Vec<usize> = std::iter::repeat_n(1, rank - src.len()).chain(src.iter().copied()).collect();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for d in (0..rank).rev() {
        strides[d] = if src[d] == 1 { 0 } else { acc };
        acc *= src[d];
    }
    let n: usize = out.iter().product();
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(n);
    for _ in 0..n {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}
