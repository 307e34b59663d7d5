//! Named parameter storage and the small layers built on it.

use rand::Rng;

use crate::diff::{Padding, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Owns every trainable tensor of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// Parameters placed on one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Bind already-placed variables, in parameter registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound { vars: self.values.iter().map(|v| tape.param(v.clone())).collect() }
    }

    /// Gradients for every parameter after [`Tape::backward`].
    pub fn grads(&self, tape: &Tape, bound: &Bound) -> Vec<Tensor> {
        bound.vars.iter().map(|&v| tape.grad(v).expect("bound params require grad")).collect()
    }

    /// Replace all values; names and shapes must match.
    pub fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                self.values.len(),
                values.len()
            )));
        }
        for (i, (name, t)) in values.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.values[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {i}: expected `{}` {:?}, found `{name}` {:?}",
                    self.names[i],
                    self.values[i].shape(),
                    t.shape()
                )));
            }
            self.values[i] = t;
        }
        Ok(())
    }
}

/// 1-D convolution layer with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
    pub kernel: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Self {
        let fan_in = c_in * kernel;
        let weight = store.add_uniform(format!("{name}.weight"), &[c_out, c_in, kernel], fan_in, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[c_out], fan_in, rng);
        Self { weight, bias, stride, dilation, padding, kernel }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.conv1d(x, p.var(self.weight), Some(p.var(self.bias)), self.stride, self.dilation, self.padding)
    }

    /// Output length for an input of length `len`, if positive.
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let span = (self.kernel - 1) * self.dilation;
        let padded = match self.padding {
            Padding::None => len,
            Padding::CausalLeft | Padding::Symmetric => len + span,
        };
        (padded > span).then(|| (padded - span - 1) / self.stride + 1)
    }
}

/// Fully connected layer `x [n, in] → [n, out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, d_out: usize) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[d_in, d_out], d_in, rng);
        let bias = store.add_uniform(format!("{name}.bias"), &[d_out], d_in, rng);
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.weight))?;
        tape.add(y, p.var(self.bias))
    }
}
