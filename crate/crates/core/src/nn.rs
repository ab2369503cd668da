//! Dense layers and the parameter-container trait shared by every model.

use rand::Rng;

use crate::autodiff::{Parameter, Real, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::normal_tensor;

/// Anything that owns named parameters.
pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn set_trainable(&mut self, on: bool) {
        for p in self.parameters_mut() {
            p.set_trainable(on);
        }
    }

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.tensor.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.parameters().iter().map(|p| p.tensor.numel()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    pub fn apply<'t>(&self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Relu => x.relu(),
            Activation::LeakyRelu => x.leaky_relu(0.2),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// `y = x·W + b` with `W: (in, out)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Dense {
    /// LeCun-normal weights, zero bias.
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let std = 1.0 / (input.max(1) as Real).sqrt();
        Self {
            weight: Parameter::new(format!("{name}.weight"), normal_tensor(&[input, output], std, rng)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![output])),
        }
    }

    pub fn zeros(name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: Parameter::new(format!("{name}.weight"), Tensor::zeros(vec![input, output])),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(tape.param(&self.weight))?.add(tape.param(&self.bias))
    }
}

impl Module for Dense {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stack of dense layers with an activation between consecutive layers (none
/// after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`. With `zero_last` the final layer starts at
    /// zero so the network initially outputs zeros.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        dims: &[usize],
        activation: Activation,
        zero_last: bool,
        rng: &mut R,
    ) -> Self {
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.l{i}");
                if zero_last && i == n - 1 {
                    Dense::zeros(&lname, dims[i], dims[i + 1])
                } else {
                    Dense::new(&lname, dims[i], dims[i + 1], rng)
                }
            })
            .collect();
        Self { layers, activation }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(h);
            }
        }
        Ok(h)
    }

    /// Runs all layers and also returns the activation feeding the last layer.
    pub fn forward_with_features<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let mut h = x;
        let n = self.layers.len();
        for layer in &self.layers[..n - 1] {
            h = self.activation.apply(layer.forward(tape, h)?);
        }
        let out = self.layers[n - 1].forward(tape, h)?;
        Ok((out, h))
    }
}

impl Module for Mlp {
    fn parameters(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }
}

/// Cross-entropy of softmax(logits) against integer labels, averaged over the
/// batch. `logits: (B, M)`.
pub fn softmax_cross_entropy<'t>(tape: &'t Tape, logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = logits.shape();
    let (b, m) = (shape[0], shape[1]);
    let mut onehot = Tensor::zeros(vec![b, m]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= m {
            return Err(crate::error::Error::LabelOutOfRange { label: y, classes: m });
        }
        onehot.data_mut()[i * m + y] = 1.0;
    }
    let lse = logits.logsumexp_axes(&[1])?;
    let picked = logits.mul(tape.constant(&onehot))?.sum_axes(&[1])?;
    Ok(lse.sub(picked)?.mean())
}

/// Binary cross-entropy with logits, summed over columns and averaged over the
/// batch. `targets` has the same shape as `logits` with values in [0, 1].
pub fn bce_with_logits<'t>(tape: &'t Tape, logits: Var<'t>, targets: &Tensor) -> Result<Var<'t>> {
    let y = tape.constant(targets);
    let per = logits.softplus().sub(logits.mul(y)?)?;
    let b = logits.shape()[0] as Real;
    Ok(per.sum().mul_scalar(1.0 / b))
}
