use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{ActNorm, Coupling, FlowLayer, InvLinear, LayerKind, Layout, LogDet, Split, Squeeze};
use super::prior::GaussianPrior;
use crate::autodiff::{Parameter, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::rng::SeedStream;

/// Architecture of an `N×K` flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub input: Layout,
    /// Number of scales `N`.
    pub scales: usize,
    /// Steps per scale `K`; one step is actnorm → invertible linear → coupling.
    pub steps: usize,
    pub coupling_width: usize,
    /// Squeeze/split between scales. Off for plain vectors.
    pub multiscale: bool,
}

impl FlowConfig {
    pub fn image(height: usize, width: usize, channels: usize, scales: usize, steps: usize, coupling_width: usize) -> Self {
        Self {
            input: Layout::image(height, width, channels),
            scales,
            steps,
            coupling_width,
            multiscale: true,
        }
    }

    pub fn vector(dim: usize, steps: usize, coupling_width: usize) -> Self {
        Self {
            input: Layout::vector(dim),
            scales: 1,
            steps,
            coupling_width,
            multiscale: false,
        }
    }
}

pub struct FlowOutput<'t> {
    /// Flattened latent, `(B, D)`: factored-out blocks in emission order,
    /// then the final activation.
    pub z: Var<'t>,
    /// Per-sample total log-determinant, `(B,)`.
    pub logdet: Var<'t>,
}

pub struct NllOutput<'t> {
    /// Mean negative log-likelihood in nats.
    pub loss: Var<'t>,
    /// Per-sample negative log-likelihood, `(B,)`.
    pub per_sample: Var<'t>,
    pub bits_per_dim: Real,
}

#[derive(Clone, Debug)]
pub struct FlowModel {
    pub config: Option<FlowConfig>,
    pub input: Layout,
    pub layers: Vec<FlowLayer>,
}

impl FlowModel {
    pub fn new(config: FlowConfig, prefix: &str, stream: SeedStream) -> Result<Self> {
        if config.scales == 0 || config.steps == 0 {
            return Err(Error::InvalidArgument("flow needs at least one scale and one step".into()));
        }
        let mut rng = stream.rng();
        let mut layers = Vec::new();
        let mut layout = config.input;
        for scale in 0..config.scales {
            if config.multiscale && layout.height % 2 == 0 && layout.width % 2 == 0 {
                layers.push(FlowLayer::Squeeze(Squeeze::new(layout)?));
                layout = Squeeze::output_layout(layout);
            }
            for step in 0..config.steps {
                let name = format!("{prefix}.s{scale}.k{step}");
                layers.push(FlowLayer::ActNorm(ActNorm::new(&format!("{name}.actnorm"), layout)));
                layers.push(FlowLayer::InvLinear(InvLinear::new(&format!("{name}.invlinear"), layout, &mut rng)));
                layers.push(FlowLayer::Coupling(Coupling::new(
                    &format!("{name}.coupling"),
                    layout,
                    config.coupling_width,
                    step,
                    &mut rng,
                )?));
            }
            if config.multiscale && scale + 1 < config.scales && layout.channels >= 2 {
                let split = Split::new(layout)?;
                layout = split.kept_layout();
                layers.push(FlowLayer::Split(split));
            }
        }
        Ok(Self {
            config: Some(config),
            input: config.input,
            layers,
        })
    }

    /// Arbitrary layer stack; layouts must chain.
    pub fn from_layers(input: Layout, layers: Vec<FlowLayer>) -> Result<Self> {
        let mut layout = input;
        for (i, l) in layers.iter().enumerate() {
            if l.input_layout() != layout {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} expects {:?}, got {layout:?}",
                    l.input_layout()
                )));
            }
            layout = l.output_layout();
        }
        Ok(Self {
            config: None,
            input,
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.input.dim()
    }

    /// Widths of the latent blocks in flattened order.
    pub fn latent_layout(&self) -> Vec<usize> {
        let mut parts: Vec<usize> = self.layers.iter().map(|l| l.emitted_dim()).filter(|&d| d > 0).collect();
        let last = self.layers.last().map_or(self.input, |l| l.output_layout());
        parts.push(last.dim());
        parts
    }

    pub fn is_initialized(&self) -> bool {
        self.layers.iter().all(|l| match l {
            FlowLayer::ActNorm(a) => a.initialized,
            _ => true,
        })
    }

    /// Marks every actnorm as initialized, e.g. after restoring saved values.
    pub fn mark_initialized(&mut self) {
        for l in &mut self.layers {
            if let FlowLayer::ActNorm(a) = l {
                a.initialized = true;
            }
        }
    }

    /// Data-dependent actnorm initialization from one batch.
    pub fn initialize(&mut self, x: &Tensor) -> Result<()> {
        let mut h = x.clone();
        for i in 0..self.layers.len() {
            if let FlowLayer::ActNorm(a) = &mut self.layers[i] {
                a.initialize(&h);
            }
            let tape = Tape::new();
            let out = self.layers[i].forward(&tape, tape.constant(&h))?;
            if !out.y.is_finite() {
                return Err(Error::FlowDiverged { layer: i });
            }
            h = out.y.value();
        }
        Ok(())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "flow input",
                lhs: shape.to_vec(),
                rhs: vec![0, self.dim()],
            });
        }
        Ok(())
    }

    /// `x → (z, logdet)` on the tape.
    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<FlowOutput<'t>> {
        let shape = x.shape();
        self.check_input(&shape)?;
        let batch = shape[0];
        let mut h = x;
        let mut parts = Vec::new();
        let mut shared: Option<Var<'t>> = None;
        let mut per_sample: Option<Var<'t>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(tape, h)?;
            if !out.y.is_finite() {
                return Err(Error::FlowDiverged { layer: i });
            }
            match out.logdet {
                LogDet::Zero => {}
                LogDet::Shared(v) => shared = Some(add_opt(shared, v)?),
                LogDet::PerSample(v) => per_sample = Some(add_opt(per_sample, v)?),
            }
            if let Some(e) = out.emitted {
                parts.push(e);
            }
            h = out.y;
        }
        parts.push(h);
        let z = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
        let mut logdet = per_sample.unwrap_or_else(|| tape.constant(&Tensor::zeros(vec![batch])));
        if let Some(s) = shared {
            logdet = logdet.add(s)?;
        }
        Ok(FlowOutput { z, logdet })
    }

    /// `z → x` on the tape.
    pub fn inverse_var<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>> {
        self.check_input(&z.shape())?;
        let widths = self.latent_layout();
        let mut blocks = Vec::with_capacity(widths.len());
        let mut off = 0;
        for w in &widths {
            blocks.push(z.slice_cols(off, *w)?);
            off += w;
        }
        let mut h = blocks.pop().expect("final block");
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let emitted = if layer.emitted_dim() > 0 { blocks.pop() } else { None };
            h = layer.inverse(tape, h, emitted)?;
            if !h.is_finite() {
                return Err(Error::FlowDiverged { layer: i });
            }
        }
        Ok(h)
    }

    /// Untracked forward on plain values: `(z, logdet)`.
    pub fn forward_values(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let out = self.forward(&tape, tape.constant(x))?;
        Ok((out.z.value(), out.logdet.value()))
    }

    pub fn inverse(&self, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(self.inverse_var(&tape, tape.constant(z))?.value())
    }

    /// Per-sample `log p(x)` in nats under `prior`.
    pub fn log_prob(&self, prior: &GaussianPrior, x: &Tensor) -> Result<Vec<Real>> {
        let (z, logdet) = self.forward_values(x)?;
        Ok(prior
            .log_prob_values(&z)
            .iter()
            .zip(logdet.data())
            .map(|(a, b)| a + b)
            .collect())
    }

    /// `-mean[log p(z) + logdet]` and bits per dimension for `[0,1]`-scaled
    /// dequantized 8-bit data.
    pub fn nll_loss<'t>(&self, tape: &'t Tape, prior: &GaussianPrior, x: Var<'t>) -> Result<NllOutput<'t>> {
        if x.shape().first().copied().unwrap_or(0) == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let out = self.forward(tape, x)?;
        let per_sample = prior.log_prob(out.z)?.add(out.logdet)?.neg();
        let loss = per_sample.mean();
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                name: "flow".into(),
                step: 0,
            });
        }
        Ok(NllOutput {
            loss,
            per_sample,
            bits_per_dim: bits_per_dim(value, self.dim()),
        })
    }

    /// `n` samples at the prior's temperature.
    pub fn sample(&self, prior: &GaussianPrior, n: usize, stream: SeedStream) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        if prior.temperature <= 0.0 {
            return Err(Error::InvalidArgument("temperature must be positive".into()));
        }
        let z = prior.sample(n, self.dim(), &mut stream.rng());
        self.inverse(&z)
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(|l| l.kind()).collect()
    }

    /// Randomizes every coupling output layer (test and benchmark helper; a
    /// fresh model is the identity in its couplings).
    pub fn perturb_couplings<R: Rng + ?Sized>(&mut self, std: Real, rng: &mut R) {
        for l in &mut self.layers {
            if let FlowLayer::Coupling(c) = l {
                let last = c.net.layers.last_mut().expect("coupling net");
                for v in last.weight.tensor.data_mut() {
                    *v = std * crate::rng::normal(rng);
                }
                for v in last.bias.tensor.data_mut() {
                    *v = std * crate::rng::normal(rng);
                }
            }
        }
    }
}

fn add_opt<'t>(acc: Option<Var<'t>>, v: Var<'t>) -> Result<Var<'t>> {
    match acc {
        Some(a) => a.add(v),
        None => Ok(v),
    }
}

/// `(nll_nats / D + ln 256) / ln 2`.
pub fn bits_per_dim(nll_nats: Real, dim: usize) -> Real {
    (nll_nats / dim as Real + (256.0 as Real).ln()) / std::f64::consts::LN_2 as Real
}

impl Module for FlowModel {
    fn parameters(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }
}
