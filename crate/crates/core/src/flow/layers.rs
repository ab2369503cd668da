use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{inverse, Parameter, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Module};

/// Channels-last image geometry; a plain vector is `1×1×D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Layout {
    pub fn image(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn vector(dim: usize) -> Self {
        Self::image(1, 1, dim)
    }

    pub fn dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn sites(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, h: usize, w: usize, c: usize) -> usize {
        (h * self.width + w) * self.channels + c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    ActNorm,
    InvLinear,
    AffineCoupling,
    Squeeze,
    Split,
}

/// Log-determinant contribution of one layer.
pub(crate) enum LogDet<'t> {
    Zero,
    /// Same value for every sample (scalar var).
    Shared(Var<'t>),
    /// One value per sample, shape `(B,)`.
    PerSample(Var<'t>),
}

fn invert_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

/// Per-channel affine map `y = x·exp(log_scale) + bias`, initialized from the
/// first batch so its output has zero mean and unit variance per channel.
#[derive(Clone, Debug)]
pub struct ActNorm {
    pub layout: Layout,
    pub log_scale: Parameter,
    pub bias: Parameter,
    pub initialized: bool,
}

impl ActNorm {
    pub fn new(name: &str, layout: Layout) -> Self {
        let c = layout.channels;
        Self {
            layout,
            log_scale: Parameter::new(format!("{name}.log_scale"), Tensor::zeros(vec![c])),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![c])),
            initialized: false,
        }
    }

    /// Sets `scale = 1/std`, `bias = -mean/std` from the batch statistics.
    pub fn initialize(&mut self, x: &Tensor) {
        let c = self.layout.channels;
        let rows = x.numel() / c;
        let mut mean = vec![0.0; c];
        let mut sq = vec![0.0; c];
        for (i, &v) in x.data().iter().enumerate() {
            mean[i % c] += v;
        }
        mean.iter_mut().for_each(|m| *m /= rows as Real);
        for (i, &v) in x.data().iter().enumerate() {
            let d = v - mean[i % c];
            sq[i % c] += d * d;
        }
        for ch in 0..c {
            let std = (sq[ch] / rows as Real).sqrt() + 1e-6;
            self.log_scale.tensor.data_mut()[ch] = -std.ln();
            self.bias.tensor.data_mut()[ch] = -mean[ch] / std;
        }
        self.initialized = true;
    }

    fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, LogDet<'t>)> {
        let shape = x.shape();
        let c = self.layout.channels;
        let logs = tape.param(&self.log_scale);
        let y = x
            .reshape(&[shape[0] * self.layout.sites(), c])?
            .mul(logs.exp())?
            .add(tape.param(&self.bias))?
            .reshape(&shape)?;
        let ld = logs.sum().mul_scalar(self.layout.sites() as Real);
        Ok((y, LogDet::Shared(ld)))
    }

    fn inverse<'t>(&self, tape: &'t Tape, y: Var<'t>) -> Result<Var<'t>> {
        let shape = y.shape();
        let c = self.layout.channels;
        y.reshape(&[shape[0] * self.layout.sites(), c])?
            .sub(tape.param(&self.bias))?
            .mul(tape.param(&self.log_scale).neg().exp())?
            .reshape(&shape)
    }
}

/// Channel-mixing matrix shared by all spatial sites (the dense stand-in for
/// an invertible 1×1 convolution).
#[derive(Clone, Debug)]
pub struct InvLinear {
    pub layout: Layout,
    pub weight: Parameter,
}

impl InvLinear {
    /// Starts from a random rotation.
    pub fn new<R: Rng + ?Sized>(name: &str, layout: Layout, rng: &mut R) -> Self {
        let w = crate::autodiff::orthogonal(layout.channels, rng);
        Self {
            layout,
            weight: Parameter::new(format!("{name}.weight"), w),
        }
    }

    fn mix<'t>(&self, x: Var<'t>, w_t: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        x.reshape(&[shape[0] * self.layout.sites(), self.layout.channels])?
            .matmul(w_t)?
            .reshape(&shape)
    }

    fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, LogDet<'t>)> {
        let w = tape.param(&self.weight);
        let y = self.mix(x, w.transpose()?)?;
        let (logabs, _) = w.log_abs_det()?;
        Ok((y, LogDet::Shared(logabs.mul_scalar(self.layout.sites() as Real))))
    }

    fn inverse<'t>(&self, tape: &'t Tape, y: Var<'t>) -> Result<Var<'t>> {
        let inv = inverse(&self.weight.tensor)?;
        self.mix(y, tape.constant(&inv).transpose()?)
    }
}

/// Affine coupling: the conditioning columns pass through unchanged and
/// parameterize a scale and shift of the remaining columns.
///
/// `scale = sigmoid(b(raw) + 2) / sigmoid(2)` with `b(u) = 4·tanh(u/4)`, so the
/// zero-initialized output layer makes the layer start as the identity and the
/// inverse can expand each coordinate by at most `sigmoid(2)/sigmoid(-2)`.
#[derive(Clone, Debug)]
pub struct Coupling {
    pub layout: Layout,
    pub cond: Vec<usize>,
    pub trans: Vec<usize>,
    merge: Vec<usize>,
    pub net: Mlp,
}

const SCALE_SHIFT: Real = 2.0;
const RAW_BOUND: Real = 4.0;

fn log_sigmoid_shift() -> Real {
    -(1.0 + (-SCALE_SHIFT).exp()).ln()
}

impl Coupling {
    /// Channel halves when there are at least two channels, otherwise a
    /// checkerboard over sites selected by `parity`.
    pub fn new<R: Rng + ?Sized>(name: &str, layout: Layout, width: usize, parity: usize, rng: &mut R) -> Result<Self> {
        let (mut cond, mut trans) = (Vec::new(), Vec::new());
        for h in 0..layout.height {
            for w in 0..layout.width {
                for c in 0..layout.channels {
                    let i = layout.index(h, w, c);
                    let is_cond = if layout.channels >= 2 {
                        c < layout.channels / 2
                    } else {
                        (h + w) % 2 == parity % 2
                    };
                    if is_cond {
                        cond.push(i);
                    } else {
                        trans.push(i);
                    }
                }
            }
        }
        if cond.is_empty() || trans.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "coupling needs at least two variables, layout {layout:?}"
            )));
        }
        Ok(Self::with_partition(name, layout, cond, trans, width, rng))
    }

    pub fn with_partition<R: Rng + ?Sized>(
        name: &str,
        layout: Layout,
        cond: Vec<usize>,
        trans: Vec<usize>,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let order: Vec<usize> = cond.iter().chain(&trans).copied().collect();
        let merge = invert_permutation(&order);
        let net = Mlp::new(
            &format!("{name}.net"),
            &[cond.len(), width, width, 2 * trans.len()],
            Activation::Relu,
            true,
            rng,
        );
        Self {
            layout,
            cond,
            trans,
            merge,
            net,
        }
    }

    fn scale_shift<'t>(&self, tape: &'t Tape, xc: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let t = self.trans.len();
        let h = self.net.forward(tape, xc)?;
        let raw = h.slice_cols(0, t)?;
        let shift = h.slice_cols(t, t)?;
        // log sigmoid(u) = -softplus(-u)
        let log_scale = raw
            .mul_scalar(1.0 / RAW_BOUND)
            .tanh()
            .mul_scalar(RAW_BOUND)
            .add_scalar(SCALE_SHIFT)
            .neg()
            .softplus()
            .neg()
            .add_scalar(-log_sigmoid_shift());
        Ok((log_scale, shift))
    }

    fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<(Var<'t>, LogDet<'t>)> {
        let xc = x.gather_cols(&self.cond)?;
        let xt = x.gather_cols(&self.trans)?;
        let (log_scale, shift) = self.scale_shift(tape, xc)?;
        let yt = xt.add(shift)?.mul(log_scale.exp())?;
        let y = tape.concat_cols(&[xc, yt])?.gather_cols(&self.merge)?;
        Ok((y, LogDet::PerSample(log_scale.sum_axes(&[1])?)))
    }

    fn inverse<'t>(&self, tape: &'t Tape, y: Var<'t>) -> Result<Var<'t>> {
        let yc = y.gather_cols(&self.cond)?;
        let yt = y.gather_cols(&self.trans)?;
        let (log_scale, shift) = self.scale_shift(tape, yc)?;
        let xt = yt.mul(log_scale.neg().exp())?.sub(shift)?;
        tape.concat_cols(&[yc, xt])?.gather_cols(&self.merge)
    }
}

/// Moves each 2×2 spatial block into channels: `H×W×C → H/2×W/2×4C`.
#[derive(Clone, Debug)]
pub struct Squeeze {
    pub input: Layout,
    forward_map: Vec<usize>,
    inverse_map: Vec<usize>,
}

impl Squeeze {
    pub fn new(input: Layout) -> Result<Self> {
        if input.height % 2 != 0 || input.width % 2 != 0 {
            return Err(Error::InvalidArgument(format!("cannot squeeze odd layout {input:?}")));
        }
        let out = Self::output_layout(input);
        let mut map = vec![0; input.dim()];
        for i in 0..out.height {
            for j in 0..out.width {
                for di in 0..2 {
                    for dj in 0..2 {
                        for c in 0..input.channels {
                            let oc = (di * 2 + dj) * input.channels + c;
                            map[out.index(i, j, oc)] = input.index(2 * i + di, 2 * j + dj, c);
                        }
                    }
                }
            }
        }
        let inverse_map = invert_permutation(&map);
        Ok(Self {
            input,
            forward_map: map,
            inverse_map,
        })
    }

    pub fn output_layout(input: Layout) -> Layout {
        Layout::image(input.height / 2, input.width / 2, input.channels * 4)
    }
}

/// Factors out the trailing half of the channels as latent variables.
#[derive(Clone, Debug)]
pub struct Split {
    pub input: Layout,
    pub keep: Vec<usize>,
    pub out: Vec<usize>,
    merge: Vec<usize>,
}

impl Split {
    pub fn new(input: Layout) -> Result<Self> {
        if input.channels < 2 {
            return Err(Error::InvalidArgument(format!("cannot split layout {input:?}")));
        }
        let kept = input.channels - input.channels / 2;
        let (mut keep, mut out) = (Vec::new(), Vec::new());
        for s in 0..input.sites() {
            for c in 0..input.channels {
                let i = s * input.channels + c;
                if c < kept {
                    keep.push(i);
                } else {
                    out.push(i);
                }
            }
        }
        let order: Vec<usize> = keep.iter().chain(&out).copied().collect();
        let merge = invert_permutation(&order);
        Ok(Self {
            input,
            keep,
            out,
            merge,
        })
    }

    pub fn kept_layout(&self) -> Layout {
        Layout::image(
            self.input.height,
            self.input.width,
            self.input.channels - self.input.channels / 2,
        )
    }
}

#[derive(Clone, Debug)]
pub enum FlowLayer {
    ActNorm(ActNorm),
    InvLinear(InvLinear),
    Coupling(Coupling),
    Squeeze(Squeeze),
    Split(Split),
}

/// Result of one layer in the forward direction.
pub(crate) struct LayerForward<'t> {
    pub y: Var<'t>,
    pub logdet: LogDet<'t>,
    /// Latent variables factored out by a split.
    pub emitted: Option<Var<'t>>,
}

impl FlowLayer {
    pub fn kind(&self) -> LayerKind {
        match self {
            FlowLayer::ActNorm(_) => LayerKind::ActNorm,
            FlowLayer::InvLinear(_) => LayerKind::InvLinear,
            FlowLayer::Coupling(_) => LayerKind::AffineCoupling,
            FlowLayer::Squeeze(_) => LayerKind::Squeeze,
            FlowLayer::Split(_) => LayerKind::Split,
        }
    }

    pub fn input_layout(&self) -> Layout {
        match self {
            FlowLayer::ActNorm(l) => l.layout,
            FlowLayer::InvLinear(l) => l.layout,
            FlowLayer::Coupling(l) => l.layout,
            FlowLayer::Squeeze(l) => l.input,
            FlowLayer::Split(l) => l.input,
        }
    }

    pub fn output_layout(&self) -> Layout {
        match self {
            FlowLayer::Squeeze(l) => Squeeze::output_layout(l.input),
            FlowLayer::Split(l) => l.kept_layout(),
            other => other.input_layout(),
        }
    }

    /// Width of the latent block this layer factors out.
    pub fn emitted_dim(&self) -> usize {
        match self {
            FlowLayer::Split(s) => s.out.len(),
            _ => 0,
        }
    }

    pub(crate) fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<LayerForward<'t>> {
        let (y, logdet, emitted) = match self {
            FlowLayer::ActNorm(l) => {
                let (y, ld) = l.forward(tape, x)?;
                (y, ld, None)
            }
            FlowLayer::InvLinear(l) => {
                let (y, ld) = l.forward(tape, x)?;
                (y, ld, None)
            }
            FlowLayer::Coupling(l) => {
                let (y, ld) = l.forward(tape, x)?;
                (y, ld, None)
            }
            FlowLayer::Squeeze(l) => (x.gather_cols(&l.forward_map)?, LogDet::Zero, None),
            FlowLayer::Split(l) => (
                x.gather_cols(&l.keep)?,
                LogDet::Zero,
                Some(x.gather_cols(&l.out)?),
            ),
        };
        Ok(LayerForward { y, logdet, emitted })
    }

    /// Inverts the layer; a split needs back the latent block it emitted.
    pub(crate) fn inverse<'t>(&self, tape: &'t Tape, y: Var<'t>, emitted: Option<Var<'t>>) -> Result<Var<'t>> {
        match self {
            FlowLayer::ActNorm(l) => l.inverse(tape, y),
            FlowLayer::InvLinear(l) => l.inverse(tape, y),
            FlowLayer::Coupling(l) => l.inverse(tape, y),
            FlowLayer::Squeeze(l) => y.gather_cols(&l.inverse_map),
            FlowLayer::Split(l) => {
                let e = emitted.ok_or_else(|| Error::InvalidArgument("split inverse without latent block".into()))?;
                tape.concat_cols(&[y, e])?.gather_cols(&l.merge)
            }
        }
    }
}

impl Module for FlowLayer {
    fn parameters(&self) -> Vec<&Parameter> {
        match self {
            FlowLayer::ActNorm(l) => vec![&l.log_scale, &l.bias],
            FlowLayer::InvLinear(l) => vec![&l.weight],
            FlowLayer::Coupling(l) => l.net.parameters(),
            FlowLayer::Squeeze(_) | FlowLayer::Split(_) => Vec::new(),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            FlowLayer::ActNorm(l) => vec![&mut l.log_scale, &mut l.bias],
            FlowLayer::InvLinear(l) => vec![&mut l.weight],
            FlowLayer::Coupling(l) => l.net.parameters_mut(),
            FlowLayer::Squeeze(_) | FlowLayer::Split(_) => Vec::new(),
        }
    }
}
