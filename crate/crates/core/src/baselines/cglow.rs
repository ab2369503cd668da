use std::f64::consts::PI;

use super::AttributeEdit;
use crate::autodiff::{Parameter, Real, Tape, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowModel};
use crate::nn::{bce_with_logits, softmax_cross_entropy, Activation, Mlp, Module};
use crate::rng::{normal, SeedStream};
use crate::train::{fit, LikelihoodModel, RunContext, TrainConfig};

/// Gaussian prior whose mean is linear in `[one-hot identity ∥ attributes]`
/// with unit covariance. Row `c < M` of `means` is the mean of identity `c`;
/// row `M + a` is the offset contributed by attribute `a`.
#[derive(Clone, Debug)]
pub struct ClassPrior {
    pub means: Parameter,
    pub identities: usize,
    pub attributes: usize,
}

impl ClassPrior {
    pub fn new(name: &str, identities: usize, attributes: usize, dim: usize) -> Self {
        Self {
            means: Parameter::new(format!("{name}.means"), Tensor::zeros(vec![identities + attributes, dim])),
            identities,
            attributes,
        }
    }

    pub fn dim(&self) -> usize {
        self.means.shape()[1]
    }

    /// `(B, M + L)` design matrix of hard conditions.
    pub fn design(&self, identities: &[usize], attributes: &[Vec<u8>]) -> Result<Tensor> {
        let w = self.identities + self.attributes;
        let mut data = vec![0.0; identities.len() * w];
        for (i, (&id, attrs)) in identities.iter().zip(attributes).enumerate() {
            if id >= self.identities {
                return Err(Error::LabelOutOfRange {
                    label: id,
                    classes: self.identities,
                });
            }
            if attrs.len() != self.attributes {
                return Err(Error::InvalidArgument(format!(
                    "{} attribute flags, expected {}",
                    attrs.len(),
                    self.attributes
                )));
            }
            data[i * w + id] = 1.0;
            for (a, &v) in attrs.iter().enumerate() {
                data[i * w + self.identities + a] = v as Real;
            }
        }
        Tensor::new(vec![identities.len(), w], data)
    }

    pub fn mean(&self, identities: &[usize], attributes: &[Vec<u8>]) -> Result<Tensor> {
        let tape = Tape::new();
        let d = tape.constant(&self.design(identities, attributes)?);
        Ok(d.matmul(tape.constant(&self.means.tensor))?.value())
    }

    /// Per-sample `log N(z; mean(design), I)`, `(B,)`.
    pub fn log_prob<'t>(&self, tape: &'t Tape, z: Var<'t>, design: &Tensor) -> Result<Var<'t>> {
        let mu = tape.constant(design).matmul(tape.param(&self.means))?;
        let d = self.dim() as Real;
        let sq = z.sub(mu)?.square().sum_axes(&[1])?;
        Ok(sq.mul_scalar(-0.5).add_scalar(-0.5 * d * (2.0 * PI as Real).ln()))
    }

    /// `z ~ N(mean, τ² I)`.
    pub fn sample(&self, identities: &[usize], attributes: &[Vec<u8>], temperature: Real, stream: SeedStream) -> Result<Tensor> {
        let mut z = self.mean(identities, attributes)?;
        let mut rng = stream.rng();
        for v in z.data_mut() {
            *v += temperature * normal(&mut rng);
        }
        Ok(z)
    }

    /// Latent offset of one attribute.
    pub fn attribute_offset(&self, a: usize) -> &[Real] {
        self.means.tensor.row(self.identities + a)
    }
}

impl Module for ClassPrior {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.means]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.means]
    }
}

/// Flow trained jointly with a [`ClassPrior`] and a small latent classifier
/// whose cross-entropy is added to the likelihood objective.
#[derive(Clone, Debug)]
pub struct CGlow {
    pub flow: FlowModel,
    pub prior: ClassPrior,
    pub classifier: Mlp,
    pub attribute_names: Vec<String>,
    pub classifier_weight: Real,
}

impl CGlow {
    pub fn new(
        config: FlowConfig,
        identities: usize,
        attribute_names: &[String],
        classifier_weight: Real,
        stream: SeedStream,
    ) -> Result<Self> {
        let flow = FlowModel::new(config, "cglow.flow", stream.split("flow"))?;
        let dim = flow.dim();
        let l = attribute_names.len();
        let classifier = Mlp::new(
            "cglow.classifier",
            &[dim, 64, identities + l],
            Activation::Relu,
            false,
            &mut stream.split("classifier").rng(),
        );
        Ok(Self {
            prior: ClassPrior::new("cglow.prior", identities, l, dim),
            flow,
            classifier,
            attribute_names: attribute_names.to_vec(),
            classifier_weight,
        })
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attribute_names
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Images drawn from the class prior at temperature `τ`.
    pub fn sample(&self, identities: &[usize], attributes: &[Vec<u8>], temperature: Real, stream: SeedStream) -> Result<Tensor> {
        self.flow.inverse(&self.prior.sample(identities, attributes, temperature, stream)?)
    }

    /// Cumulative edits by the learned attribute offsets: for every step
    /// `z += sign·α·offset(attribute)`. Returns the reconstruction followed by
    /// one image batch per edit.
    pub fn manipulate(&self, x: &Tensor, edits: &[AttributeEdit], alpha: Real) -> Result<Vec<Tensor>> {
        let (mut z, _) = self.flow.forward_values(x)?;
        let mut out = vec![self.flow.inverse(&z)?];
        for e in edits {
            let a = self.attribute_index(&e.attribute)?;
            let off = self.prior.attribute_offset(a).to_vec();
            for i in 0..z.rows() {
                z.row_mut(i).iter_mut().zip(&off).for_each(|(v, o)| *v += e.sign * alpha * o);
            }
            out.push(self.flow.inverse(&z)?);
        }
        Ok(out)
    }
}

impl Module for CGlow {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.flow.parameters();
        p.extend(self.prior.parameters());
        p.extend(self.classifier.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.flow.parameters_mut();
        p.extend(self.prior.parameters_mut());
        p.extend(self.classifier.parameters_mut());
        p
    }
}

impl LikelihoodModel for CGlow {
    fn flow_mut(&mut self) -> &mut FlowModel {
        &mut self.flow
    }

    fn batch_loss<'t>(&self, tape: &'t Tape, x: &Tensor, data: &Dataset, idx: &[usize]) -> Result<(Var<'t>, Real)> {
        let ids: Vec<usize> = idx.iter().map(|&i| data.identities[i]).collect();
        let rows: Vec<Vec<u8>> = idx.iter().map(|&i| data.attribute_row(i).to_vec()).collect();
        let design = self.prior.design(&ids, &rows)?;
        let out = self.flow.forward(tape, tape.constant(x))?;
        let nll = self.prior.log_prob(tape, out.z, &design)?.add(out.logdet)?.neg().mean();
        let nll_value = nll.item();
        if !nll_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                name: "cglow".into(),
                step: 0,
            });
        }
        let m = self.prior.identities;
        let l = self.prior.attributes;
        let logits = self.classifier.forward(tape, out.z)?;
        let mut cls = softmax_cross_entropy(tape, logits.slice_cols(0, m)?, &ids)?;
        if l > 0 {
            cls = cls.add(bce_with_logits(tape, logits.slice_cols(m, l)?, &data.attribute_tensor(idx))?)?;
        }
        Ok((nll.add(cls.mul_scalar(self.classifier_weight))?, nll_value))
    }
}

/// Trains flow, prior means and latent classifier jointly by stochastic
/// gradient steps on `NLL + weight·classification`.
pub fn train_cglow(model: &mut CGlow, data: &Dataset, cfg: &TrainConfig, ctx: &mut RunContext) -> Result<Checkpoint> {
    if data.num_identities != model.prior.identities || data.attribute_names != model.attribute_names {
        return Err(Error::InvalidArgument("dataset labels do not match the class prior".into()));
    }
    fit(model, data, cfg, ctx, "cglow")
}
