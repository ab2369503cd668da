use serde::{Deserialize, Serialize};

use super::{ConditionBundle, ConditionSchema};
use crate::autodiff::{Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Mlp, Module};
use crate::rng::{normal_tensor, SeedStream};

fn default_embed() -> usize {
    32
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

fn default_activation() -> Activation {
    Activation::LeakyRelu
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: default_embed(),
            hidden: default_hidden(),
            activation: default_activation(),
        }
    }
}

/// Maps a condition bundle to a flattened flow latent.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub schema: ConditionSchema,
    pub embedding: Option<Parameter>,
    pub net: Mlp,
    latent_dim: usize,
}

impl Encoder {
    pub fn new(schema: &ConditionSchema, latent_dim: usize, cfg: &EncoderConfig, stream: SeedStream) -> Self {
        let mut rng = stream.split("encoder").rng();
        let embedding = (schema.identities > 0).then(|| {
            Parameter::new("encoder.embedding", normal_tensor(&[schema.identities, cfg.embed_dim], 1.0, &mut rng))
        });
        let embed = if embedding.is_some() { cfg.embed_dim } else { 0 };
        let input = embed + schema.num_attributes() + schema.codes + schema.noise;
        let mut dims = vec![input];
        dims.extend(&cfg.hidden);
        dims.push(latent_dim);
        Self {
            schema: schema.clone(),
            embedding,
            net: Mlp::new("encoder.net", &dims, cfg.activation, false, &mut rng),
            latent_dim,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn forward<'t>(&self, tape: &'t Tape, cond: &ConditionBundle) -> Result<Var<'t>> {
        cond.validate(&self.schema)?;
        let mut parts = Vec::with_capacity(4);
        if let Some(table) = &self.embedding {
            parts.push(tape.constant(&cond.identity).matmul(tape.param(table))?);
        }
        for t in [&cond.attributes, &cond.codes, &cond.noise] {
            if t.row_len() > 0 {
                parts.push(tape.constant(t));
            }
        }
        let input = tape.concat_cols(&parts)?;
        self.net.forward(tape, input)
    }

    /// Latents without gradient bookkeeping beyond a scratch tape.
    pub fn encode(&self, cond: &ConditionBundle) -> Result<Tensor> {
        let tape = Tape::new();
        Ok(self.forward(&tape, cond)?.value())
    }
}

impl Module for Encoder {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p: Vec<&Parameter> = self.embedding.iter().collect();
        p.extend(self.net.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p: Vec<&mut Parameter> = self.embedding.iter_mut().collect();
        p.extend(self.net.parameters_mut());
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisionConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            activation: default_activation(),
        }
    }
}

/// Shared trunk with real/fake, identity, attribute and code heads.
#[derive(Clone, Debug)]
pub struct SupervisionBlock {
    pub trunk: Vec<Dense>,
    pub activation: Activation,
    pub real: Dense,
    pub identity: Option<Dense>,
    pub attributes: Option<Dense>,
    pub codes: Option<Dense>,
    latent_dim: usize,
}

/// Every head evaluated on one trunk pass.
#[derive(Clone, Copy, Debug)]
pub struct SupervisionOutput<'t> {
    /// Trunk activation shared by all heads, `(B, H)`.
    pub features: Var<'t>,
    /// `(B, 1)` logit of the real/fake probability.
    pub real_logit: Var<'t>,
    pub id_logits: Option<Var<'t>>,
    pub attr_logits: Option<Var<'t>>,
    /// Reconstructed codes (logits for discrete codes).
    pub code_hat: Option<Var<'t>>,
}

impl<'t> SupervisionOutput<'t> {
    /// `(B, 1)` probability that each latent is real.
    pub fn p_real(&self) -> Var<'t> {
        self.real_logit.sigmoid()
    }
}

impl SupervisionBlock {
    pub fn new(schema: &ConditionSchema, latent_dim: usize, cfg: &SupervisionConfig, stream: SeedStream) -> Self {
        let mut rng = stream.split("supervision").rng();
        let mut trunk = Vec::with_capacity(cfg.hidden.len());
        let mut width = latent_dim;
        for (i, &h) in cfg.hidden.iter().enumerate() {
            trunk.push(Dense::new(&format!("supervision.trunk{i}"), width, h, &mut rng));
            width = h;
        }
        let mut head = |name: &str, out: usize| {
            (out > 0).then(|| Dense::new(&format!("supervision.{name}"), width, out, &mut rng))
        };
        let real = head("real", 1).expect("one output");
        let identity = head("identity", schema.identities);
        let attributes = head("attributes", schema.num_attributes());
        let codes = head("codes", schema.codes);
        Self {
            trunk,
            activation: cfg.activation,
            real,
            identity,
            attributes,
            codes,
            latent_dim,
        }
    }

    /// Sets every head to zero so all logits start at 0.
    pub fn zero_heads(&mut self) {
        for d in self.heads_mut() {
            d.weight.tensor.data_mut().fill(0.0);
            d.bias.tensor.data_mut().fill(0.0);
        }
    }

    fn heads_mut(&mut self) -> Vec<&mut Dense> {
        let mut h = vec![&mut self.real];
        h.extend(self.identity.iter_mut());
        h.extend(self.attributes.iter_mut());
        h.extend(self.codes.iter_mut());
        h
    }

    pub fn features<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>> {
        let shape = z.shape();
        if shape.len() != 2 || shape[1] != self.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "supervise",
                lhs: vec![0, self.latent_dim],
                rhs: shape,
            });
        }
        let mut h = z;
        for layer in &self.trunk {
            h = self.activation.apply(layer.forward(tape, h)?);
        }
        Ok(h)
    }

    pub fn heads<'t>(&self, tape: &'t Tape, features: Var<'t>) -> Result<SupervisionOutput<'t>> {
        let opt = |d: &Option<Dense>| d.as_ref().map(|d| d.forward(tape, features)).transpose();
        Ok(SupervisionOutput {
            features,
            real_logit: self.real.forward(tape, features)?,
            id_logits: opt(&self.identity)?,
            attr_logits: opt(&self.attributes)?,
            code_hat: opt(&self.codes)?,
        })
    }

    pub fn supervise<'t>(&self, tape: &'t Tape, z: Var<'t>) -> Result<SupervisionOutput<'t>> {
        let f = self.features(tape, z)?;
        self.heads(tape, f)
    }
}

impl Module for SupervisionBlock {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p: Vec<&Parameter> = self.trunk.iter().flat_map(|d| d.parameters()).collect();
        p.extend(self.real.parameters());
        for d in [&self.identity, &self.attributes, &self.codes].into_iter().flatten() {
            p.extend(d.parameters());
        }
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p: Vec<&mut Parameter> = self.trunk.iter_mut().flat_map(|d| d.parameters_mut()).collect();
        p.extend(self.real.parameters_mut());
        for d in [&mut self.identity, &mut self.attributes, &mut self.codes].into_iter().flatten() {
            p.extend(d.parameters_mut());
        }
        p
    }
}
