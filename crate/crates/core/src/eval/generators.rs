use crate::autodiff::{Real, Tensor};
use crate::baselines::CGlow;
use crate::condnet::{ConditionBundle, Encoder};
use crate::error::Result;
use crate::flow::FlowModel;
use crate::rng::SeedStream;

/// A model that produces latents (and through its flow, images) for hard
/// identity/attribute conditions.
pub trait ConditionalGenerator {
    fn flow(&self) -> &FlowModel;

    fn latents(&self, identities: &[usize], attributes: &[Vec<u8>], stream: SeedStream) -> Result<Tensor>;

    fn generate(&self, identities: &[usize], attributes: &[Vec<u8>], stream: SeedStream) -> Result<Tensor> {
        self.flow().inverse(&self.latents(identities, attributes, stream)?)
    }
}

/// Condition encoder in front of a frozen flow; codes and noise are drawn
/// from their priors.
pub struct EncoderGenerator<'a> {
    pub flow: &'a FlowModel,
    pub encoder: &'a Encoder,
}

impl ConditionalGenerator for EncoderGenerator<'_> {
    fn flow(&self) -> &FlowModel {
        self.flow
    }

    fn latents(&self, identities: &[usize], attributes: &[Vec<u8>], stream: SeedStream) -> Result<Tensor> {
        let cond = ConditionBundle::from_labels(&self.encoder.schema, identities, attributes, stream)?;
        self.encoder.encode(&cond)
    }
}

/// Class-prior flow sampled at a fixed temperature.
pub struct PriorGenerator<'a> {
    pub model: &'a CGlow,
    pub temperature: Real,
}

impl ConditionalGenerator for PriorGenerator<'_> {
    fn flow(&self) -> &FlowModel {
        &self.model.flow
    }

    fn latents(&self, identities: &[usize], attributes: &[Vec<u8>], stream: SeedStream) -> Result<Tensor> {
        self.model.prior.sample(identities, attributes, self.temperature, stream)
    }
}
