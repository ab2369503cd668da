use serde::{Deserialize, Serialize};

use super::{CodeKind, SupervisionOutput};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, softmax_cross_entropy};

/// Probabilities are kept in `[PROB_CLAMP, 1 - PROB_CLAMP]` before any log.
pub const PROB_CLAMP: Real = 1e-7;

fn clamped_log(p: Var<'_>) -> Var<'_> {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).log()
}

/// Non-saturating generator loss: `-mean log D(fake)`.
pub fn loss_encoder(p_fake: Var<'_>) -> Var<'_> {
    clamped_log(p_fake).mean().neg()
}

/// `-mean log D(real) - mean log(1 - D(fake))`.
pub fn loss_discriminator<'t>(p_real: Var<'t>, p_fake: Var<'t>) -> Result<Var<'t>> {
    let real = clamped_log(p_real).mean();
    let fake = clamped_log(p_fake.neg().add_scalar(1.0)).mean();
    Ok(real.add(fake)?.neg())
}

/// Identity cross-entropy plus summed attribute binary cross-entropy for one
/// batch, averaged over the batch. Missing heads contribute nothing.
pub fn classifier_term<'t>(
    tape: &'t Tape,
    out: &SupervisionOutput<'t>,
    identities: &[usize],
    attributes: &Tensor,
) -> Result<Var<'t>> {
    let mut total = tape.scalar(0.0);
    if let Some(logits) = out.id_logits {
        if identities.len() != logits.shape()[0] {
            return Err(Error::InvalidArgument(format!(
                "{} identity labels for a batch of {}",
                identities.len(),
                logits.shape()[0]
            )));
        }
        total = total.add(softmax_cross_entropy(tape, logits, identities)?)?;
    }
    if let Some(logits) = out.attr_logits {
        if attributes.shape() != logits.shape().as_slice() {
            return Err(Error::ShapeMismatch {
                op: "attribute labels",
                lhs: logits.shape(),
                rhs: attributes.shape().to_vec(),
            });
        }
        total = total.add(bce_with_logits(tape, logits, attributes)?)?;
    }
    Ok(total)
}

/// Classification loss over a real batch and a fake batch, equally weighted.
pub fn loss_classifier<'t>(
    tape: &'t Tape,
    real: (&SupervisionOutput<'t>, &[usize], &Tensor),
    fake: (&SupervisionOutput<'t>, &[usize], &Tensor),
) -> Result<Var<'t>> {
    let r = classifier_term(tape, real.0, real.1, real.2)?;
    let f = classifier_term(tape, fake.0, fake.1, fake.2)?;
    r.add(f)
}

/// Code reconstruction: `mean ½‖ĉ - c‖²` for continuous codes, binary
/// cross-entropy on logits for discrete ones.
pub fn loss_decoder<'t>(tape: &'t Tape, code_hat: Var<'t>, codes: &Tensor, kind: CodeKind) -> Result<Var<'t>> {
    if code_hat.shape() != codes.shape() {
        return Err(Error::ShapeMismatch {
            op: "code reconstruction",
            lhs: code_hat.shape(),
            rhs: codes.shape().to_vec(),
        });
    }
    match kind {
        CodeKind::Continuous => {
            let b = codes.shape()[0] as Real;
            let diff = code_hat.sub(tape.constant(codes))?;
            Ok(diff.square().sum().mul_scalar(0.5 / b))
        }
        CodeKind::Discrete => {
            if codes.data().iter().any(|&c| c != 0.0 && c != 1.0) {
                return Err(Error::InvalidArgument("discrete codes must be 0 or 1".into()));
            }
            bce_with_logits(tape, code_hat, codes)
        }
    }
}

/// `mean over pairs of ½‖f(z) - f(z')‖²`; row `i` of each batch shares conditions.
pub fn loss_feature_matching<'t>(f_real: Var<'t>, f_fake: Var<'t>) -> Result<Var<'t>> {
    let (a, b) = (f_real.shape(), f_fake.shape());
    if a != b {
        return Err(Error::ShapeMismatch {
            op: "feature matching",
            lhs: a,
            rhs: b,
        });
    }
    let n = a[0] as Real;
    Ok(f_real.sub(f_fake)?.square().sum().mul_scalar(0.5 / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossTerm {
    Flow,
    Encoder,
    Discriminator,
    Classifier,
    Decoder,
    FeatureMatching,
}

fn one() -> Real {
    1.0
}

/// Per-term weights of the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub flow: Real,
    #[serde(default = "one")]
    pub encoder: Real,
    #[serde(default = "one")]
    pub discriminator: Real,
    #[serde(default = "one")]
    pub classifier: Real,
    #[serde(default = "one")]
    pub decoder: Real,
    #[serde(default = "one")]
    pub feature_matching: Real,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            flow: 1.0,
            encoder: 1.0,
            discriminator: 1.0,
            classifier: 1.0,
            decoder: 1.0,
            feature_matching: 1.0,
        }
    }
}

impl LossWeights {
    pub fn get(&self, term: LossTerm) -> Real {
        match term {
            LossTerm::Flow => self.flow,
            LossTerm::Encoder => self.encoder,
            LossTerm::Discriminator => self.discriminator,
            LossTerm::Classifier => self.classifier,
            LossTerm::Decoder => self.decoder,
            LossTerm::FeatureMatching => self.feature_matching,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("flow", self.flow),
            ("encoder", self.encoder),
            ("discriminator", self.discriminator),
            ("classifier", self.classifier),
            ("decoder", self.decoder),
            ("feature_matching", self.feature_matching),
        ];
        match all.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            Some((name, w)) => Err(Error::InvalidArgument(format!("loss weight {name} = {w} must be >= 0"))),
            None => Ok(()),
        }
    }
}

/// Weighted sum of the active terms.
pub fn total_loss<'t>(tape: &'t Tape, weights: &LossWeights, terms: &[(LossTerm, Var<'t>)]) -> Result<Var<'t>> {
    weights.validate()?;
    let mut total = tape.scalar(0.0);
    for &(term, value) in terms {
        total = total.add(value.mul_scalar(weights.get(term)))?;
    }
    Ok(total)
}
