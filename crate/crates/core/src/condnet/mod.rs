//! Condition encoder, the shared-trunk supervision block and their losses.

mod bundle;
mod losses;
mod networks;

pub use bundle::{CodeKind, ConditionBundle, ConditionSchema};
pub use losses::{
    classifier_term, loss_classifier, loss_decoder, loss_discriminator, loss_encoder, loss_feature_matching,
    total_loss, LossTerm, LossWeights, PROB_CLAMP,
};
pub use networks::{Encoder, EncoderConfig, SupervisionBlock, SupervisionConfig, SupervisionOutput};
