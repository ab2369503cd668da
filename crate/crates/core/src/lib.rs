//! Conditional adversarial generative flow.
//!
//! An exactly invertible multi-scale flow trained by maximum likelihood, a
//! condition encoder that maps (identity, attributes, codes, noise) into the
//! flow's latent space, and a shared-trunk supervision block (discriminator,
//! classifier, code decoder) that trains the encoder adversarially. The crate
//! also carries the two comparison systems (class-prior flow and pre-stored
//! attribute directions), the evaluation metrics, and the dataset generators.
//!
//! Everything is built on the small reverse-mode differentiation core in
//! [`autodiff`].

pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod condnet;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod image;
pub mod nn;
pub mod rng;
pub mod train;

pub use autodiff::{Parameter, Real, Tape, Tensor, Var};
pub use baselines::{AttributeDirections, CGlow};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use condnet::{ConditionBundle, ConditionSchema, Encoder, SupervisionBlock, SupervisionOutput};
pub use data::{Dataset, LabeledSample};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use eval::{MetricReport, OracleClassifier};
pub use flow::{FlowConfig, FlowModel, GaussianPrior, Layout};
pub use rng::SeedStream;
pub use train::TrainConfig;
