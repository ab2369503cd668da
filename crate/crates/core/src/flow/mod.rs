//! Invertible multi-scale flow with exact log-likelihood.
//!
//! Data is carried as `(batch, dim)` matrices; images use a channels-last
//! [`Layout`] so per-channel operations are trailing-axis broadcasts and the
//! channel-mixing linear map is a plain matmul at every spatial site.

mod layers;
mod model;
mod prior;

pub use layers::{ActNorm, Coupling, FlowLayer, InvLinear, LayerKind, Layout, Split, Squeeze};
pub use model::{bits_per_dim, FlowConfig, FlowModel, FlowOutput, NllOutput};
pub use prior::GaussianPrior;
