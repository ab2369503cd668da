//! Two-stage training, optimizers, metric logging and sampling entry points.

mod log;
mod optim;
mod sampling;
mod stage1;
mod stage2;

pub use self::log::{read_metrics, MetricRecord, MetricsLog};
pub use optim::{clip_grad_norm, grad_norm, Adam};
pub use sampling::{conditional_sample, interpolate};
pub use stage1::train_stage1;
pub(crate) use stage1::fit;
pub use stage1::LikelihoodModel;
pub use stage2::train_stage2;

pub use crate::checkpoint::{Checkpoint, CheckpointMeta};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::condnet::LossWeights;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::rng::SeedStream;

/// Number of consecutive non-finite steps that aborts a run.
pub const ABORT_AFTER: usize = 3;

fn d_epochs_flow() -> usize {
    20
}
fn d_epochs_cond() -> usize {
    30
}
fn d_batch() -> usize {
    64
}
fn d_lr_flow() -> Real {
    1e-3
}
fn d_lr_adv() -> Real {
    2e-4
}
fn d_betas_flow() -> (Real, Real) {
    (0.9, 0.999)
}
fn d_betas_adv() -> (Real, Real) {
    (0.5, 0.999)
}
fn d_clip() -> Option<Real> {
    Some(50.0)
}
fn d_one() -> usize {
    1
}
fn d_true() -> bool {
    true
}
fn d_tau_metric() -> Real {
    1.0
}
fn d_tau_grid() -> Real {
    0.7
}
fn d_cglow_weight() -> Real {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs_flow")]
    pub epochs_flow: usize,
    #[serde(default = "d_epochs_cond")]
    pub epochs_cond: usize,
    /// Hard cap on optimizer steps per stage.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr_flow")]
    pub lr_flow: Real,
    #[serde(default = "d_lr_adv")]
    pub lr_encoder: Real,
    #[serde(default = "d_lr_adv")]
    pub lr_supervision: Real,
    #[serde(default = "d_betas_flow")]
    pub betas_flow: (Real, Real),
    #[serde(default = "d_betas_adv")]
    pub betas_adversarial: (Real, Real),
    /// Global gradient-norm cap for the flow.
    #[serde(default = "d_clip")]
    pub grad_clip: Option<Real>,
    #[serde(default)]
    pub weights: LossWeights,
    /// Supervision-player steps per encoder step.
    #[serde(default = "d_one")]
    pub supervision_steps: usize,
    /// Include the fake-batch classification term in the encoder objective.
    #[serde(default = "d_true")]
    pub encoder_fake_classifier: bool,
    /// Let stage 2 update the flow as well (ablation).
    #[serde(default)]
    pub joint_finetune: bool,
    /// Weight of the latent classifier in the class-prior baseline.
    #[serde(default = "d_cglow_weight")]
    pub cglow_classifier_weight: Real,
    #[serde(default = "d_tau_metric")]
    pub temperature: Real,
    #[serde(default = "d_tau_grid")]
    pub grid_temperature: Real,
    /// Snapshot cadence in optimizer steps; 0 writes only at the end.
    #[serde(default)]
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as Real),
            ("temperature", self.temperature),
            ("grid_temperature", self.grid_temperature),
            ("supervision_steps", self.supervision_steps as Real),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let nonneg = [
            ("lr_flow", self.lr_flow),
            ("lr_encoder", self.lr_encoder),
            ("lr_supervision", self.lr_supervision),
            ("cglow_classifier_weight", self.cglow_classifier_weight),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        for (name, (b1, b2)) in [("betas_flow", self.betas_flow), ("betas_adversarial", self.betas_adversarial)] {
            if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Per-run plumbing shared by the training stages.
pub struct RunContext {
    pub stream: SeedStream,
    pub config_digest: String,
    pub log: MetricsLog,
    /// Where periodic snapshots are written (overwritten in place).
    pub snapshot_path: Option<PathBuf>,
}

impl RunContext {
    pub fn new(stream: SeedStream) -> Self {
        Self {
            stream,
            config_digest: String::new(),
            log: MetricsLog::new(),
            snapshot_path: None,
        }
    }

    pub(crate) fn checkpoint(&self, stage: &str, step: u64, modules: &[&dyn Module]) -> Checkpoint {
        let mut ck = Checkpoint::new(CheckpointMeta {
            stage: stage.to_string(),
            step,
            seed: self.stream.seed(),
            config_digest: self.config_digest.clone(),
            extra: Default::default(),
        });
        for m in modules {
            ck.add_module(*m);
        }
        ck
    }

    pub(crate) fn snapshot(&self, ck: &Checkpoint) -> Result<()> {
        if let Some(p) = &self.snapshot_path {
            ck.save(p)?;
        }
        Ok(())
    }
}

pub(crate) fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::NonFiniteLoss { .. } | Error::FlowDiverged { .. })
}

pub(crate) fn grads_finite(params: &[&mut crate::autodiff::Parameter]) -> bool {
    params
        .iter()
        .filter_map(|p| p.tensor.grad())
        .all(|g| g.iter().all(|v| v.is_finite()))
}
