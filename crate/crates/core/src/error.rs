use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("empty reduction over axes {axes:?} of shape {shape:?}")]
    EmptyReduction { shape: Vec<usize>, axes: Vec<usize> },

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("singular transform: zero pivot at index {pivot}")]
    SingularTransform { pivot: usize },

    #[error("flow diverged: non-finite activations after layer {layer}")]
    FlowDiverged { layer: usize },

    #[error("non-finite loss `{name}` at step {step}")]
    NonFiniteLoss { name: String, step: u64 },

    #[error("training aborted after {consecutive} consecutive non-finite steps (last good step {last_good_step})")]
    TrainingAborted {
        consecutive: usize,
        last_good_step: u64,
    },

    #[error("flow not frozen: parameter `{0}` carries a gradient")]
    FlowNotFrozen(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("undefined direction for attribute `{0}`: one side has no samples")]
    UndefinedDirection(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("oracle validity floor unmet: {metric} = {value:.4} < {floor:.4}")]
    OracleBelowFloor {
        metric: String,
        value: f64,
        floor: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
