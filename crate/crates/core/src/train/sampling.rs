use crate::autodiff::{Real, Tensor};
use crate::condnet::{ConditionBundle, Encoder};
use crate::error::{Error, Result};
use crate::flow::FlowModel;

/// Images for each row of `cond`: encode, then invert the flow.
pub fn conditional_sample(flow: &FlowModel, enc: &Encoder, cond: &ConditionBundle) -> Result<Tensor> {
    if cond.is_empty() {
        return Err(Error::InvalidArgument("no conditions to sample".into()));
    }
    flow.inverse(&enc.encode(cond)?)
}

/// `steps` images along the straight line between two single-row bundles
/// that share their noise; rows are `t = 0, 1/(steps-1), .., 1`.
pub fn interpolate(
    flow: &FlowModel,
    enc: &Encoder,
    from: &ConditionBundle,
    to: &ConditionBundle,
    steps: usize,
) -> Result<Tensor> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    if from.len() != 1 || to.len() != 1 {
        return Err(Error::InvalidArgument("interpolation endpoints must be single conditions".into()));
    }
    from.validate(&enc.schema)?;
    to.validate(&enc.schema)?;
    if from.noise != to.noise {
        return Err(Error::InvalidArgument("interpolation endpoints must share their noise".into()));
    }
    let frames: Vec<ConditionBundle> = (0..steps)
        .map(|i| from.lerp(to, i as Real / (steps - 1) as Real))
        .collect::<Result<_>>()?;
    let rows: Vec<Tensor> = frames.iter().map(|c| conditional_sample(flow, enc, c)).collect::<Result<_>>()?;
    Tensor::concat_rows(&rows.iter().collect::<Vec<_>>())
}
