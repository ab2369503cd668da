use super::{grads_finite, is_numeric_failure, Adam, Checkpoint, RunContext, TrainConfig, ABORT_AFTER};
use crate::autodiff::{Parameter, Real, Tape, Tensor, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{FlowModel, GaussianPrior};
use crate::nn::Module;
use crate::rng::permutation;

/// A model trained by minimizing a per-batch likelihood objective.
pub trait LikelihoodModel: Module {
    fn flow_mut(&mut self) -> &mut FlowModel;

    /// Scalar batch loss; the reported value is the NLL part in nats.
    fn batch_loss<'t>(&self, tape: &'t Tape, x: &Tensor, data: &Dataset, idx: &[usize]) -> Result<(Var<'t>, Real)>;
}

impl LikelihoodModel for FlowModel {
    fn flow_mut(&mut self) -> &mut FlowModel {
        self
    }

    fn batch_loss<'t>(&self, tape: &'t Tape, x: &Tensor, _: &Dataset, _: &[usize]) -> Result<(Var<'t>, Real)> {
        let out = self.nll_loss(tape, &GaussianPrior::default(), tape.constant(x))?;
        let v = out.loss.item();
        Ok((out.loss, v))
    }
}

/// Maximum-likelihood training of an unconditional flow. Logs the mean
/// training NLL (and bits/dim for 8-bit data) per epoch.
pub fn train_stage1(model: &mut FlowModel, data: &Dataset, cfg: &TrainConfig, ctx: &mut RunContext) -> Result<Checkpoint> {
    fit(model, data, cfg, ctx, "flow")
}

pub(crate) fn fit<M: LikelihoodModel>(
    model: &mut M,
    data: &Dataset,
    cfg: &TrainConfig,
    ctx: &mut RunContext,
    stage: &str,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let dim = model.flow_mut().dim();
    if data.dim() != dim {
        return Err(Error::ShapeMismatch {
            op: "training data",
            lhs: vec![data.len(), data.dim()],
            rhs: vec![0, dim],
        });
    }
    let stream = ctx.stream.split(stage);
    let n = data.len();
    let bs = cfg.batch_size.min(n.max(1));
    if n > 0 && !model.flow_mut().is_initialized() {
        let idx = permutation(n, &mut stream.split("init").rng());
        model.flow_mut().initialize(&data.batch(&idx[..bs], stream.split("init-noise")))?;
    }
    let mut opt = Adam::new(cfg.lr_flow, cfg.betas_flow);
    let mut step: u64 = 0;
    let mut bad = 0;
    let mut last_good = ctx.checkpoint(stage, 0, &[&*model]);
    let cap = cfg.max_steps.map(|s| s as u64);
    'epochs: for epoch in 0..cfg.epochs_flow {
        if n == 0 {
            break;
        }
        let order = permutation(n, &mut stream.split("epoch").split_index(epoch as u64).rng());
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(bs) {
            if cap.is_some_and(|c| step >= c) {
                break 'epochs;
            }
            let x = data.batch(chunk, stream.split("noise").split_index(step));
            let ok = train_step(model, &mut opt, cfg, &x, data, chunk, &mut total, &mut count)?;
            step += 1;
            if ok {
                bad = 0;
            } else {
                bad += 1;
                if bad >= ABORT_AFTER {
                    last_good.restore(model)?;
                    ctx.log.flush()?;
                    return Err(Error::TrainingAborted {
                        consecutive: bad,
                        last_good_step: last_good.meta.step,
                    });
                }
            }
            if cfg.snapshot_every > 0 && step % cfg.snapshot_every as u64 == 0 && bad == 0 {
                last_good = ctx.checkpoint(stage, step, &[&*model]);
                ctx.snapshot(&last_good)?;
            }
        }
        if count > 0 {
            let nll = total / count as Real;
            ctx.log.record(step, "nll", nll)?;
            if data.quantized {
                ctx.log.record(step, "bits_per_dim", crate::flow::bits_per_dim(nll, dim))?;
            }
        }
        if bad == 0 {
            last_good = ctx.checkpoint(stage, step, &[&*model]);
        }
    }
    ctx.log.flush()?;
    let ck = ctx.checkpoint(stage, step, &[&*model]);
    ctx.snapshot(&ck)?;
    Ok(ck)
}

#[allow(clippy::too_many_arguments)]
fn train_step<M: LikelihoodModel>(
    model: &mut M,
    opt: &mut Adam,
    cfg: &TrainConfig,
    x: &Tensor,
    data: &Dataset,
    idx: &[usize],
    total: &mut Real,
    count: &mut usize,
) -> Result<bool> {
    let tape = Tape::new();
    let outcome = model.batch_loss(&tape, x, data, idx).and_then(|(loss, nll)| {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                name: "likelihood".into(),
                step: 0,
            });
        }
        tape.backward(loss)?;
        Ok(nll)
    });
    let mut params: Vec<&mut Parameter> = model.parameters_mut();
    match outcome {
        Ok(nll) => {
            tape.accumulate_into(params.iter_mut().map(|p| &mut **p));
            if !grads_finite(&params) {
                params.iter_mut().for_each(|p| p.tensor.zero_grad());
                return Ok(false);
            }
            if let Some(c) = cfg.grad_clip {
                super::clip_grad_norm(&mut params, c);
            }
            opt.step(params);
            *total += nll * idx.len() as Real;
            *count += idx.len();
            Ok(true)
        }
        Err(e) if is_numeric_failure(&e) => Ok(false),
        Err(e) => Err(e),
    }
}

