use std::collections::BTreeMap;

use super::{grads_finite, Adam, Checkpoint, RunContext, TrainConfig, ABORT_AFTER};
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::condnet::{
    classifier_term, loss_decoder, loss_discriminator, loss_encoder, loss_feature_matching, total_loss,
    ConditionBundle, Encoder, LossTerm, SupervisionBlock,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{FlowModel, GaussianPrior};
use crate::nn::Module;
use crate::rng::{permutation, SeedStream};

struct Batch {
    x: Tensor,
    ids: Vec<usize>,
    attrs: Tensor,
    attr_rows: Vec<Vec<u8>>,
}

fn batch(data: &Dataset, idx: &[usize], stream: SeedStream) -> Batch {
    Batch {
        x: data.batch(idx, stream),
        ids: idx.iter().map(|&i| data.identities[i]).collect(),
        attrs: data.attribute_tensor(idx),
        attr_rows: idx.iter().map(|&i| data.attribute_row(i).to_vec()).collect(),
    }
}

#[derive(Default)]
struct Means(BTreeMap<&'static str, (Real, usize)>);

impl Means {
    fn add(&mut self, name: &'static str, v: Real) {
        let e = self.0.entry(name).or_default();
        e.0 += v;
        e.1 += 1;
    }
}

/// Adversarial training of the condition encoder against the supervision
/// block on latents of a (by default frozen) pretrained flow. One epoch
/// alternates `supervision_steps` supervision updates with one encoder update
/// per batch.
pub fn train_stage2(
    flow: &mut FlowModel,
    enc: &mut Encoder,
    block: &mut SupervisionBlock,
    data: &Dataset,
    cfg: &TrainConfig,
    ctx: &mut RunContext,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let schema = enc.schema.clone();
    if data.num_identities != schema.identities || data.attribute_names != schema.attributes {
        return Err(Error::InvalidArgument(format!(
            "dataset conditions ({} identities, {:?}) do not match the encoder schema ({} identities, {:?})",
            data.num_identities, data.attribute_names, schema.identities, schema.attributes
        )));
    }
    if enc.latent_dim() != flow.dim() {
        return Err(Error::ShapeMismatch {
            op: "encoder latent",
            lhs: vec![enc.latent_dim()],
            rhs: vec![flow.dim()],
        });
    }
    if !flow.is_initialized() {
        return Err(Error::InvalidArgument("stage 2 needs a trained flow".into()));
    }
    let was_trainable: Vec<bool> = flow.parameters().iter().map(|p| p.trainable()).collect();
    if !cfg.joint_finetune {
        if let Some(p) = flow.parameters().into_iter().find(|p| p.tensor.grad().is_some()) {
            return Err(Error::FlowNotFrozen(p.name.clone()));
        }
        flow.set_trainable(false);
    }
    let result = run(flow, enc, block, data, cfg, ctx);
    for (p, on) in flow.parameters_mut().into_iter().zip(was_trainable) {
        p.set_trainable(on);
    }
    result
}

fn run(
    flow: &mut FlowModel,
    enc: &mut Encoder,
    block: &mut SupervisionBlock,
    data: &Dataset,
    cfg: &TrainConfig,
    ctx: &mut RunContext,
) -> Result<Checkpoint> {
    let w = cfg.weights;
    let schema = enc.schema.clone();
    let stream = ctx.stream.split("stage2");
    let n = data.len();
    let bs = cfg.batch_size.min(n.max(1));
    let prior = GaussianPrior::default();
    let mut opt_sup = Adam::new(cfg.lr_supervision, cfg.betas_adversarial);
    let mut opt_enc = Adam::new(cfg.lr_encoder, cfg.betas_adversarial);
    let mut opt_flow = Adam::new(cfg.lr_flow, cfg.betas_flow);
    let cap = cfg.max_steps.map(|s| s as u64);
    let mut step: u64 = 0;
    let mut bad = 0;
    let mut last_good = ctx.checkpoint("conditional", 0, &[&*enc, &*block]);
    'epochs: for epoch in 0..cfg.epochs_cond {
        if n == 0 {
            break;
        }
        let order = permutation(n, &mut stream.split("epoch").split_index(epoch as u64).rng());
        let mut means = Means::default();
        for chunk in order.chunks(bs) {
            if cap.is_some_and(|c| step >= c) {
                break 'epochs;
            }
            let s = stream.split("step").split_index(step);
            step += 1;
            let mut finite = true;

            for k in 0..cfg.supervision_steps {
                let ks = s.split("supervision").split_index(k as u64);
                let idx: Vec<usize> = if k == 0 {
                    chunk.to_vec()
                } else {
                    let extra = permutation(n, &mut ks.split("batch").rng());
                    extra[..bs].to_vec()
                };
                let b = batch(data, &idx, ks.split("noise"));
                let cond = ConditionBundle::from_labels(&schema, &b.ids, &b.attr_rows, ks.split("cond"))?;
                let tape = Tape::new();
                let x = tape.constant(&b.x);
                let z_real = if cfg.joint_finetune {
                    flow.forward(&tape, x)?.z
                } else {
                    tape.constant(&flow.forward_values(&b.x)?.0)
                };
                let z_fake = tape.constant(&enc.encode(&cond)?);
                let real = block.supervise(&tape, z_real)?;
                let fake = block.supervise(&tape, z_fake)?;
                let l_di = loss_discriminator(real.p_real(), fake.p_real())?;
                let c_real = classifier_term(&tape, &real, &b.ids, &b.attrs)?;
                let c_fake = classifier_term(&tape, &fake, &b.ids, &b.attrs)?;
                let mut terms = vec![
                    (LossTerm::Discriminator, l_di),
                    (LossTerm::Classifier, c_real.add(c_fake)?),
                ];
                if let Some(hat) = fake.code_hat {
                    terms.push((LossTerm::Decoder, loss_decoder(&tape, hat, &cond.codes, schema.code_kind)?));
                }
                let loss = total_loss(&tape, &w, &terms)?;
                if k == 0 {
                    means.add("supervision", loss.item());
                    means.add("discriminator", l_di.item());
                    means.add("classifier_real", c_real.item());
                    means.add("d_real", real.p_real().mean().item());
                    means.add("d_fake", fake.p_real().mean().item());
                }
                if !loss.is_finite() {
                    finite = false;
                    break;
                }
                tape.backward(loss)?;
                let mut params = block.parameters_mut();
                tape.accumulate_into(params.iter_mut().map(|p| &mut **p));
                if !grads_finite(&params) {
                    params.iter_mut().for_each(|p| p.tensor.zero_grad());
                    finite = false;
                    break;
                }
                opt_sup.step(params);

                if cfg.joint_finetune {
                    tape.zero_grad();
                    let nll = flow.nll_loss(&tape, &prior, x)?.loss;
                    let fl = total_loss(&tape, &w, &[(LossTerm::Flow, nll), (LossTerm::Classifier, c_real)])?;
                    tape.backward(fl)?;
                    let mut fp = flow.parameters_mut();
                    tape.accumulate_into(fp.iter_mut().map(|p| &mut **p));
                    if let Some(c) = cfg.grad_clip {
                        super::clip_grad_norm(&mut fp, c);
                    }
                    opt_flow.step(fp);
                }
            }

            if finite {
                let es = s.split("encoder");
                let b = batch(data, chunk, es.split("noise"));
                let z_real = flow.forward_values(&b.x)?.0;
                let cond = ConditionBundle::from_labels(&schema, &b.ids, &b.attr_rows, es.split("cond"))?;
                let tape = Tape::new();
                let z_fake = enc.forward(&tape, &cond)?;
                let fake = block.supervise(&tape, z_fake)?;
                let real_f: Var = block.features(&tape, tape.constant(&z_real))?;
                let l_e = loss_encoder(fake.p_real());
                let l_fm = loss_feature_matching(real_f, fake.features)?;
                let mut terms = vec![(LossTerm::Encoder, l_e), (LossTerm::FeatureMatching, l_fm)];
                if cfg.encoder_fake_classifier {
                    let c = classifier_term(&tape, &fake, &b.ids, &b.attrs)?;
                    means.add("classifier_fake", c.item());
                    terms.push((LossTerm::Classifier, c));
                }
                if let Some(hat) = fake.code_hat {
                    let d = loss_decoder(&tape, hat, &cond.codes, schema.code_kind)?;
                    means.add("decoder", d.item());
                    terms.push((LossTerm::Decoder, d));
                }
                let loss = total_loss(&tape, &w, &terms)?;
                means.add("encoder", l_e.item());
                means.add("feature_matching", l_fm.item());
                if loss.is_finite() {
                    tape.backward(loss)?;
                    let mut params = enc.parameters_mut();
                    tape.accumulate_into(params.iter_mut().map(|p| &mut **p));
                    if grads_finite(&params) {
                        opt_enc.step(params);
                    } else {
                        params.iter_mut().for_each(|p| p.tensor.zero_grad());
                        finite = false;
                    }
                } else {
                    finite = false;
                }
            }

            if finite {
                bad = 0;
            } else {
                bad += 1;
                if bad >= ABORT_AFTER {
                    last_good.restore(enc)?;
                    last_good.restore(block)?;
                    ctx.log.flush()?;
                    return Err(Error::TrainingAborted {
                        consecutive: bad,
                        last_good_step: last_good.meta.step,
                    });
                }
            }
            if cfg.snapshot_every > 0 && step % cfg.snapshot_every as u64 == 0 && bad == 0 {
                last_good = ctx.checkpoint("conditional", step, &[&*enc, &*block]);
                ctx.snapshot(&last_good)?;
            }
        }
        for (name, (sum, count)) in &means.0 {
            ctx.log.record(step, name, sum / *count as Real)?;
        }
        if bad == 0 {
            last_good = ctx.checkpoint("conditional", step, &[&*enc, &*block]);
        }
    }
    ctx.log.flush()?;
    let mut modules: Vec<&dyn Module> = vec![&*enc, &*block];
    if cfg.joint_finetune {
        modules.push(&*flow);
    }
    let ck = ctx.checkpoint("conditional", step, &modules);
    ctx.snapshot(&ck)?;
    Ok(ck)
}
