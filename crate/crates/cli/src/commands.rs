use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use caglow::baselines::{compute_attribute_directions, manipulate as prestore_manipulate, parse_edits, train_cglow};
use caglow::condnet::ConditionBundle;
use caglow::config::ModelKind;
use caglow::eval::{
    conditional_manipulation, cumulative_interference, default_edits, frechet_feature_distance, generator_metrics,
    neutral_rows, EncoderGenerator, ManipulationRun, MetricKind, MetricReport, OracleClassifier, PriorGenerator,
};
use caglow::flow::GaussianPrior;
use caglow::image::{tile, GridShape};
use caglow::train::{conditional_sample, interpolate as interpolate_frames, train_stage1, train_stage2};
use caglow::{Checkpoint, Real, Tensor};
use serde::Serialize;

use crate::condspec::ConditionSpec;
use crate::run::{short, LoadedModel, Run};
use crate::{Common, UsageError};

fn open(c: &Common, edit: impl FnOnce(&mut caglow::ExperimentConfig)) -> Result<Run> {
    Run::open(&c.config, c.seed, c.out.as_deref(), edit)
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn save_checkpoint(run: &Run, stage: &str, ck: &Checkpoint) -> Result<()> {
    let path = run.checkpoint_path(stage)?;
    ck.save(&path)?;
    println!("wrote {} (step {}, config {})", path.display(), ck.meta.step, short(&run.digest));
    Ok(())
}

pub fn train_flow(c: &Common, epochs: Option<usize>) -> Result<()> {
    let run = open(c, |cfg| {
        if let Some(e) = epochs {
            cfg.train.epochs_flow = e;
        }
    })?;
    if run.config.model == ModelKind::Cglow {
        bail!(usage("model `cglow` is trained end to end with train-baseline"));
    }
    let mut flow = run.new_flow()?;
    let mut ctx = run.context("flow")?;
    let ck = train_stage1(&mut flow, &run.train, &run.config.train, &mut ctx)?;
    save_checkpoint(&run, "flow", &ck)?;
    if let Some(nll) = ctx.log.last("nll") {
        println!("final training nll {nll:.4} nats");
    }
    Ok(())
}

pub fn train_cond(c: &Common, flow_ckpt: &Path, epochs: Option<usize>) -> Result<()> {
    let run = open(c, |cfg| {
        if let Some(e) = epochs {
            cfg.train.epochs_cond = e;
        }
    })?;
    if run.config.model != ModelKind::Caglow {
        bail!(usage(format!("train-cond needs model `caglow`, config has {:?}", run.config.model)));
    }
    let fck = Checkpoint::load(flow_ckpt).with_context(|| format!("loading {}", flow_ckpt.display()))?;
    if fck.meta.stage != "flow" {
        bail!(usage(format!("{} is a `{}` checkpoint, expected `flow`", flow_ckpt.display(), fck.meta.stage)));
    }
    let mut flow = run.restore_flow(&fck)?;
    let (mut enc, mut block) = run.new_conditional(&flow);
    let mut ctx = run.context("conditional")?;
    let mut ck = train_stage2(&mut flow, &mut enc, &mut block, &run.train, &run.config.train, &mut ctx)?;
    ck.add_module(&flow);
    ck.meta.extra.insert("flow_config_digest".into(), fck.meta.config_digest.clone());
    save_checkpoint(&run, "conditional", &ck)?;
    Ok(())
}

pub fn train_baseline(c: &Common, epochs: Option<usize>) -> Result<()> {
    let run = open(c, |cfg| {
        if let Some(e) = epochs {
            cfg.train.epochs_flow = e;
        }
    })?;
    let mut model = run.new_cglow()?;
    let mut ctx = run.context("cglow")?;
    let ck = train_cglow(&mut model, &run.train, &run.config.train, &mut ctx)?;
    save_checkpoint(&run, "cglow", &ck)?;
    Ok(())
}

#[derive(Serialize)]
struct Cell {
    index: usize,
    row: usize,
    col: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    identity: Option<usize>,
    attributes: BTreeMap<String, Real>,
    codes: Vec<Real>,
    noise: Vec<Real>,
}

#[derive(Serialize)]
struct Sidecar {
    command: &'static str,
    model: &'static str,
    config_digest: String,
    seed: u64,
    checkpoint_stage: String,
    checkpoint_step: u64,
    grid: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<Real>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    edits: Vec<String>,
    cells: Vec<Cell>,
}

fn bundle_cells(b: &ConditionBundle, names: &[String], grid: GridShape) -> Vec<Cell> {
    let ids = b.identity_labels();
    (0..b.len())
        .map(|i| Cell {
            index: i,
            row: i / grid.cols,
            col: i % grid.cols,
            identity: Some(ids[i]),
            attributes: names.iter().cloned().zip(b.attributes.row(i).iter().copied()).collect(),
            codes: b.codes.row(i).to_vec(),
            noise: b.noise.row(i).to_vec(),
        })
        .collect()
}

fn label_cells(n: usize, id: Option<usize>, names: &[String], flags: &[u8], grid: GridShape) -> Vec<Cell> {
    (0..n)
        .map(|i| Cell {
            index: i,
            row: i / grid.cols,
            col: i % grid.cols,
            identity: id,
            attributes: names.iter().cloned().zip(flags.iter().map(|&f| f as Real)).collect(),
            codes: Vec::new(),
            noise: Vec::new(),
        })
        .collect()
}

fn write_grid(run: &Run, name: &str, images: &Tensor, grid: GridShape, sidecar: &Sidecar) -> Result<()> {
    let dir = run.dir("samples")?;
    let img = tile(images, run.data.layout, grid, 1)?;
    let comment = format!("config_digest {}\nseed {}", run.digest, run.config.seed);
    let pgm = dir.join(format!("{name}.pgm"));
    std::fs::write(&pgm, img.to_pgm_with_comment(&comment))?;
    run.write_json(&dir.join(format!("{name}.json")), sidecar)?;
    println!("wrote {} ({}x{} grid) and its sidecar", pgm.display(), grid.rows, grid.cols);
    Ok(())
}

pub fn sample(
    c: &Common,
    checkpoint: &Path,
    n: usize,
    grid: Option<&str>,
    condition: &str,
    temperature: Option<Real>,
    name: &str,
) -> Result<()> {
    if n == 0 {
        bail!(usage("--n must be positive"));
    }
    let spec: ConditionSpec = condition.parse()?;
    let grid = match grid {
        Some(g) => g.parse::<GridShape>()?,
        None => GridShape::fit(n),
    };
    if grid.cells() < n {
        bail!(usage(format!("{n} samples do not fit a {}x{} grid", grid.rows, grid.cols)));
    }
    let run = open(c, |_| {})?;
    let model = run.load_model(checkpoint)?;
    let ck_meta = Checkpoint::load(checkpoint)?.meta;
    let stream = run.config.stream().split("sample");
    let names = &run.data.attribute_names;
    let tau = temperature.unwrap_or(run.config.train.grid_temperature);
    if !(tau > 0.0) {
        bail!(usage("--temperature must be positive"));
    }
    let (x, cells, temperature) = match &model {
        LoadedModel::Conditional { flow, enc, .. } => {
            let b = spec.bundle(&enc.schema, n, stream)?;
            (conditional_sample(flow, enc, &b)?, bundle_cells(&b, names, grid), None)
        }
        LoadedModel::CGlow(m) => {
            if !spec.codes.is_empty() {
                bail!(usage("the class-prior model has no unsupervised codes"));
            }
            let (id, flags) = spec.labels(run.data.num_identities, names)?;
            let x = m.sample(&vec![id; n], &vec![flags.clone(); n], tau, stream)?;
            (x, label_cells(n, Some(id), names, &flags, grid), Some(tau))
        }
        LoadedModel::Flow(flow) => {
            if !spec.is_empty() {
                bail!(usage("an unconditional flow takes no --condition"));
            }
            let x = flow.sample(&GaussianPrior::new(tau), n, stream)?;
            (x, label_cells(n, None, &[], &[], grid), Some(tau))
        }
    };
    let sidecar = Sidecar {
        command: "sample",
        model: model.kind(),
        config_digest: run.digest.clone(),
        seed: run.config.seed,
        checkpoint_stage: ck_meta.stage,
        checkpoint_step: ck_meta.step,
        grid: format!("{}x{}", grid.rows, grid.cols),
        temperature,
        edits: Vec::new(),
        cells,
    };
    write_grid(&run, name, &x, grid, &sidecar)
}

pub fn interpolate(c: &Common, checkpoint: &Path, steps: usize, from: &str, to: &str, name: &str) -> Result<()> {
    if steps < 2 {
        bail!(usage("--steps must be at least 2"));
    }
    let (from, to): (ConditionSpec, ConditionSpec) = (from.parse()?, to.parse()?);
    let run = open(c, |_| {})?;
    let model = run.load_model(checkpoint)?;
    let LoadedModel::Conditional { flow, enc, .. } = &model else {
        bail!(usage(format!("interpolate needs a conditional checkpoint, got `{}`", model.kind())));
    };
    let stream = run.config.stream().split("sample");
    let a = from.bundle(&enc.schema, 1, stream.clone())?;
    let b = to.bundle(&enc.schema, 1, stream)?;
    let x = interpolate_frames(flow, enc, &a, &b, steps)?;
    let grid = GridShape { rows: 1, cols: steps };
    let frames: Vec<ConditionBundle> = (0..steps)
        .map(|i| a.lerp(&b, i as Real / (steps - 1) as Real))
        .collect::<caglow::Result<_>>()?;
    let mut cells = Vec::with_capacity(steps);
    for (i, f) in frames.iter().enumerate() {
        let mut cell = bundle_cells(f, &run.data.attribute_names, grid).remove(0);
        cell.index = i;
        cell.col = i;
        cell.identity = None;
        cells.push(cell);
    }
    let ck_meta = Checkpoint::load(checkpoint)?.meta;
    let sidecar = Sidecar {
        command: "interpolate",
        model: model.kind(),
        config_digest: run.digest.clone(),
        seed: run.config.seed,
        checkpoint_stage: ck_meta.stage,
        checkpoint_step: ck_meta.step,
        grid: format!("1x{steps}"),
        temperature: None,
        edits: Vec::new(),
        cells,
    };
    write_grid(&run, name, &x, grid, &sidecar)
}

pub fn manipulate(
    c: &Common,
    checkpoint: &Path,
    attrs: &str,
    alpha: Real,
    condition: &str,
    index: usize,
    name: &str,
) -> Result<()> {
    let edits = parse_edits(attrs)?;
    if edits.is_empty() {
        bail!(usage("--attrs names at least one edit"));
    }
    if !alpha.is_finite() {
        bail!(usage("--alpha must be finite"));
    }
    let spec: ConditionSpec = condition.parse()?;
    let run = open(c, |_| {})?;
    let names = &run.data.attribute_names;
    if let Some(e) = edits.iter().find(|e| !names.contains(&e.attribute)) {
        return Err(caglow::Error::UnknownAttribute(e.attribute.clone()).into());
    }
    let model = run.load_model(checkpoint)?;
    let frames = match &model {
        LoadedModel::Conditional { flow, enc, .. } => {
            let start = spec.bundle(&enc.schema, 1, run.config.stream().split("sample"))?;
            conditional_manipulation(flow, enc, &start, &edits, alpha)?
        }
        other => {
            if !spec.is_empty() {
                bail!(usage("--condition applies to conditional checkpoints; use --index to pick a test image"));
            }
            if index >= run.test.len() {
                bail!(usage(format!("--index {index} out of range for {} test images", run.test.len())));
            }
            let x = run.test.x.select_rows(&[index]);
            match other {
                LoadedModel::CGlow(m) => m.manipulate(&x, &edits, alpha)?,
                LoadedModel::Flow(flow) => {
                    let dirs = compute_attribute_directions(flow, &run.train)?;
                    prestore_manipulate(flow, &x, &dirs, &edits, alpha)?
                }
                LoadedModel::Conditional { .. } => unreachable!(),
            }
        }
    };
    let strip = Tensor::concat_rows(&frames.iter().collect::<Vec<_>>())?;
    let grid = GridShape {
        rows: 1,
        cols: frames.len(),
    };
    let ck_meta = Checkpoint::load(checkpoint)?.meta;
    let edit_names: Vec<String> = edits
        .iter()
        .map(|e| format!("{}{}", if e.sign > 0.0 { "+" } else { "-" }, e.attribute))
        .collect();
    let sidecar = Sidecar {
        command: "manipulate",
        model: model.kind(),
        config_digest: run.digest.clone(),
        seed: run.config.seed,
        checkpoint_stage: ck_meta.stage,
        checkpoint_step: ck_meta.step,
        grid: format!("1x{}", frames.len()),
        temperature: None,
        edits: edit_names,
        cells: Vec::new(),
    };
    write_grid(&run, name, &strip, grid, &sidecar)
}

pub fn eval(c: &Common, checkpoint: &Path, metrics: &[String], train_oracle: bool, oracle: Option<&Path>) -> Result<()> {
    let kinds: Vec<MetricKind> = if metrics.is_empty() {
        MetricKind::ALL.to_vec()
    } else {
        metrics.iter().map(|m| m.trim().parse()).collect::<caglow::Result<_>>()?
    };
    if !train_oracle && oracle.is_none() {
        bail!(usage("eval needs --train-oracle or --oracle <checkpoint>"));
    }
    let run = open(c, |_| {})?;
    let model = run.load_model(checkpoint)?;
    let stream = run.config.stream().split("eval");
    let oracle = match oracle {
        Some(p) => OracleClassifier::from_checkpoint(&Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?)?,
        None => {
            let o = OracleClassifier::train(&run.train, &run.val, &run.config.oracle, stream.split("oracle"))?;
            let path = run.checkpoint_path("oracle")?;
            o.to_checkpoint(run.config.seed, &run.digest).save(&path)?;
            println!("wrote {}", path.display());
            o
        }
    };
    if let Some(v) = &oracle.validation {
        println!(
            "oracle validation: identity {:.4} (floor {:.2}), attributes {:?} (floor {:.2})",
            v.identity_accuracy, v.identity_floor, v.attribute_accuracy, v.attribute_floor
        );
    }
    if let Err(e) = oracle.ensure_valid() {
        eprintln!("report withheld: the oracle does not meet its validity floor");
        return Err(e.into());
    }
    let sweep = &run.config.sweep;
    let names = &run.data.attribute_names;
    let neutral = neutral_rows(&run.test);
    let edits = default_edits(names);
    let mut report = match &model {
        LoadedModel::Conditional { flow, enc, .. } => {
            let g = EncoderGenerator { flow, encoder: enc };
            let mut r = generator_metrics(&g, &oracle, &run.test, sweep, stream.split("sweep"))?;
            if kinds.contains(&MetricKind::Interference) && !edits.is_empty() && !neutral.is_empty() {
                let ids: Vec<usize> = neutral.iter().map(|&i| run.test.identities[i]).collect();
                let start = ConditionBundle::from_labels(&enc.schema, &ids, &vec![vec![0; names.len()]; ids.len()], stream.split("manipulate"))?;
                let frames = conditional_manipulation(flow, enc, &start, &edits, 1.0)?;
                r.delta_amp = Some(interference(&oracle, frames, &edits)?);
            }
            r
        }
        LoadedModel::CGlow(m) => {
            let g = PriorGenerator {
                model: m,
                temperature: run.config.train.temperature,
            };
            let mut r = generator_metrics(&g, &oracle, &run.test, sweep, stream.split("sweep"))?;
            if kinds.contains(&MetricKind::Interference) && !edits.is_empty() && !neutral.is_empty() {
                let frames = m.manipulate(&run.test.x.select_rows(&neutral), &edits, 1.0)?;
                r.delta_amp = Some(interference(&oracle, frames, &edits)?);
            }
            r
        }
        LoadedModel::Flow(flow) => {
            let prior = GaussianPrior::new(run.config.train.temperature);
            let x = flow.sample(&prior, run.test.len().max(2), stream.split("sweep"))?;
            let mut r = MetricReport {
                frechet: Some(frechet_feature_distance(&oracle, &run.test.x, &x)?),
                ..MetricReport::default()
            };
            if kinds.contains(&MetricKind::Interference) && !edits.is_empty() && !neutral.is_empty() {
                let dirs = compute_attribute_directions(flow, &run.train)?;
                let frames = prestore_manipulate(flow, &run.test.x.select_rows(&neutral), &dirs, &edits, 1.0)?;
                r.delta_amp = Some(interference(&oracle, frames, &edits)?);
            }
            r
        }
    };
    report.model = model.kind().to_string();
    report.config_digest = run.digest.clone();
    report.oracle = oracle.validation.clone();
    report.retain(&kinds);
    let path = run.dir("reports")?.join(format!("{}.json", model.kind()));
    report.save(&path)?;
    print!("{}", report.to_table());
    println!("wrote {}", path.display());
    Ok(())
}

fn interference(oracle: &OracleClassifier, frames: Vec<Tensor>, edits: &[caglow::baselines::AttributeEdit]) -> Result<Vec<Real>> {
    let run = ManipulationRun {
        frames,
        changed: edits.iter().map(|e| e.attribute.clone()).collect(),
    };
    Ok(cumulative_interference(oracle, &[run])?)
}
