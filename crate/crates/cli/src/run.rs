use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use caglow::baselines::CGlow;
use caglow::condnet::{ConditionSchema, Encoder, SupervisionBlock};
use caglow::config::SEED_ENV;
use caglow::train::{MetricsLog, RunContext};
use caglow::{Checkpoint, Dataset, ExperimentConfig, FlowModel};
use serde::Serialize;

use crate::UsageError;

/// Resolved configuration, dataset and output layout of one invocation.
pub struct Run {
    pub config: ExperimentConfig,
    pub digest: String,
    pub out: PathBuf,
    pub data: Dataset,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Run {
    /// Loads the config, applies `--seed` / `CAGFLOW_SEED` / `--out`
    /// overrides and `edit`, builds the dataset and echoes the resolved
    /// config into the output directory.
    pub fn open(
        config: &Path,
        seed: Option<u64>,
        out: Option<&Path>,
        edit: impl FnOnce(&mut ExperimentConfig),
    ) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(config)?;
        let env = std::env::var(SEED_ENV).ok();
        cfg.apply_seed(seed, env.as_deref())?;
        if let Some(o) = out {
            cfg.output_dir = o.to_path_buf();
        }
        edit(&mut cfg);
        cfg.validate()?;
        for w in cfg.warnings() {
            eprintln!("warning: {w}");
        }
        let digest = cfg.digest();
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        std::fs::write(out.join("config.json"), cfg.to_json() + "\n")?;
        std::fs::write(out.join("config.digest"), format!("{digest}\n"))?;
        let data = cfg.build_dataset()?;
        let (train, val, test) = data.split(cfg.stream().split("split"));
        Ok(Self {
            config: cfg,
            digest,
            out,
            data,
            train,
            val,
            test,
        })
    }

    pub fn dir(&self, name: &str) -> Result<PathBuf> {
        let d = self.out.join(name);
        std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    pub fn context(&self, stage: &str) -> Result<RunContext> {
        let mut ctx = RunContext::new(self.config.stream().split("train"));
        ctx.config_digest = self.digest.clone();
        ctx.log = MetricsLog::to_file_with_digest(&self.dir("logs")?.join(format!("{stage}.jsonl")), &self.digest)?;
        ctx.snapshot_path = Some(self.checkpoint_path(stage)?);
        Ok(ctx)
    }

    pub fn checkpoint_path(&self, stage: &str) -> Result<PathBuf> {
        Ok(self.dir("checkpoints")?.join(format!("{stage}.ckpt")))
    }

    pub fn schema(&self) -> ConditionSchema {
        self.config.schema(&self.data)
    }

    pub fn new_flow(&self) -> Result<FlowModel> {
        Ok(FlowModel::new(
            self.config.flow_config(self.data.layout),
            "flow",
            self.config.stream().split("flow"),
        )?)
    }

    pub fn new_conditional(&self, flow: &FlowModel) -> (Encoder, SupervisionBlock) {
        let schema = self.schema();
        let s = self.config.stream();
        let enc = Encoder::new(&schema, flow.dim(), &self.config.condition.encoder, s.split("encoder"));
        let block = SupervisionBlock::new(&schema, flow.dim(), &self.config.condition.supervision, s.split("supervision"));
        (enc, block)
    }

    pub fn new_cglow(&self) -> Result<CGlow> {
        Ok(CGlow::new(
            self.config.flow_config(self.data.layout),
            self.data.num_identities,
            &self.data.attribute_names,
            self.config.train.cglow_classifier_weight,
            self.config.stream().split("cglow"),
        )?)
    }

    /// Rebuilds the model a checkpoint was written for.
    pub fn load_model(&self, path: &Path) -> Result<LoadedModel> {
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        if ck.meta.config_digest != self.digest {
            eprintln!(
                "warning: {} was written under config {}, current config is {}",
                path.display(),
                short(&ck.meta.config_digest),
                short(&self.digest)
            );
        }
        let model = match ck.meta.stage.as_str() {
            "flow" => LoadedModel::Flow(self.restore_flow(&ck)?),
            "conditional" => {
                let flow = self.restore_flow(&ck)?;
                let (mut enc, mut block) = self.new_conditional(&flow);
                ck.restore(&mut enc)?;
                ck.restore(&mut block)?;
                LoadedModel::Conditional { flow, enc }
            }
            "cglow" => {
                let mut m = self.new_cglow()?;
                ck.restore(&mut m)?;
                m.flow.mark_initialized();
                LoadedModel::CGlow(m)
            }
            other => bail!(UsageError(format!("{} holds a `{other}` checkpoint, not a model", path.display()))),
        };
        Ok(model)
    }

    pub fn restore_flow(&self, ck: &Checkpoint) -> Result<FlowModel> {
        let mut flow = self.new_flow()?;
        ck.restore(&mut flow)?;
        flow.mark_initialized();
        Ok(flow)
    }

    /// Writes `value` as pretty JSON.
    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }
}

pub fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}

pub enum LoadedModel {
    Flow(FlowModel),
    Conditional {
        flow: FlowModel,
        enc: Encoder,
    },
    CGlow(CGlow),
}

impl LoadedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            LoadedModel::Flow(_) => "glow",
            LoadedModel::Conditional { .. } => "caglow",
            LoadedModel::CGlow(_) => "cglow",
        }
    }
}
