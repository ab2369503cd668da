//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::condnet::{CodeKind, ConditionSchema, EncoderConfig, SupervisionConfig};
use crate::data::{gen_glyphs, gen_toy2d, load_idx, Dataset};
use crate::error::{Error, Result};
use crate::eval::{OracleConfig, SweepConfig};
use crate::flow::{FlowConfig, Layout};
use crate::rng::SeedStream;
use crate::train::TrainConfig;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "CAGFLOW_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Glow,
    Cglow,
    Caglow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Glyphs {
        identities: usize,
        attributes: Vec<String>,
        samples: usize,
        #[serde(default = "default_glyph_size")]
        size: usize,
    },
    Toy2d {
        classes: usize,
        samples: usize,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep the native 28×28 resolution instead of downsampling to 14×14.
        #[serde(default)]
        full_resolution: bool,
    },
}

fn default_glyph_size() -> usize {
    14
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub scales: usize,
    pub steps: usize,
    pub coupling_width: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            scales: 3,
            steps: 4,
            coupling_width: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionSection {
    /// Unsupervised code count `U`.
    pub codes: usize,
    pub code_kind: CodeKind,
    /// Noise width `E`.
    pub noise: usize,
    pub encoder: EncoderConfig,
    pub supervision: SupervisionConfig,
}

impl Default for ConditionSection {
    fn default() -> Self {
        Self {
            codes: 0,
            code_kind: CodeKind::Continuous,
            noise: 16,
            encoder: EncoderConfig::default(),
            supervision: SupervisionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub condition: ConditionSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

impl ExperimentConfig {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form with `output_dir` blanked, so the
    /// same experiment written to two places shares one digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Applies seed overrides: an explicit flag wins over the environment
    /// value, which wins over the file.
    pub fn apply_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<()> {
        if let Some(s) = flag {
            self.seed = s;
        } else if let Some(v) = env {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetConfig::Glyphs {
                identities,
                attributes,
                size,
                ..
            } => {
                if *identities == 0 {
                    return Err(Error::Config("glyph identities must be positive".into()));
                }
                if ![8, 14, 16].contains(size) {
                    return Err(Error::Config(format!("glyph size {size} not in [8, 14, 16]")));
                }
                for a in attributes {
                    if !crate::data::GLYPH_ATTRIBUTES.contains(&a.as_str()) {
                        return Err(Error::Config(format!("unknown glyph attribute `{a}`")));
                    }
                }
            }
            DatasetConfig::Toy2d { classes, .. } => {
                if *classes < 2 {
                    return Err(Error::Config("toy2d needs at least 2 classes".into()));
                }
            }
            DatasetConfig::Idx { .. } => {}
        }
        if self.flow.scales == 0 || self.flow.steps == 0 || self.flow.coupling_width == 0 {
            return Err(Error::Config("flow scales, steps and coupling_width must be positive".into()));
        }
        if self.model == ModelKind::Caglow && self.condition.noise + self.condition.codes == 0 && self.identities() < 2 {
            return Err(Error::Config("condition carries no information".into()));
        }
        self.train.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Non-fatal notes about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if let DatasetConfig::Idx {
            full_resolution: true, ..
        } = self.dataset
        {
            w.push("full 28x28 resolution: dense couplings over 784 dims are slow".into());
        }
        w
    }

    pub fn identities(&self) -> usize {
        match &self.dataset {
            DatasetConfig::Glyphs { identities, .. } => *identities,
            DatasetConfig::Toy2d { classes, .. } => *classes,
            DatasetConfig::Idx { .. } => 10,
        }
    }

    pub fn stream(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }

    /// Generates or loads the dataset; generated sets depend only on the seed.
    pub fn build_dataset(&self) -> Result<Dataset> {
        let stream = self.stream().split("data");
        match &self.dataset {
            DatasetConfig::Glyphs {
                identities,
                attributes,
                samples,
                size,
            } => {
                let names: Vec<&str> = attributes.iter().map(String::as_str).collect();
                gen_glyphs(stream, *identities, &names, *samples, *size)
            }
            DatasetConfig::Toy2d { classes, samples } => Ok(gen_toy2d(stream, *classes, *samples).0),
            DatasetConfig::Idx {
                images,
                labels,
                full_resolution,
            } => load_idx(images, labels, (!full_resolution).then_some(14)),
        }
    }

    pub fn flow_config(&self, layout: Layout) -> FlowConfig {
        let f = &self.flow;
        if layout.height == 1 && layout.width == 1 {
            FlowConfig::vector(layout.channels, f.steps, f.coupling_width)
        } else {
            FlowConfig::image(layout.height, layout.width, layout.channels, f.scales, f.steps, f.coupling_width)
        }
    }

    pub fn schema(&self, data: &Dataset) -> ConditionSchema {
        ConditionSchema {
            identities: data.num_identities,
            attributes: data.attribute_names.clone(),
            codes: self.condition.codes,
            code_kind: self.condition.code_kind,
            noise: self.condition.noise,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{"model": "caglow", "dataset": {"kind": "toy2d", "classes": 3, "samples": 10}}"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_json(MIN).unwrap();
        assert_eq!(c.flow, FlowSection::default());
        assert_eq!(c.seed, 0);
        let round = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(round, c);
        assert_eq!(round.digest(), c.digest());
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in [
            r#"{"model": "caglow", "dataset": {"kind": "toy2d", "classes": 3, "samples": 10}, "sede": 1}"#,
            r#"{"model": "caglow", "dataset": {"kind": "toy2d", "classes": 3, "samples": 10, "extra": 1}}"#,
            r#"{"model": "caglow", "dataset": {"kind": "toy2d", "classes": 3, "samples": 10}, "train": {"lr": 1}}"#,
            r#"{"model": "caglow", "dataset": {"kind": "toy2d", "classes": 3, "samples": 10}, "flow": {"k": 1}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            r#"{"model": "caglow", "dataset": {"kind": "toy2d", "classes": 1, "samples": 10}}"#,
            r#"{"model": "glow", "dataset": {"kind": "glyphs", "identities": 4, "attributes": [], "samples": 8, "size": 12}}"#,
            r#"{"model": "glow", "dataset": {"kind": "glyphs", "identities": 4, "attributes": ["bold"], "samples": 8}}"#,
            r#"{"model": "glow", "dataset": {"kind": "toy2d", "classes": 3, "samples": 10}, "flow": {"steps": 0}}"#,
            r#"{"model": "glow", "dataset": {"kind": "toy2d", "classes": 3, "samples": 10}, "train": {"batch_size": 0}}"#,
            r#"{"model": "unet", "dataset": {"kind": "toy2d", "classes": 3, "samples": 10}}"#,
        ];
        for b in bad {
            assert!(ExperimentConfig::from_json(b).is_err(), "{b}");
        }
    }

    #[test]
    fn seed_precedence() {
        let mut c = ExperimentConfig::from_json(MIN).unwrap();
        c.apply_seed(None, None).unwrap();
        assert_eq!(c.seed, 0);
        c.apply_seed(None, Some("7")).unwrap();
        assert_eq!(c.seed, 7);
        c.apply_seed(Some(9), Some("7")).unwrap();
        assert_eq!(c.seed, 9);
        assert!(c.apply_seed(None, Some("x")).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = ExperimentConfig::from_json(MIN).unwrap();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let mut c = a.clone();
        c.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.digest(), c.digest());
    }

    #[test]
    fn dataset_and_flow_shapes() {
        let c = ExperimentConfig::from_json(MIN).unwrap();
        let d = c.build_dataset().unwrap();
        assert_eq!(d.len(), 10);
        let f = c.flow_config(d.layout);
        assert!(!f.multiscale);
        let g = ExperimentConfig::from_json(
            r#"{"model": "caglow", "dataset": {"kind": "glyphs", "identities": 3, "attributes": ["thick"], "samples": 6}}"#,
        )
        .unwrap();
        let gd = g.build_dataset().unwrap();
        assert_eq!(gd.dim(), 196);
        assert!(g.flow_config(gd.layout).multiscale);
        assert_eq!(g.schema(&gd).attributes, vec!["thick".to_string()]);
    }
}
