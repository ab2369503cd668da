use std::path::Path;

use super::Dataset;
use crate::autodiff::{Real, Tensor};
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::flow::Layout;

const STAGE: &str = "dataset";

impl Dataset {
    /// Packs the dataset into the checkpoint container: tensors `x`,
    /// `identities` and `attributes`, labels metadata in `extra`.
    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut meta = CheckpointMeta {
            stage: STAGE.into(),
            seed,
            ..CheckpointMeta::default()
        };
        let layout = serde_json::to_string(&self.layout).expect("layout serializes");
        let names = serde_json::to_string(&self.attribute_names).expect("names serialize");
        meta.extra.insert("layout".into(), layout);
        meta.extra.insert("attribute_names".into(), names);
        meta.extra.insert("num_identities".into(), self.num_identities.to_string());
        meta.extra.insert("quantized".into(), self.quantized.to_string());
        let mut ck = Checkpoint::new(meta);
        let n = self.len();
        ck.insert("x", &self.x);
        let ids = self.identities.iter().map(|&i| i as Real).collect();
        ck.insert("identities", &Tensor::new(vec![n], ids).expect("shape"));
        let attrs = self.attributes.iter().map(|&a| a as Real).collect();
        ck.insert(
            "attributes",
            &Tensor::new(vec![n, self.num_attributes()], attrs).expect("shape"),
        );
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.stage != STAGE {
            return Err(Error::Checkpoint(format!("`{}` is not a dataset cache", ck.meta.stage)));
        }
        let field = |k: &str| {
            ck.meta
                .extra
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("dataset cache lacks `{k}`")))
        };
        let layout: Layout = serde_json::from_str(field("layout")?)?;
        let names: Vec<String> = serde_json::from_str(field("attribute_names")?)?;
        let bad = |k: &str| Error::Checkpoint(format!("dataset cache field `{k}` is malformed"));
        let m: usize = field("num_identities")?.parse().map_err(|_| bad("num_identities"))?;
        let quantized: bool = field("quantized")?.parse().map_err(|_| bad("quantized"))?;
        let identities = ck.get("identities")?.data().iter().map(|&v| v as usize).collect();
        let attributes = ck.get("attributes")?.data().iter().map(|&v| v as u8).collect();
        Dataset::new(ck.get("x")?.clone(), layout, identities, m, attributes, names, quantized)
    }

    pub fn save_cache(&self, path: &Path, seed: u64) -> Result<()> {
        self.to_checkpoint(seed).save(path)
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
