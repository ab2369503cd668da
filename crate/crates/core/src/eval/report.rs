use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::metrics::{AmpResult, AttributeAccuracy, ClusterDivergence, FrechetResult};
use super::oracle::OracleValidation;
use crate::autodiff::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Frechet,
    Amp,
    Interference,
    Divergence,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Accuracy,
        MetricKind::Frechet,
        MetricKind::Amp,
        MetricKind::Interference,
        MetricKind::Divergence,
    ];
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Self::Accuracy),
            "frechet" | "fid" => Ok(Self::Frechet),
            "amp" => Ok(Self::Amp),
            "interference" | "delta-amp" => Ok(Self::Interference),
            "divergence" => Ok(Self::Divergence),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

/// Evaluation results; absent fields were not requested.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub model: String,
    pub config_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleValidation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity_accuracy: Option<Real>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attribute_accuracy: Option<AttributeAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frechet: Option<FrechetResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amp: Option<AmpResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_amp: Option<Vec<Real>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_divergence: Option<ClusterDivergence>,
}

impl MetricReport {
    /// Drops every metric not in `keep`.
    pub fn retain(&mut self, keep: &[MetricKind]) {
        if !keep.contains(&MetricKind::Accuracy) {
            self.identity_accuracy = None;
            self.attribute_accuracy = None;
        }
        if !keep.contains(&MetricKind::Frechet) {
            self.frechet = None;
        }
        if !keep.contains(&MetricKind::Amp) {
            self.amp = None;
        }
        if !keep.contains(&MetricKind::Interference) {
            self.delta_amp = None;
        }
        if !keep.contains(&MetricKind::Divergence) {
            self.cluster_divergence = None;
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Two-column aligned text table.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![("model".into(), self.model.clone())];
        if let Some(o) = &self.oracle {
            rows.push(("oracle identity accuracy".into(), format!("{:.4}", o.identity_accuracy)));
            rows.push(("oracle attribute accuracy".into(), join(&o.attribute_accuracy)));
        }
        if let Some(v) = self.identity_accuracy {
            rows.push(("identity accuracy".into(), format!("{v:.4}")));
        }
        if let Some(a) = &self.attribute_accuracy {
            rows.push(("attribute accuracy".into(), join(&a.per_attribute)));
            rows.push(("attribute accuracy (micro)".into(), format!("{:.4}", a.micro)));
            rows.push(("attribute accuracy (macro)".into(), format!("{:.4}", a.macro_balanced)));
        }
        if let Some(f) = &self.frechet {
            rows.push(("frechet distance".into(), format!("{:.6}", f.distance)));
            rows.push((
                "frechet clipped eigenvalues".into(),
                format!("{} (mass {:.3e})", f.clipped, f.clip_mass),
            ));
        }
        if let Some(a) = &self.amp {
            rows.push(("amp per identity".into(), join(&a.per_identity)));
            rows.push(("amp variance".into(), format!("{:.6}", a.variance)));
        }
        if let Some(d) = &self.delta_amp {
            for (t, v) in d.iter().enumerate() {
                rows.push((format!("|delta amp| step {}", t + 1), format!("{v:.6}")));
            }
        }
        if let Some(c) = &self.cluster_divergence {
            rows.push(("cluster divergence".into(), format!("{:.4}", c.value)));
        }
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}

fn join(v: &[Real]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}
