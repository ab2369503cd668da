use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::Result;

/// One metrics line: `{"step": .., "loss": .., "value": ..}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub loss: String,
    pub value: Real,
}

/// In-memory metrics with an optional line-delimited JSON sink.
#[derive(Default)]
pub struct MetricsLog {
    pub records: Vec<MetricRecord>,
    sink: Option<BufWriter<File>>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        Ok(Self {
            records: Vec::new(),
            sink: Some(BufWriter::new(File::create(path)?)),
        })
    }

    /// Like [`MetricsLog::to_file`], starting the file with a
    /// `{"config_digest": ..}` header line.
    pub fn to_file_with_digest(path: &Path, digest: &str) -> Result<Self> {
        let mut log = Self::to_file(path)?;
        if let Some(w) = &mut log.sink {
            serde_json::to_writer(&mut *w, &LogHeader { config_digest: digest.to_string() })?;
            w.write_all(b"\n")?;
        }
        Ok(log)
    }

    pub fn record(&mut self, step: u64, loss: &str, value: Real) -> Result<()> {
        let rec = MetricRecord {
            step,
            loss: loss.to_string(),
            value,
        };
        if let Some(w) = &mut self.sink {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.sink {
            w.flush()?;
        }
        Ok(())
    }

    /// Values of one loss in step order.
    pub fn series(&self, loss: &str) -> Vec<Real> {
        self.records.iter().filter(|r| r.loss == loss).map(|r| r.value).collect()
    }

    pub fn last(&self, loss: &str) -> Option<Real> {
        self.records.iter().rev().find(|r| r.loss == loss).map(|r| r.value)
    }
}

impl Drop for MetricsLog {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogHeader {
    config_digest: String,
}

/// Parses a metrics file written by [`MetricsLog`], skipping a digest header.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    if lines.peek().is_some_and(|l| serde_json::from_str::<LogHeader>(l).is_ok()) {
        lines.next();
    }
    lines.map(|l| Ok(serde_json::from_str(l)?)).collect()
}
