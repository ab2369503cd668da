//! The evaluation sweep shared by the `eval` command and the acceptance suite.

use serde::{Deserialize, Serialize};

use super::generators::ConditionalGenerator;
use super::metrics::{amp, attribute_accuracy, cluster_divergence, frechet_feature_distance, top1_accuracy};
use super::oracle::OracleClassifier;
use super::report::MetricReport;
use crate::autodiff::{Real, Tensor};
use crate::baselines::AttributeEdit;
use crate::condnet::{CodeKind, ConditionBundle, Encoder};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::{FlowModel, Layout};
use crate::rng::SeedStream;
use crate::train::conditional_sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Samples per (identity, attribute combination) cell.
    pub per_combination: usize,
    /// Samples per identity for AMP.
    pub amp_per_identity: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            per_combination: 10,
            amp_per_identity: 40,
        }
    }
}

/// Every identity crossed with every attribute combination, `per` times.
pub fn condition_grid(identities: usize, attributes: usize, per: usize) -> Result<(Vec<usize>, Vec<Vec<u8>>)> {
    if attributes > 12 {
        return Err(Error::InvalidArgument(format!("{attributes} attributes give too many combinations")));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for id in 0..identities {
        for combo in 0..1usize << attributes {
            for _ in 0..per {
                ids.push(id);
                rows.push((0..attributes).map(|b| ((combo >> b) & 1) as u8).collect());
            }
        }
    }
    Ok((ids, rows))
}

fn label_rows(data: &Dataset) -> Vec<Vec<u8>> {
    (0..data.len()).map(|i| data.attribute_row(i).to_vec()).collect()
}

/// Accuracy, Fréchet distance to `test`, AMP with every attribute on, and
/// cluster divergence between latents of `test` and generated latents for
/// the same labels.
pub fn generator_metrics(
    generator: &dyn ConditionalGenerator,
    oracle: &OracleClassifier,
    test: &Dataset,
    cfg: &SweepConfig,
    stream: SeedStream,
) -> Result<MetricReport> {
    let m = oracle.identities;
    let l = oracle.attribute_names.len();
    let (ids, rows) = condition_grid(m, l, cfg.per_combination)?;
    let x = generator.generate(&ids, &rows, stream.split("grid"))?;
    let mut report = MetricReport {
        identity_accuracy: Some(top1_accuracy(oracle, &x, &ids)?),
        frechet: Some(frechet_feature_distance(oracle, &test.x, &x)?),
        ..MetricReport::default()
    };
    if l > 0 {
        report.attribute_accuracy = Some(attribute_accuracy(oracle, &x, &rows)?);
        let n = cfg.amp_per_identity;
        let amp_ids: Vec<usize> = (0..m * n).map(|i| i / n).collect();
        let on = vec![vec![1u8; l]; m * n];
        let xa = generator.generate(&amp_ids, &on, stream.split("amp"))?;
        report.amp = Some(amp(oracle, &xa, &amp_ids, m)?);
    }
    let (z_real, _) = generator.flow().forward_values(&test.x)?;
    let z_gen = generator.latents(&test.identities, &label_rows(test), stream.split("latents"))?;
    report.cluster_divergence = Some(cluster_divergence(&z_real, &test.identities, &z_gen, &test.identities, m)?);
    Ok(report)
}

/// Switches every attribute on in order, then the first one off again.
pub fn default_edits(attributes: &[String]) -> Vec<AttributeEdit> {
    let mut edits: Vec<AttributeEdit> = attributes.iter().map(|a| AttributeEdit::on(a)).collect();
    if let Some(first) = attributes.first() {
        edits.push(AttributeEdit::off(first));
    }
    edits
}

/// Rows whose attributes are all off.
pub fn neutral_rows(data: &Dataset) -> Vec<usize> {
    (0..data.len()).filter(|&i| data.attribute_row(i).iter().all(|&a| a == 0)).collect()
}

/// Cumulative edits on the condition itself: codes and noise of `start` stay
/// fixed while each edit moves one attribute entry by `sign·α` (clamped to
/// `[0, 1]`). Returns the starting images followed by one batch per edit.
pub fn conditional_manipulation(
    flow: &FlowModel,
    enc: &Encoder,
    start: &ConditionBundle,
    edits: &[AttributeEdit],
    alpha: Real,
) -> Result<Vec<Tensor>> {
    let columns: Vec<usize> = edits.iter().map(|e| enc.schema.attribute_index(&e.attribute)).collect::<Result<_>>()?;
    let mut cond = start.clone();
    let mut out = vec![conditional_sample(flow, enc, &cond)?];
    for (e, &a) in edits.iter().zip(&columns) {
        for i in 0..cond.len() {
            let v = &mut cond.attributes.row_mut(i)[a];
            *v = (*v + e.sign * alpha).clamp(0.0, 1.0);
        }
        out.push(conditional_sample(flow, enc, &cond)?);
    }
    Ok(out)
}

/// A scalar summary of one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageStatistic {
    /// Sum of absolute deviations from the border-ring background level.
    StrokeMass,
    /// Mean absolute deviation of the strongest tenth of pixels.
    StrokeContrast,
    /// Deviation-weighted mean row.
    CentroidRow,
    /// Deviation-weighted mean column.
    CentroidCol,
}

impl ImageStatistic {
    pub const ALL: [ImageStatistic; 4] = [
        ImageStatistic::StrokeMass,
        ImageStatistic::StrokeContrast,
        ImageStatistic::CentroidRow,
        ImageStatistic::CentroidCol,
    ];

    /// Evaluates the statistic on one single-channel image (clamped to `[0, 1]`).
    pub fn eval(self, image: &[Real], layout: Layout) -> Real {
        let (h, w) = (layout.height, layout.width);
        let px: Vec<Real> = image.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let ring: Vec<Real> = if h > 2 && w > 2 {
            (1..w - 1)
                .flat_map(|x| [(1, x), (h - 2, x)])
                .chain((1..h - 1).flat_map(|y| [(y, 1), (y, w - 2)]))
                .map(|(y, x)| px[y * w + x])
                .collect()
        } else {
            px.clone()
        };
        let bg = ring.iter().sum::<Real>() / ring.len() as Real;
        let dev: Vec<Real> = px.iter().map(|p| (p - bg).abs()).collect();
        let mass: Real = dev.iter().sum();
        match self {
            ImageStatistic::StrokeMass => mass,
            ImageStatistic::StrokeContrast => {
                let mut s = dev.clone();
                s.sort_by(|a, b| b.total_cmp(a));
                let k = (s.len() / 10).max(1);
                s[..k].iter().sum::<Real>() / k as Real
            }
            ImageStatistic::CentroidRow => {
                (0..h * w).map(|i| (i / w) as Real * dev[i]).sum::<Real>() / mass.max(Real::EPSILON)
            }
            ImageStatistic::CentroidCol => {
                (0..h * w).map(|i| (i % w) as Real * dev[i]).sum::<Real>() / mass.max(Real::EPSILON)
            }
        }
    }
}

/// Response of one image statistic to sweeping an unsupervised code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeEffect {
    pub statistic: ImageStatistic,
    /// Code values of the sweep.
    pub values: Vec<Real>,
    /// Statistic averaged over identities and noise draws, per code value.
    pub curve: Vec<Real>,
    /// Fraction of individual (identity, noise) curves that are monotone in
    /// the direction of the mean curve.
    pub monotone_fraction: Real,
    pub mean_monotone: bool,
    /// `|curve[last] - curve[0]|`.
    pub endpoint_gap: Real,
    /// Pooled within-identity standard deviation across noise draws at the
    /// middle code value.
    pub noise_sd: Real,
}

impl CodeEffect {
    /// Endpoint gap in units of the noise-induced standard deviation.
    pub fn separation(&self) -> Real {
        self.endpoint_gap / self.noise_sd.max(Real::EPSILON)
    }
}

fn monotone(curve: &[Real], increasing: bool) -> bool {
    curve.windows(2).all(|w| if increasing { w[1] >= w[0] } else { w[1] <= w[0] })
}

/// Sweeps code `code` across its prior support with identity, attributes,
/// the other codes and the noise held fixed, for `draws` noise draws per
/// identity, and summarizes every [`ImageStatistic`].
#[allow(clippy::too_many_arguments)]
pub fn code_effect(
    flow: &FlowModel,
    enc: &Encoder,
    layout: Layout,
    identities: &[usize],
    attributes: &[u8],
    code: usize,
    steps: usize,
    draws: usize,
    stream: SeedStream,
) -> Result<Vec<CodeEffect>> {
    let schema = &enc.schema;
    if code >= schema.codes {
        return Err(Error::InvalidArgument(format!("code {code} out of range for {} codes", schema.codes)));
    }
    if steps < 2 || draws < 2 || identities.is_empty() {
        return Err(Error::InvalidArgument("code sweep needs >= 2 steps, >= 2 draws and an identity".into()));
    }
    let values: Vec<Real> = match schema.code_kind {
        CodeKind::Continuous => (0..steps).map(|s| -1.0 + 2.0 * s as Real / (steps - 1) as Real).collect(),
        CodeKind::Discrete => vec![0.0, 1.0],
    };
    let ids: Vec<usize> = identities.iter().flat_map(|&id| std::iter::repeat_n(id, draws)).collect();
    let rows = vec![attributes.to_vec(); ids.len()];
    let base = ConditionBundle::from_labels(schema, &ids, &rows, stream)?;
    let mid = match schema.code_kind {
        CodeKind::Continuous => 0.0,
        CodeKind::Discrete => 0.5,
    };
    let render = |v: Real| -> Result<Tensor> {
        let mut c = base.clone();
        for i in 0..c.len() {
            c.codes.row_mut(i)[code] = v;
        }
        conditional_sample(flow, enc, &c)
    };
    let frames: Vec<Tensor> = values.iter().map(|&v| render(v)).collect::<Result<_>>()?;
    let centre = render(mid)?;
    let n = ids.len();
    let mut out = Vec::with_capacity(ImageStatistic::ALL.len());
    for stat in ImageStatistic::ALL {
        let per: Vec<Vec<Real>> = (0..n)
            .map(|i| frames.iter().map(|f| stat.eval(f.row(i), layout)).collect())
            .collect();
        let curve: Vec<Real> = (0..values.len()).map(|s| per.iter().map(|c| c[s]).sum::<Real>() / n as Real).collect();
        let increasing = curve[curve.len() - 1] >= curve[0];
        let monotone_fraction = per.iter().filter(|c| monotone(c, increasing)).count() as Real / n as Real;
        let mut ss = 0.0;
        for chunk in (0..n).collect::<Vec<_>>().chunks(draws) {
            let v: Vec<Real> = chunk.iter().map(|&i| stat.eval(centre.row(i), layout)).collect();
            let m = v.iter().sum::<Real>() / v.len() as Real;
            ss += v.iter().map(|x| (x - m).powi(2)).sum::<Real>();
        }
        let dof = (n - identities.len()) as Real;
        out.push(CodeEffect {
            statistic: stat,
            values: values.clone(),
            mean_monotone: monotone(&curve, increasing),
            endpoint_gap: (curve[curve.len() - 1] - curve[0]).abs(),
            curve,
            monotone_fraction,
            noise_sd: (ss / dof).sqrt(),
        });
    }
    Ok(out)
}
