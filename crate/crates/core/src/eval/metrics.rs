use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::oracle::{AttributeOracle, OracleClassifier};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Covariance shrinkage toward a scaled identity applied when a set has fewer
/// than twice as many samples as feature dimensions.
pub const SHRINKAGE: f64 = 0.1;

/// Fraction of samples whose predicted identity equals the conditioning label.
pub fn top1_accuracy(oracle: &OracleClassifier, x: &Tensor, labels: &[usize]) -> Result<Real> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    check_rows(x, labels.len())?;
    let pred = oracle.predict(x)?;
    let hits = pred.identities.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as Real / labels.len() as Real)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttributeAccuracy {
    pub per_attribute: Vec<Real>,
    /// Pooled over every (sample, attribute) decision.
    pub micro: Real,
    /// Mean over attributes of the balanced accuracy (mean of the positive and
    /// negative recall, or the one recall available when a side is empty).
    pub macro_balanced: Real,
}

/// Agreement of thresholded oracle attribute probabilities with the
/// conditioning flags.
pub fn attribute_accuracy(oracle: &dyn AttributeOracle, x: &Tensor, flags: &[Vec<u8>]) -> Result<AttributeAccuracy> {
    if flags.is_empty() {
        return Err(Error::InvalidArgument("empty sample set".into()));
    }
    check_rows(x, flags.len())?;
    let probs = oracle.attribute_probs(x)?;
    attribute_accuracy_from_probs(&probs, flags)
}

pub(crate) fn attribute_accuracy_from_probs(probs: &Tensor, flags: &[Vec<u8>]) -> Result<AttributeAccuracy> {
    let l = probs.row_len();
    let n = flags.len();
    if l == 0 {
        return Err(Error::InvalidArgument("no attributes to score".into()));
    }
    let mut per = Vec::with_capacity(l);
    let mut balanced = Vec::with_capacity(l);
    let mut pooled = 0usize;
    for a in 0..l {
        let (mut tp, mut np, mut tn, mut nn) = (0usize, 0usize, 0usize, 0usize);
        for (i, row) in flags.iter().enumerate() {
            if row.len() != l {
                return Err(Error::InvalidArgument(format!("attribute row of length {}, expected {l}", row.len())));
            }
            let hit = (probs.row(i)[a] > 0.5) == (row[a] != 0);
            if row[a] != 0 {
                np += 1;
                tp += usize::from(hit);
            } else {
                nn += 1;
                tn += usize::from(hit);
            }
        }
        pooled += tp + tn;
        per.push((tp + tn) as Real / n as Real);
        let recalls: Vec<Real> = [(tp, np), (tn, nn)]
            .iter()
            .filter(|(_, c)| *c > 0)
            .map(|&(h, c)| h as Real / c as Real)
            .collect();
        balanced.push(recalls.iter().sum::<Real>() / recalls.len() as Real);
    }
    Ok(AttributeAccuracy {
        per_attribute: per,
        micro: pooled as Real / (n * l) as Real,
        macro_balanced: balanced.iter().sum::<Real>() / l as Real,
    })
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrechetResult {
    pub distance: Real,
    /// Negative eigenvalues set to zero while taking matrix square roots.
    pub clipped: usize,
    /// Sum of their magnitudes.
    pub clip_mass: Real,
    pub shrunk: bool,
}

/// `‖μ_a − μ_b‖² + tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})` between two feature sets
/// `(N, d)`. The trace of the square root is taken as
/// `tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})`, both roots by symmetric
/// eigendecomposition with negative eigenvalues clipped at zero.
pub fn frechet_distance(a: &Tensor, b: &Tensor) -> Result<FrechetResult> {
    if a.rank() != 2 || b.rank() != 2 || a.row_len() != b.row_len() {
        return Err(Error::ShapeMismatch {
            op: "frechet_distance",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::InvalidArgument("each feature set needs at least 2 samples".into()));
    }
    let (mu_a, cov_a, shrunk_a) = moments(a);
    let (mu_b, cov_b, shrunk_b) = moments(b);
    let mut clipped = 0;
    let mut clip_mass = 0.0;
    let root_a = sqrtm(&cov_a, &mut clipped, &mut clip_mass);
    let mut inner = &root_a * &cov_b * &root_a;
    inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let tr_root: f64 = eig
        .eigenvalues
        .iter()
        .map(|&v| {
            if v < 0.0 {
                clipped += 1;
                clip_mass += -v;
                0.0
            } else {
                v.sqrt()
            }
        })
        .sum();
    let diff = mu_a - mu_b;
    let d = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * tr_root;
    Ok(FrechetResult {
        distance: d.max(0.0) as Real,
        clipped,
        clip_mass: clip_mass as Real,
        shrunk: shrunk_a || shrunk_b,
    })
}

/// Fréchet distance between the oracle's penultimate features of two image sets.
pub fn frechet_feature_distance(oracle: &OracleClassifier, real: &Tensor, fake: &Tensor) -> Result<FrechetResult> {
    frechet_distance(&oracle.predict(real)?.features, &oracle.predict(fake)?.features)
}

fn moments(x: &Tensor) -> (DVector<f64>, DMatrix<f64>, bool) {
    let (n, d) = (x.rows(), x.row_len());
    let m = DMatrix::from_row_slice(n, d, &x.data().iter().map(|&v| v as f64).collect::<Vec<_>>());
    let mu = m.row_mean().transpose();
    let mut centered = m;
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let shrink = n < 2 * d;
    if shrink {
        let scale = cov.trace() / d as f64;
        cov = cov * (1.0 - SHRINKAGE) + DMatrix::identity(d, d) * (SHRINKAGE * scale);
    }
    (mu, cov, shrink)
}

fn sqrtm(m: &DMatrix<f64>, clipped: &mut usize, mass: &mut f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| {
        if v < 0.0 {
            *clipped += 1;
            *mass += -v;
            0.0
        } else {
            v.sqrt()
        }
    });
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AmpResult {
    /// Mean over images of identity `i` of the mean attribute probability.
    pub per_identity: Vec<Real>,
    pub counts: Vec<usize>,
    /// Population variance of `per_identity`.
    pub variance: Real,
}

/// Attribute mean probability per identity over all `L` attributes.
pub fn amp(oracle: &dyn AttributeOracle, x: &Tensor, identities: &[usize], num_identities: usize) -> Result<AmpResult> {
    check_rows(x, identities.len())?;
    amp_from_probs(&oracle.attribute_probs(x)?, identities, num_identities)
}

pub fn amp_from_probs(probs: &Tensor, identities: &[usize], num_identities: usize) -> Result<AmpResult> {
    check_rows(probs, identities.len())?;
    let l = probs.row_len();
    if l == 0 {
        return Err(Error::InvalidArgument("no attributes to average".into()));
    }
    let mut sums = vec![0.0; num_identities];
    let mut counts = vec![0usize; num_identities];
    for (i, &id) in identities.iter().enumerate() {
        if id >= num_identities {
            return Err(Error::LabelOutOfRange {
                label: id,
                classes: num_identities,
            });
        }
        sums[id] += probs.row(i).iter().sum::<Real>() / l as Real;
        counts[id] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InvalidArgument(format!("identity {empty} has no images")));
    }
    let per: Vec<Real> = sums.iter().zip(&counts).map(|(s, &c)| s / c as Real).collect();
    let mean = per.iter().sum::<Real>() / per.len() as Real;
    let variance = per.iter().map(|v| (v - mean).powi(2)).sum::<Real>() / per.len() as Real;
    Ok(AmpResult {
        per_identity: per,
        counts,
        variance,
    })
}

/// Images of one manipulation sequence: `frames[0]` are the unedited images,
/// `frames[t]` the result after editing `changed[t - 1]`.
#[derive(Clone, Debug)]
pub struct ManipulationRun {
    pub frames: Vec<Tensor>,
    pub changed: Vec<String>,
}

/// Per step `t`, the mean over images and runs of
/// `|AMP_t − AMP_{t−1}|` restricted to the attributes not edited at step `t`.
pub fn cumulative_interference(oracle: &dyn AttributeOracle, runs: &[ManipulationRun]) -> Result<Vec<Real>> {
    let Some(first) = runs.first() else {
        return Err(Error::InvalidArgument("no manipulation runs".into()));
    };
    let steps = first.changed.len();
    let names = oracle.attribute_names();
    let mut totals = vec![0.0; steps];
    for run in runs {
        if run.changed.len() != steps || run.frames.len() != steps + 1 {
            return Err(Error::InvalidArgument(format!(
                "manipulation runs of unequal length: {} edits / {} frames, expected {steps} / {}",
                run.changed.len(),
                run.frames.len(),
                steps + 1
            )));
        }
        let probs: Vec<Tensor> = run.frames.iter().map(|f| oracle.attribute_probs(f)).collect::<Result<_>>()?;
        for t in 1..=steps {
            let edited = names
                .iter()
                .position(|n| *n == run.changed[t - 1])
                .ok_or_else(|| Error::UnknownAttribute(run.changed[t - 1].clone()))?;
            let keep: Vec<usize> = (0..names.len()).filter(|&a| a != edited).collect();
            if keep.is_empty() {
                return Err(Error::InvalidArgument("no untouched attributes to score".into()));
            }
            let (prev, cur) = (&probs[t - 1], &probs[t]);
            check_rows(cur, prev.rows())?;
            let n = cur.rows();
            if n == 0 {
                return Err(Error::InvalidArgument("empty manipulation frame".into()));
            }
            let mean_over = |row: &[Real]| keep.iter().map(|&a| row[a]).sum::<Real>() / keep.len() as Real;
            let per_image: Real = (0..n).map(|i| (mean_over(cur.row(i)) - mean_over(prev.row(i))).abs()).sum();
            totals[t - 1] += per_image / n as Real;
        }
    }
    Ok(totals.into_iter().map(|v| v / runs.len() as Real).collect())
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClusterDivergence {
    pub value: Real,
    pub classes_used: usize,
    /// Classes with fewer than two real or two sampled latents.
    pub skipped: Vec<usize>,
    pub spread: Real,
}

/// Mean over classes of `‖μ_real,c − μ_sampled,c‖`, divided by the mean
/// distance of real latents to their class mean.
pub fn cluster_divergence(
    real: &Tensor,
    real_labels: &[usize],
    sampled: &Tensor,
    sampled_labels: &[usize],
    num_classes: usize,
) -> Result<ClusterDivergence> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("cluster divergence needs at least 2 classes".into()));
    }
    check_rows(real, real_labels.len())?;
    check_rows(sampled, sampled_labels.len())?;
    if real.row_len() != sampled.row_len() {
        return Err(Error::ShapeMismatch {
            op: "cluster_divergence",
            lhs: real.shape().to_vec(),
            rhs: sampled.shape().to_vec(),
        });
    }
    let d = real.row_len();
    let means = |x: &Tensor, labels: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let mut sums = vec![vec![0.0f64; d]; num_classes];
        let mut counts = vec![0usize; num_classes];
        for (i, &c) in labels.iter().enumerate() {
            if c >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    classes: num_classes,
                });
            }
            sums[c].iter_mut().zip(x.row(i)).for_each(|(s, &v)| *s += v as f64);
            counts[c] += 1;
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|v| *v /= n.max(1) as f64);
        }
        Ok((sums, counts))
    };
    let (mu_r, n_r) = means(real, real_labels)?;
    let (mu_s, n_s) = means(sampled, sampled_labels)?;
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut skipped = Vec::new();
    let mut gap = 0.0;
    let mut spread = 0.0;
    let mut used = 0;
    for c in 0..num_classes {
        if n_r[c] < 2 || n_s[c] < 2 {
            skipped.push(c);
            continue;
        }
        used += 1;
        gap += dist(&mu_r[c], &mu_s[c]);
        let inner: f64 = real_labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| dist(&real.row(i).iter().map(|&v| v as f64).collect::<Vec<_>>(), &mu_r[c]))
            .sum();
        spread += inner / n_r[c] as f64;
    }
    if used == 0 {
        return Err(Error::InvalidArgument("no class has enough samples".into()));
    }
    let (gap, spread) = (gap / used as f64, spread / used as f64);
    Ok(ClusterDivergence {
        value: (if spread > 0.0 { gap / spread } else { 0.0 }) as Real,
        classes_used: used,
        skipped,
        spread: spread as Real,
    })
}

fn check_rows(x: &Tensor, n: usize) -> Result<()> {
    if x.rank() != 2 || x.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "rows",
            lhs: x.shape().to_vec(),
            rhs: vec![n],
        });
    }
    Ok(())
}
