use super::AttributeEdit;
use crate::autodiff::{Real, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flow::FlowModel;

/// Mean latent difference between examples with and without one attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeDirection {
    pub attribute: String,
    /// `None` when either side has no examples.
    pub delta: Option<Vec<Real>>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeDirections {
    pub directions: Vec<AttributeDirection>,
}

impl AttributeDirections {
    pub fn get(&self, attribute: &str) -> Result<&[Real]> {
        let d = self
            .directions
            .iter()
            .find(|d| d.attribute == attribute)
            .ok_or_else(|| Error::UnknownAttribute(attribute.to_string()))?;
        d.delta.as_deref().ok_or_else(|| Error::UndefinedDirection(attribute.to_string()))
    }
}

const CHUNK: usize = 256;

/// Row order that depends only on row contents, so results do not depend on
/// how the dataset is shuffled.
fn canonical_order(data: &Dataset) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    let key = |i: usize| {
        let mut k: Vec<u64> = data.x.row(i).iter().map(|v| (*v as f64).to_bits()).collect();
        k.extend(data.attribute_row(i).iter().map(|&a| a as u64));
        k
    };
    idx.sort_by_cached_key(|&i| key(i));
    idx
}

/// `Δ_a = mean(z | a = 1) - mean(z | a = 0)` over the dataset for every
/// attribute, with `z = forward(x)` on the stored (not dequantized) values.
pub fn compute_attribute_directions(flow: &FlowModel, data: &Dataset) -> Result<AttributeDirections> {
    let l = data.num_attributes();
    let d = flow.dim();
    let mut pos = vec![vec![0.0; d]; l];
    let mut neg = vec![vec![0.0; d]; l];
    let mut counts = vec![(0usize, 0usize); l];
    let order = canonical_order(data);
    for chunk in order.chunks(CHUNK) {
        let (z, _) = flow.forward_values(&data.x.select_rows(chunk))?;
        for (r, &i) in chunk.iter().enumerate() {
            let row = z.row(r);
            for (a, &flag) in data.attribute_row(i).iter().enumerate() {
                let acc = if flag != 0 {
                    counts[a].0 += 1;
                    &mut pos[a]
                } else {
                    counts[a].1 += 1;
                    &mut neg[a]
                };
                acc.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
        }
    }
    let directions = (0..l)
        .map(|a| {
            let (np, nn) = counts[a];
            let delta = (np > 0 && nn > 0).then(|| {
                pos[a]
                    .iter()
                    .zip(&neg[a])
                    .map(|(p, q)| p / np as Real - q / nn as Real)
                    .collect()
            });
            AttributeDirection {
                attribute: data.attribute_names[a].clone(),
                delta,
                positives: np,
                negatives: nn,
            }
        })
        .collect();
    Ok(AttributeDirections { directions })
}

/// Cumulative latent edits `z_t = z_{t-1} + sign·α·Δ`; returns the
/// reconstruction of `x` followed by one image batch per edit.
pub fn manipulate(
    flow: &FlowModel,
    x: &Tensor,
    directions: &AttributeDirections,
    edits: &[AttributeEdit],
    alpha: Real,
) -> Result<Vec<Tensor>> {
    let deltas: Vec<&[Real]> = edits.iter().map(|e| directions.get(&e.attribute)).collect::<Result<_>>()?;
    let (mut z, _) = flow.forward_values(x)?;
    let mut out = vec![flow.inverse(&z)?];
    for (e, delta) in edits.iter().zip(deltas) {
        for i in 0..z.rows() {
            z.row_mut(i).iter_mut().zip(delta).for_each(|(v, d)| *v += e.sign * alpha * d);
        }
        out.push(flow.inverse(&z)?);
    }
    Ok(out)
}
