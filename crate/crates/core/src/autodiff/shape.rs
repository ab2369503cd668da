//! Index bookkeeping for broadcasting, reductions and permutations.

use crate::error::{Error, Result};

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of two shapes (right-aligned, sizes equal or 1).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Maps a flat index of the broadcast output to a flat index of one operand.
pub(crate) enum BroadcastIndex {
    Same,
    /// Operand is a trailing block of the output (covers scalars).
    Modulo(usize),
    Map(Vec<usize>),
}

impl BroadcastIndex {
    pub(crate) fn new(src: &[usize], out: &[usize]) -> Self {
        let n_src = numel(src);
        let n_out = numel(out);
        if n_src == n_out {
            return BroadcastIndex::Same;
        }
        let trimmed: Vec<usize> = src.iter().copied().skip_while(|&d| d == 1).collect();
        if trimmed.len() <= out.len() && out[out.len() - trimmed.len()..] == trimmed[..] {
            return BroadcastIndex::Modulo(n_src.max(1));
        }
        let rank = out.len();
        let offset = rank - src.len();
        let src_strides = strides(src);
        let mut eff = vec![0usize; rank];
        for i in 0..src.len() {
            if src[i] != 1 {
                eff[offset + i] = src_strides[i];
            }
        }
        BroadcastIndex::Map(odometer_map(out, &eff))
    }

    #[inline]
    pub(crate) fn at(&self, i: usize) -> usize {
        match self {
            BroadcastIndex::Same => i,
            BroadcastIndex::Modulo(n) => i % n,
            BroadcastIndex::Map(m) => m[i],
        }
    }
}

/// For every flat index of `shape` (row-major), the dot product of its
/// multi-index with `eff_strides`.
fn odometer_map(shape: &[usize], eff_strides: &[usize]) -> Vec<usize> {
    let n = numel(shape);
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut acc = 0usize;
    for _ in 0..n {
        out.push(acc);
        for d in (0..rank).rev() {
            idx[d] += 1;
            acc += eff_strides[d];
            if idx[d] < shape[d] {
                break;
            }
            acc -= eff_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

/// Output shape and input→output flat index map for reducing `axes`.
pub(crate) fn reduction_map(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let rank = shape.len();
    let mut reduced = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(Error::InvalidAxis { axis: a, rank });
        }
        reduced[a] = true;
    }
    let reduces_nothing = axes.is_empty() && rank > 0;
    if numel(shape) == 0 || reduces_nothing {
        return Err(Error::EmptyReduction {
            shape: shape.to_vec(),
            axes: axes.to_vec(),
        });
    }
    let out_shape: Vec<usize> = (0..rank).filter(|&d| !reduced[d]).map(|d| shape[d]).collect();
    let out_strides = strides(&out_shape);
    let mut eff = vec![0usize; rank];
    let mut k = 0;
    for d in 0..rank {
        if !reduced[d] {
            eff[d] = out_strides[k];
            k += 1;
        }
    }
    Ok((out_shape, odometer_map(shape, &eff)))
}

/// Output shape and output→input flat index map for an axis permutation.
pub(crate) fn permutation_map(shape: &[usize], perm: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let rank = shape.len();
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(Error::InvalidShape(format!("permutation {perm:?} for rank {rank}")));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(Error::InvalidShape(format!("invalid permutation {perm:?}")));
        }
        seen[p] = true;
    }
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let eff: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    Ok((out_shape.clone(), odometer_map(&out_shape, &eff)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1], &[1, 4]), Some(vec![2, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
    }

    #[test]
    fn column_broadcast_map() {
        let m = BroadcastIndex::new(&[2, 1], &[2, 3]);
        let got: Vec<usize> = (0..6).map(|i| m.at(i)).collect();
        assert_eq!(got, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn reduce_middle_axis() {
        let (out, map) = reduction_map(&[2, 3, 2], &[1]).unwrap();
        assert_eq!(out, vec![2, 2]);
        assert_eq!(map, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
    }

    #[test]
    fn transpose_map() {
        let (out, map) = permutation_map(&[2, 3], &[1, 0]).unwrap();
        assert_eq!(out, vec![3, 2]);
        assert_eq!(map, vec![0, 3, 1, 4, 2, 5]);
    }
}
