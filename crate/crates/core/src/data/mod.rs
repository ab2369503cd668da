//! Datasets: generators, IDX ingestion and preprocessing.

mod cache;
mod glyphs;
mod idx;
mod toy2d;

pub use glyphs::{check_attribute, gen_glyphs, glyph_templates, render_glyph, GlyphInstance, GLYPH_ATTRIBUTES};
pub use idx::{downsample_bilinear, load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages};
pub use toy2d::{gen_toy2d, Toy2dParams};

use rand::Rng;

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::flow::Layout;
use crate::rng::{permutation, SeedStream};

/// One example: an image (or point) with its identity and binary attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<Real>,
    pub identity: usize,
    pub attributes: Vec<u8>,
}

/// Immutable labeled dataset stored as a `(N, D)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub layout: Layout,
    pub identities: Vec<usize>,
    pub num_identities: usize,
    /// Row-major `(N, L)` 0/1 flags.
    pub attributes: Vec<u8>,
    pub attribute_names: Vec<String>,
    /// Values are multiples of 1/255 and should be dequantized for training.
    pub quantized: bool,
}

impl Dataset {
    pub fn new(
        x: Tensor,
        layout: Layout,
        identities: Vec<usize>,
        num_identities: usize,
        attributes: Vec<u8>,
        attribute_names: Vec<String>,
        quantized: bool,
    ) -> Result<Self> {
        let n = x.rows();
        if x.rank() != 2 || x.row_len() != layout.dim() {
            return Err(Error::InvalidShape(format!("data {:?} vs layout {layout:?}", x.shape())));
        }
        if identities.len() != n || attributes.len() != n * attribute_names.len() {
            return Err(Error::InvalidShape("label count does not match sample count".into()));
        }
        if let Some(&bad) = identities.iter().find(|&&i| i >= num_identities) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_identities,
            });
        }
        Ok(Self {
            x,
            layout,
            identities,
            num_identities,
            attributes,
            attribute_names,
            quantized,
        })
    }

    pub fn len(&self) -> usize {
        self.identities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn num_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn attribute_row(&self, i: usize) -> &[u8] {
        let l = self.num_attributes();
        &self.attributes[i * l..(i + 1) * l]
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attribute_names
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    pub fn sample(&self, i: usize) -> LabeledSample {
        LabeledSample {
            x: self.x.row(i).to_vec(),
            identity: self.identities[i],
            attributes: self.attribute_row(i).to_vec(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let l = self.num_attributes();
        let mut attributes = Vec::with_capacity(idx.len() * l);
        for &i in idx {
            attributes.extend_from_slice(self.attribute_row(i));
        }
        Dataset {
            x: self.x.select_rows(idx),
            layout: self.layout,
            identities: idx.iter().map(|&i| self.identities[i]).collect(),
            num_identities: self.num_identities,
            attributes,
            attribute_names: self.attribute_names.clone(),
            quantized: self.quantized,
        }
    }

    /// Attributes of the selected rows as a `(len, L)` float tensor.
    pub fn attribute_tensor(&self, idx: &[usize]) -> Tensor {
        let l = self.num_attributes();
        let mut data = Vec::with_capacity(idx.len() * l);
        for &i in idx {
            data.extend(self.attribute_row(i).iter().map(|&a| a as Real));
        }
        Tensor::new(vec![idx.len(), l], data).expect("shape")
    }

    /// 80/10/10 train/validation/test split by seeded shuffle.
    pub fn split(&self, stream: SeedStream) -> (Dataset, Dataset, Dataset) {
        let n = self.len();
        let perm = permutation(n, &mut stream.rng());
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        (
            self.subset(&perm[..n_train]),
            self.subset(&perm[n_train..n_train + n_val]),
            self.subset(&perm[n_train + n_val..]),
        )
    }

    /// Rows with the given identity.
    pub fn indices_of_identity(&self, identity: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.identities[i] == identity).collect()
    }

    /// Training input for the selected rows: dequantized when the source is
    /// 8-bit, as-is otherwise.
    pub fn batch(&self, idx: &[usize], stream: SeedStream) -> Tensor {
        let x = self.x.select_rows(idx);
        if self.quantized {
            dequantize(&x, &mut stream.rng())
        } else {
            x
        }
    }
}

/// `x' = (255·x + u) / 256` with `u ~ U[0, 1)`; maps 8-bit levels into `[0, 1)`.
pub fn dequantize<R: Rng + ?Sized>(images: &Tensor, rng: &mut R) -> Tensor {
    let mut out = images.clone();
    for v in out.data_mut() {
        let u: f64 = rng.random();
        *v = (255.0 * *v + u as Real) / 256.0;
    }
    out
}

/// Rounds `[0, 1]` values to the nearest multiple of 1/255.
pub fn quantize(v: Real) -> Real {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    struct ZeroRng;

    impl RngCore for ZeroRng {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    #[test]
    fn zero_noise_gives_scaled_value() {
        let x = Tensor::vector(vec![0.0, 1.0, 128.0 / 255.0]);
        let y = dequantize(&x, &mut ZeroRng);
        assert_eq!(y.data(), &[0.0, 255.0 / 256.0, 128.0 / 256.0]);
    }

    #[test]
    fn dequantized_values_stay_below_one() {
        let x = Tensor::full(vec![1000], 1.0);
        let y = dequantize(&x, &mut SeedStream::new(1).rng());
        assert!(y.data().iter().all(|&v| v < 1.0 && v >= 255.0 / 256.0));
    }

    #[test]
    fn dequantization_mean_is_half_level_up() {
        let level = 77.0 / 255.0;
        let x = Tensor::full(vec![200_000], level);
        let y = dequantize(&x, &mut SeedStream::new(2).rng());
        let mean = y.data().iter().sum::<Real>() / y.numel() as Real;
        let expected = (77.0 + 0.5) / 256.0;
        // U[0,1)/256 has std 1/(256·√12); five standard errors
        let se = 1.0 / (256.0 * 12f64.sqrt() * (y.numel() as Real).sqrt());
        assert!((mean - expected).abs() < 5.0 * se);
    }

    #[test]
    fn split_is_80_10_10_and_disjoint() {
        let ds = gen_toy2d(SeedStream::new(3), 4, 1000).0;
        let (a, b, c) = ds.split(SeedStream::new(4));
        assert_eq!((a.len(), b.len(), c.len()), (800, 100, 100));
        let mut all: Vec<Vec<u64>> = [&a, &b, &c]
            .iter()
            .flat_map(|d| (0..d.len()).map(|i| d.x.row(i).iter().map(|v| v.to_bits()).collect::<Vec<u64>>()).collect::<Vec<_>>())
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 1000);
    }
}
