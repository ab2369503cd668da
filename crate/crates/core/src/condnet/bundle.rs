use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::{normal, SeedStream};

/// Prior family of the unsupervised codes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    /// Uniform on `[-1, 1]`, reconstructed with squared error.
    #[default]
    Continuous,
    /// Fair coin on `{0, 1}`, reconstructed with binary cross-entropy.
    Discrete,
}

/// Sizes of every condition field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSchema {
    pub identities: usize,
    pub attributes: Vec<String>,
    #[serde(default)]
    pub codes: usize,
    #[serde(default)]
    pub code_kind: CodeKind,
    pub noise: usize,
}

impl ConditionSchema {
    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// Width of the concatenated raw condition vector.
    pub fn width(&self) -> usize {
        self.identities + self.attributes.len() + self.codes + self.noise
    }

    pub fn attribute_index(&self, name: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }
}

/// A batch of conditions: identity one-hots, attribute flags, unsupervised
/// codes and noise, each stored as a `(B, ·)` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionBundle {
    pub identity: Tensor,
    pub attributes: Tensor,
    pub codes: Tensor,
    pub noise: Tensor,
}

fn matrix(b: usize, w: usize, data: Vec<Real>) -> Tensor {
    Tensor::new(vec![b, w], data).expect("shape")
}

impl ConditionBundle {
    /// Hard labels with freshly drawn codes and noise.
    pub fn from_labels(
        schema: &ConditionSchema,
        identities: &[usize],
        attributes: &[Vec<u8>],
        stream: SeedStream,
    ) -> Result<Self> {
        let b = identities.len();
        if attributes.len() != b {
            return Err(Error::InvalidArgument(format!(
                "{b} identities but {} attribute rows",
                attributes.len()
            )));
        }
        let mut rng = stream.rng();
        let codes = sample_codes(schema, b, &mut rng);
        let noise = matrix(b, schema.noise, (0..b * schema.noise).map(|_| normal(&mut rng)).collect());
        Self::with_codes(schema, identities, attributes, codes, noise)
    }

    /// Hard labels with explicit codes and noise.
    pub fn with_codes(
        schema: &ConditionSchema,
        identities: &[usize],
        attributes: &[Vec<u8>],
        codes: Tensor,
        noise: Tensor,
    ) -> Result<Self> {
        let b = identities.len();
        let (m, l) = (schema.identities, schema.num_attributes());
        let mut id = vec![0.0; b * m];
        for (i, &k) in identities.iter().enumerate() {
            if k >= m {
                return Err(Error::LabelOutOfRange { label: k, classes: m });
            }
            id[i * m + k] = 1.0;
        }
        let mut attrs = Vec::with_capacity(b * l);
        for row in attributes {
            if row.len() != l {
                return Err(Error::InvalidArgument(format!("attribute row of length {}, expected {l}", row.len())));
            }
            attrs.extend(row.iter().map(|&a| a as Real));
        }
        let bundle = Self {
            identity: matrix(b, m, id),
            attributes: matrix(b, l, attrs),
            codes,
            noise,
        };
        bundle.validate(schema)?;
        Ok(bundle)
    }

    /// Draws identities and attribute flags uniformly as well.
    pub fn random(schema: &ConditionSchema, n: usize, stream: SeedStream) -> Result<Self> {
        let mut rng = stream.split("labels").rng();
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..schema.identities)).collect();
        let attrs: Vec<Vec<u8>> = (0..n)
            .map(|_| (0..schema.num_attributes()).map(|_| u8::from(rng.random_bool(0.5))).collect())
            .collect();
        Self::from_labels(schema, &ids, &attrs, stream.split("codes"))
    }

    pub fn len(&self) -> usize {
        self.noise.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks widths against the schema and values against their supports.
    pub fn validate(&self, schema: &ConditionSchema) -> Result<()> {
        let b = self.identity.rows();
        let fields = [
            ("identity", &self.identity, schema.identities),
            ("attributes", &self.attributes, schema.num_attributes()),
            ("codes", &self.codes, schema.codes),
            ("noise", &self.noise, schema.noise),
        ];
        for (name, t, w) in fields {
            if t.shape() != [b, w] {
                return Err(Error::ShapeMismatch {
                    op: name,
                    lhs: vec![b, w],
                    rhs: t.shape().to_vec(),
                });
            }
        }
        const TOL: Real = 1e-9;
        if schema.identities > 0 {
            for i in 0..b {
                let row = self.identity.row(i);
                let s: Real = row.iter().sum();
                if (s - 1.0).abs() > TOL || row.iter().any(|&v| v < -TOL) {
                    return Err(Error::InvalidArgument(format!("identity row {i} is not a distribution")));
                }
            }
        }
        if self.attributes.data().iter().any(|&a| !(-TOL..=1.0 + TOL).contains(&a)) {
            return Err(Error::InvalidArgument("attribute flags must lie in [0, 1]".into()));
        }
        let (lo, hi) = match schema.code_kind {
            CodeKind::Continuous => (-1.0, 1.0),
            CodeKind::Discrete => (0.0, 1.0),
        };
        if self.codes.data().iter().any(|&c| !(lo - TOL..=hi + TOL).contains(&c)) {
            return Err(Error::InvalidArgument(format!("codes must lie in [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// `(1 - t)·self + t·other`, field by field.
    pub fn lerp(&self, other: &ConditionBundle, t: Real) -> Result<ConditionBundle> {
        let mix = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch {
                    op: "condition interpolation",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| (1.0 - t) * x + t * y).collect();
            Tensor::new(a.shape().to_vec(), data)
        };
        Ok(ConditionBundle {
            identity: mix(&self.identity, &other.identity)?,
            attributes: mix(&self.attributes, &other.attributes)?,
            codes: mix(&self.codes, &other.codes)?,
            noise: mix(&self.noise, &other.noise)?,
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> ConditionBundle {
        ConditionBundle {
            identity: self.identity.select_rows(idx),
            attributes: self.attributes.select_rows(idx),
            codes: self.codes.select_rows(idx),
            noise: self.noise.select_rows(idx),
        }
    }

    /// Hard identity of each row (argmax of the one-hot).
    pub fn identity_labels(&self) -> Vec<usize> {
        (0..self.identity.rows())
            .map(|i| {
                let row = self.identity.row(i);
                (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
            })
            .collect()
    }
}

fn sample_codes<R: Rng + ?Sized>(schema: &ConditionSchema, b: usize, rng: &mut R) -> Tensor {
    let data = (0..b * schema.codes)
        .map(|_| match schema.code_kind {
            CodeKind::Continuous => rng.random_range(-1.0..1.0),
            CodeKind::Discrete => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect();
    matrix(b, schema.codes, data)
}
