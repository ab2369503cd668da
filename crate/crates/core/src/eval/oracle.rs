use crate::autodiff::{Parameter, Real, Tape, Tensor};
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{bce_with_logits, softmax_cross_entropy, Activation, Mlp, Module};
use crate::rng::{permutation, SeedStream};
use crate::train::Adam;

/// Anything that scores attribute probabilities for a batch of images.
pub trait AttributeOracle {
    fn attribute_names(&self) -> &[String];
    /// `(N, L)` probabilities.
    fn attribute_probs(&self, x: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: Real,
    pub identity_floor: Real,
    pub attribute_floor: Real,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            max_epochs: 40,
            patience: 4,
            batch_size: 64,
            lr: 1e-3,
            identity_floor: 0.97,
            attribute_floor: 0.95,
        }
    }
}

/// Held-out accuracy of the oracle.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OracleValidation {
    pub identity_accuracy: Real,
    pub attribute_accuracy: Vec<Real>,
    pub identity_floor: Real,
    pub attribute_floor: Real,
}

impl OracleValidation {
    /// Fails with the first unmet floor.
    pub fn check(&self, attribute_names: &[String]) -> Result<()> {
        if self.identity_accuracy < self.identity_floor {
            return Err(Error::OracleBelowFloor {
                metric: "identity".into(),
                value: self.identity_accuracy as f64,
                floor: self.identity_floor as f64,
            });
        }
        for (name, &acc) in attribute_names.iter().zip(&self.attribute_accuracy) {
            if acc < self.attribute_floor {
                return Err(Error::OracleBelowFloor {
                    metric: format!("attribute `{name}`"),
                    value: acc as f64,
                    floor: self.attribute_floor as f64,
                });
            }
        }
        Ok(())
    }
}

/// Dense classifier `D → h → h → M + L` with identity and attribute heads.
#[derive(Clone, Debug)]
pub struct OracleClassifier {
    pub net: Mlp,
    pub identities: usize,
    pub attribute_names: Vec<String>,
    pub validation: Option<OracleValidation>,
}

/// Oracle outputs for one batch.
#[derive(Clone, Debug)]
pub struct OraclePrediction {
    pub identities: Vec<usize>,
    pub attribute_probs: Tensor,
    pub features: Tensor,
}

const EVAL_CHUNK: usize = 512;

impl OracleClassifier {
    pub fn new(dim: usize, identities: usize, attribute_names: &[String], hidden: usize, stream: SeedStream) -> Self {
        let out = identities + attribute_names.len();
        Self {
            net: Mlp::new("oracle", &[dim, hidden, hidden, out], Activation::Relu, false, &mut stream.rng()),
            identities,
            attribute_names: attribute_names.to_vec(),
            validation: None,
        }
    }

    /// Trains on `train` with early stopping on the `val` loss, then records
    /// held-out accuracy on `val`. Does not enforce the floors.
    pub fn train(train: &Dataset, val: &Dataset, cfg: &OracleConfig, stream: SeedStream) -> Result<Self> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument("oracle needs non-empty train and validation sets".into()));
        }
        let mut model = Self::new(
            train.dim(),
            train.num_identities,
            &train.attribute_names,
            cfg.hidden,
            stream.split("init"),
        );
        let mut opt = Adam::new(cfg.lr, (0.9, 0.999));
        let val_x = clamp01(&val.x);
        let mut best = (model.loss_value(&val_x, val)?, model.net.clone());
        let mut stale = 0;
        for epoch in 0..cfg.max_epochs {
            let ep = stream.split_index(epoch as u64);
            let order = permutation(train.len(), &mut ep.split("perm").rng());
            for (b, idx) in order.chunks(cfg.batch_size.max(1)).enumerate() {
                let x = clamp01(&train.batch(idx, ep.split_index(b as u64)));
                let tape = Tape::new();
                let loss = model.loss(&tape, &x, train, idx)?;
                tape.backward(loss)?;
                let mut params: Vec<&mut Parameter> = model.net.parameters_mut();
                tape.accumulate_into(params.iter_mut().map(|p| &mut **p));
                opt.step(params);
            }
            let v = model.loss_value(&val_x, val)?;
            if v < best.0 {
                best = (v, model.net.clone());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
        model.net = best.1;
        let pred = model.predict(&val.x)?;
        let ids: Vec<usize> = val.identities.clone();
        let id_acc = ids.iter().zip(&pred.identities).filter(|(a, b)| a == b).count() as Real / val.len() as Real;
        let attr_acc = (0..val.num_attributes())
            .map(|a| {
                (0..val.len())
                    .filter(|&i| (pred.attribute_probs.row(i)[a] > 0.5) == (val.attribute_row(i)[a] != 0))
                    .count() as Real
                    / val.len() as Real
            })
            .collect();
        model.validation = Some(OracleValidation {
            identity_accuracy: id_acc,
            attribute_accuracy: attr_acc,
            identity_floor: cfg.identity_floor,
            attribute_floor: cfg.attribute_floor,
        });
        Ok(model)
    }

    /// Enforces the recorded validity floors.
    pub fn ensure_valid(&self) -> Result<()> {
        match &self.validation {
            Some(v) => v.check(&self.attribute_names),
            None => Err(Error::InvalidArgument("oracle has not been validated".into())),
        }
    }

    fn loss<'t>(&self, tape: &'t Tape, x: &Tensor, data: &Dataset, idx: &[usize]) -> Result<crate::autodiff::Var<'t>> {
        let logits = self.net.forward(tape, tape.constant(x))?;
        let ids: Vec<usize> = idx.iter().map(|&i| data.identities[i]).collect();
        let mut loss = softmax_cross_entropy(tape, logits.slice_cols(0, self.identities)?, &ids)?;
        let l = self.attribute_names.len();
        if l > 0 {
            loss = loss.add(bce_with_logits(
                tape,
                logits.slice_cols(self.identities, l)?,
                &data.attribute_tensor(idx),
            )?)?;
        }
        Ok(loss)
    }

    fn loss_value(&self, x: &Tensor, data: &Dataset) -> Result<Real> {
        let mut total = 0.0;
        let all: Vec<usize> = (0..data.len()).collect();
        for idx in all.chunks(EVAL_CHUNK) {
            let tape = Tape::new();
            total += self.loss(&tape, &x.select_rows(idx), data, idx)?.item() * idx.len() as Real;
        }
        Ok(total / data.len() as Real)
    }

    /// Predicted identities, attribute probabilities and penultimate features.
    /// Inputs are clamped to `[0, 1]`.
    pub fn predict(&self, x: &Tensor) -> Result<OraclePrediction> {
        let x = clamp01(x);
        let n = x.rows();
        let l = self.attribute_names.len();
        let mut identities = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n * l);
        let mut feats = Vec::new();
        let all: Vec<usize> = (0..n).collect();
        for idx in all.chunks(EVAL_CHUNK) {
            let tape = Tape::new();
            let (logits, h) = self.net.forward_with_features(&tape, tape.constant(&x.select_rows(idx)))?;
            let logits = logits.value();
            for r in 0..idx.len() {
                let row = logits.row(r);
                let id = row[..self.identities]
                    .iter()
                    .enumerate()
                    .fold((0, Real::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0;
                identities.push(id);
                probs.extend(row[self.identities..].iter().map(|&v| sigmoid(v)));
            }
            feats.extend_from_slice(h.value().data());
        }
        let width = self.net.layers.last().map_or(0, |d| d.input_dim());
        Ok(OraclePrediction {
            identities,
            attribute_probs: Tensor::new(vec![n, l], probs)?,
            features: Tensor::new(vec![n, width], feats)?,
        })
    }
}

impl AttributeOracle for OracleClassifier {
    fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    fn attribute_probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.predict(x)?.attribute_probs)
    }
}

const STAGE: &str = "oracle";

impl OracleClassifier {
    /// Weights plus shape and validation metadata.
    pub fn to_checkpoint(&self, seed: u64, config_digest: &str) -> Checkpoint {
        let mut meta = CheckpointMeta {
            stage: STAGE.into(),
            seed,
            config_digest: config_digest.into(),
            ..CheckpointMeta::default()
        };
        let dims: Vec<usize> = self.net.layers.iter().map(|d| d.input_dim()).collect();
        let extra = [
            ("dims", serde_json::to_string(&dims)),
            ("identities", serde_json::to_string(&self.identities)),
            ("attribute_names", serde_json::to_string(&self.attribute_names)),
            ("validation", serde_json::to_string(&self.validation)),
        ];
        for (k, v) in extra {
            meta.extra.insert(k.into(), v.expect("oracle metadata serializes"));
        }
        let mut ck = Checkpoint::new(meta);
        ck.add_module(self);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.stage != STAGE {
            return Err(Error::Checkpoint(format!("`{}` is not an oracle checkpoint", ck.meta.stage)));
        }
        let field = |k: &str| {
            ck.meta
                .extra
                .get(k)
                .ok_or_else(|| Error::Checkpoint(format!("oracle checkpoint lacks `{k}`")))
        };
        let dims: Vec<usize> = serde_json::from_str(field("dims")?)?;
        let identities: usize = serde_json::from_str(field("identities")?)?;
        let names: Vec<String> = serde_json::from_str(field("attribute_names")?)?;
        let validation: Option<OracleValidation> = serde_json::from_str(field("validation")?)?;
        if dims.len() != 3 {
            return Err(Error::Checkpoint(format!("oracle expects 3 layers, found {}", dims.len())));
        }
        let mut model = Self::new(dims[0], identities, &names, dims[1], SeedStream::new(0));
        ck.restore(&mut model)?;
        model.validation = validation;
        Ok(model)
    }
}

impl Module for OracleClassifier {
    fn parameters(&self) -> Vec<&Parameter> {
        self.net.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.net.parameters_mut()
    }
}

fn clamp01(x: &Tensor) -> Tensor {
    x.map(|v| v.clamp(0.0, 1.0))
}

fn sigmoid(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
