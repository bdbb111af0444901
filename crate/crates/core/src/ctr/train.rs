use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::featurizer::Featurizer;
use super::model::CtrModel;
use super::{CtrDataset, CtrInstance};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig, SparseGrad};
use crate::text::{self, sigmoid};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 256,
            max_epochs: 20,
            patience: 3,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CtrModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Features of every instance, flattened.
struct Packed {
    feats: Vec<u32>,
    offsets: Vec<usize>,
    labels: Vec<f64>,
}

impl Packed {
    fn new(f: &Featurizer, insts: &[CtrInstance]) -> Result<Self> {
        let mut feats = Vec::with_capacity(insts.len() * 64);
        let mut offsets = Vec::with_capacity(insts.len() + 1);
        let mut labels = Vec::with_capacity(insts.len());
        offsets.push(0);
        for inst in insts {
            let label = inst.label.ok_or_else(|| {
                Error::Data(format!("unlabeled instance for target {:?}", inst.target))
            })?;
            let ctx: Vec<&str> = inst.context.iter().map(String::as_str).collect();
            f.features_into(&inst.user_query, &ctx, &inst.target, inst.slot, &mut feats);
            offsets.push(feats.len());
            labels.push(if label { 1.0 } else { 0.0 });
        }
        Ok(Self {
            feats,
            offsets,
            labels,
        })
    }

    fn row(&self, i: usize) -> &[u32] {
        &self.feats[self.offsets[i]..self.offsets[i + 1]]
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn loss(&self, m: &CtrModel, rows: impl Iterator<Item = usize>) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for i in rows {
            total += point_loss(sigmoid(m.logit_of(self.row(i))), self.labels[i]);
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }
}

#[inline]
fn point_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Mean binary cross-entropy with predictions clipped to `[ε, 1-ε]`.
pub fn bce_loss(model: &CtrModel, instances: &[CtrInstance]) -> Result<f64> {
    Ok(Packed::new(&model.featurizer, instances)?.loss(model, 0..instances.len()))
}

/// Gradient of [`bce_loss`] with respect to `(weights, bias)`.
///
/// Where the clip is active the loss is flat in the prediction and the
/// gradient contribution is zero.
pub fn bce_gradient(model: &CtrModel, instances: &[CtrInstance]) -> Result<(Vec<f64>, f64)> {
    let packed = Packed::new(&model.featurizer, instances)?;
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = 0.0;
    let n = packed.len().max(1) as f64;
    for i in 0..packed.len() {
        let p = sigmoid(model.logit_of(packed.row(i)));
        if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
            continue;
        }
        let g = (p - packed.labels[i]) / n;
        for &f in packed.row(i) {
            gw[f as usize] += g;
        }
        gb += g;
    }
    Ok((gw, gb))
}

/// Minibatch Adam on BCE with early stopping on a held-out split. Returns the
/// checkpoint with the lowest validation loss.
pub fn train(
    dataset: &CtrDataset,
    featurizer: &Featurizer,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::Config(
            "cannot train a click model on an empty dataset".into(),
        ));
    }
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::Config(
            "batch_size and max_epochs must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(Error::Config(
            "validation_fraction must lie in [0, 1)".into(),
        ));
    }
    let packed = Packed::new(featurizer, &dataset.instances)?;
    let mut rng = text::rng(seed);
    let mut order: Vec<usize> = (0..packed.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((packed.len() as f64) * config.validation_fraction).ceil() as usize;
    let (mut train_idx, val_idx) = if n_val == 0 || n_val >= packed.len() {
        (order.clone(), order)
    } else {
        let val = order.split_off(packed.len() - n_val);
        (order, val)
    };

    let mut model = CtrModel::zeros(featurizer.clone())?;
    let dim = model.weights.len();
    let mut adam = Adam::new(config.adam, dim + 1);
    let mut grad = SparseGrad::new(dim);
    let mut best = (
        packed.loss(&model, val_idx.iter().copied()),
        model.clone(),
        0usize,
    );
    let mut history = Vec::new();
    let mut bad = 0;

    for epoch in 1..=config.max_epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(config.batch_size) {
            adam.begin_step();
            let scale = 1.0 / batch.len() as f64;
            let mut gb = 0.0;
            for &i in batch {
                let row = packed.row(i);
                let g = (sigmoid(model.logit_of(row)) - packed.labels[i]) * scale;
                for &f in row {
                    grad.add(f, g);
                }
                gb += g;
            }
            for (i, g) in grad.drain() {
                model.weights[i as usize] += adam.delta(i as usize, g);
            }
            model.bias += adam.delta(dim, gb);
            model.steps += 1;
        }
        let stats = EpochStats {
            epoch,
            train_loss: packed.loss(&model, train_idx.iter().copied()),
            val_loss: packed.loss(&model, val_idx.iter().copied()),
        };
        debug!(
            "ctr epoch {epoch}: train {:.5} val {:.5}",
            stats.train_loss, stats.val_loss
        );
        history.push(stats);
        if stats.val_loss < best.0 {
            best = (stats.val_loss, model.clone(), epoch);
            bad = 0;
        } else {
            bad += 1;
            if bad >= config.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best.1,
        history,
        best_epoch: best.2,
    })
}
