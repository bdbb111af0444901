//! Per-slot click-through-rate predictor used as the process reward model.
//!
//! Each displayed query in a log becomes one instance: the user query, the
//! queries shown before it in the same list, the query itself and its slot.

mod featurizer;
mod model;
mod train;

pub use featurizer::{FeatureGroups, Featurizer};
pub use model::{CtrModel, MODEL_FORMAT, MODEL_VERSION};
pub use train::{bce_gradient, bce_loss, train, EpochStats, TrainConfig, TrainOutcome, BCE_EPS};

use serde::{Deserialize, Serialize};

use crate::world::ImpressionRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrInstance {
    pub user_query: String,
    /// Queries displayed in earlier slots of the same list.
    pub context: Vec<String>,
    pub target: String,
    /// 1-based display slot.
    pub slot: usize,
    pub label: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CtrDataset {
    pub instances: Vec<CtrInstance>,
    /// Inclusive day range of the source records.
    pub days: Option<(u32, u32)>,
}

impl CtrDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn click_rate(&self) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        let pos = self
            .instances
            .iter()
            .filter(|i| i.label == Some(true))
            .count();
        pos as f64 / self.instances.len() as f64
    }
}

pub fn extract_instances(log: &[ImpressionRecord]) -> CtrDataset {
    let mut instances = Vec::with_capacity(log.len() * 3);
    let mut days: Option<(u32, u32)> = None;
    for rec in log {
        days = Some(match days {
            None => (rec.day, rec.day),
            Some((lo, hi)) => (lo.min(rec.day), hi.max(rec.day)),
        });
        let qs = &rec.response.queries;
        for (k, q) in qs.iter().enumerate() {
            instances.push(CtrInstance {
                user_query: rec.prompt.user_query.clone(),
                context: qs[..k].to_vec(),
                target: q.clone(),
                slot: k + 1,
                label: Some(rec.clicks[k] == 1),
            });
        }
    }
    CtrDataset { instances, days }
}
