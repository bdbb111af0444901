use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::featurizer::Featurizer;
use super::CtrInstance;
use crate::error::{Error, Result};
use crate::reward::ClickScorer;
use crate::text::sigmoid;

pub const MODEL_FORMAT: &str = "gqr-ctr-model";
pub const MODEL_VERSION: u32 = 1;

/// Logistic click model over hashed features. Serves as the process reward
/// model: every slot of a candidate list is scored independently given its
/// preceding queries.
#[derive(Debug, Clone, PartialEq)]
pub struct CtrModel {
    pub featurizer: Featurizer,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub steps: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    featurizer: Featurizer,
    bias: f64,
    steps: u64,
    /// Non-zero weights as `(index, value)`.
    weights: Vec<(u32, f64)>,
}

impl CtrModel {
    pub fn zeros(featurizer: Featurizer) -> Result<Self> {
        featurizer.validate()?;
        Ok(Self {
            weights: vec![0.0; featurizer.hash_dim as usize],
            featurizer,
            bias: 0.0,
            steps: 0,
        })
    }

    #[inline]
    pub fn logit_of(&self, features: &[u32]) -> f64 {
        self.bias
            + features
                .iter()
                .map(|&i| self.weights[i as usize])
                .sum::<f64>()
    }

    pub fn predict(&self, inst: &CtrInstance) -> f64 {
        let ctx: Vec<&str> = inst.context.iter().map(String::as_str).collect();
        self.click_prob(&inst.user_query, &ctx, &inst.target, inst.slot)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            featurizer: self.featurizer.clone(),
            bias: self.bias,
            steps: self.steps,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(i, &w)| (i as u32, w))
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Version {
                expected: format!("{MODEL_FORMAT} v{MODEL_VERSION}"),
                found: format!("{} v{}", file.format, file.version),
            });
        }
        let mut m = Self::zeros(file.featurizer)?;
        for (i, w) in file.weights {
            let slot = m
                .weights
                .get_mut(i as usize)
                .ok_or_else(|| Error::Data(format!("weight index {i} out of range")))?;
            *slot = w;
        }
        m.bias = file.bias;
        m.steps = file.steps;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl ClickScorer for CtrModel {
    fn click_prob(&self, user_query: &str, context: &[&str], target: &str, slot: usize) -> f64 {
        let f = self.featurizer.features(user_query, context, target, slot);
        sigmoid(self.logit_of(&f))
    }
}
