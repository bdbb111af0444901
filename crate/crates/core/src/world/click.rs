use serde::{Deserialize, Serialize};

use super::universe::{Query, QueryUniverse};
use crate::error::{Error, Result};
use crate::reward::ClickScorer;
use crate::text;

/// Parameters from which a [`UserClickModel`] is laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClickModelConfig {
    pub n_slots: usize,
    pub base_rate: f64,
    pub same_topic_affinity: f64,
    pub cross_topic_affinity: f64,
    pub relatedness_bonus: f64,
    pub successor_bonus: f64,
    /// Logit gain per word beyond the first in the candidate.
    pub length_bonus: f64,
    /// Slot `k` (0-based) gets multiplier `position_decay^k`.
    pub position_decay: f64,
    pub noise_scale: f64,
}

impl Default for ClickModelConfig {
    fn default() -> Self {
        Self {
            n_slots: 3,
            base_rate: 0.04,
            same_topic_affinity: 1.0,
            cross_topic_affinity: -1.5,
            relatedness_bonus: 0.6,
            successor_bonus: 1.5,
            length_bonus: 0.15,
            position_decay: 0.85,
            noise_scale: 0.01,
        }
    }
}

/// Ground-truth user click behaviour.
///
/// For user query `u`, candidate `c` and 0-based slot `k`:
///
/// ```text
/// logit = logit(base_rate) + affinity[topic(u)][topic(c)]
///       + relatedness_bonus * |words(u) ∩ words(c)|
///       + successor_bonus * [c is an intent successor of u]
///       + length_bonus * (|words(c)| - 1)
/// p     = clamp(sigmoid(logit) * position_bias[k] + noise(u, c), 0, 1)
/// ```
///
/// `noise(u, c)` is a fixed per-pair offset, uniform on
/// `[-noise_scale, noise_scale]`, derived from a hash of both texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserClickModel {
    pub affinity: Vec<Vec<f64>>,
    pub position_bias: Vec<f64>,
    pub noise_scale: f64,
    pub base_rate: f64,
    pub relatedness_bonus: f64,
    pub successor_bonus: f64,
    #[serde(default)]
    pub length_bonus: f64,
    pub noise_seed: u64,
}

impl UserClickModel {
    pub fn from_config(cfg: &ClickModelConfig, n_topics: usize, seed: u64) -> Result<Self> {
        if cfg.n_slots == 0 {
            return Err(Error::Config("click model needs at least one slot".into()));
        }
        if !(0.0..=1.0).contains(&cfg.base_rate) {
            return Err(Error::Config("base rate must lie in [0, 1]".into()));
        }
        if !(cfg.position_decay > 0.0 && cfg.position_decay <= 1.0) {
            return Err(Error::Config("position decay must lie in (0, 1]".into()));
        }
        if !(cfg.noise_scale >= 0.0) {
            return Err(Error::Config("noise scale must be >= 0".into()));
        }
        let affinity = (0..n_topics)
            .map(|a| {
                (0..n_topics)
                    .map(|b| {
                        if a == b {
                            cfg.same_topic_affinity
                        } else {
                            cfg.cross_topic_affinity
                        }
                    })
                    .collect()
            })
            .collect();
        let position_bias = (0..cfg.n_slots)
            .map(|k| cfg.position_decay.powi(k as i32))
            .collect();
        let m = Self {
            affinity,
            position_bias,
            noise_scale: cfg.noise_scale,
            base_rate: cfg.base_rate,
            relatedness_bonus: cfg.relatedness_bonus,
            successor_bonus: cfg.successor_bonus,
            length_bonus: cfg.length_bonus,
            noise_seed: text::substream(seed, "click-noise"),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.position_bias.is_empty() {
            return Err(Error::Config(
                "position bias must cover at least one slot".into(),
            ));
        }
        for (k, &b) in self.position_bias.iter().enumerate() {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::Config(format!(
                    "position_bias[{k}] = {b} outside (0, 1]"
                )));
            }
            if k > 0 && b > self.position_bias[k - 1] {
                return Err(Error::Config("position bias must be non-increasing".into()));
            }
        }
        Ok(())
    }

    pub fn n_slots(&self) -> usize {
        self.position_bias.len()
    }

    fn noise(&self, user: &str, cand: &str) -> f64 {
        if self.noise_scale == 0.0 {
            return 0.0;
        }
        let h = text::hash_parts(
            self.noise_seed as u32 ^ (self.noise_seed >> 32) as u32,
            &[user, cand],
        );
        self.noise_scale * (2.0 * text::unit_interval(h) - 1.0)
    }

    /// Ground-truth click probability; `slot` is 0-based.
    pub fn true_click_prob(
        &self,
        universe: &QueryUniverse,
        user: &Query,
        cand: &Query,
        slot: usize,
    ) -> Result<f64> {
        if slot >= self.position_bias.len() {
            return Err(Error::Argument(format!(
                "slot {slot} out of range for {} slots",
                self.position_bias.len()
            )));
        }
        let affinity = self
            .affinity
            .get(user.topic)
            .and_then(|row| row.get(cand.topic))
            .copied()
            .unwrap_or(0.0);
        let shared = text::shared_words(&user.text, &cand.text) as f64;
        let succ = if universe
            .successors
            .get(user.id)
            .is_some_and(|s| s.contains(&cand.id))
        {
            1.0
        } else {
            0.0
        };
        let extra_words = text::words(&cand.text).count().saturating_sub(1) as f64;
        let logit = text::logit(self.base_rate)
            + affinity
            + self.relatedness_bonus * shared
            + self.successor_bonus * succ
            + self.length_bonus * extra_words;
        let p =
            text::sigmoid(logit) * self.position_bias[slot] + self.noise(&user.text, &cand.text);
        Ok(p.clamp(0.0, 1.0))
    }
}

/// The world's click model as a [`ClickScorer`], for measuring the true
/// expected reward of a response. Unknown texts and out-of-range slots score 0.
pub struct GroundTruth<'a> {
    pub universe: &'a QueryUniverse,
    pub model: &'a UserClickModel,
}

impl ClickScorer for GroundTruth<'_> {
    fn click_prob(&self, user_query: &str, _context: &[&str], target: &str, slot: usize) -> f64 {
        match (
            self.universe.lookup(user_query),
            self.universe.lookup(target),
        ) {
            (Some(u), Some(c)) if slot >= 1 => self
                .model
                .true_click_prob(self.universe, u, c, slot - 1)
                .unwrap_or(0.0),
            _ => 0.0,
        }
    }
}
