use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::AlignConfig;
use crate::cor::CorConfig;
use crate::ctr::TrainConfig;
use crate::error::{Error, Result};
use crate::policy::{PoolConfig, SftConfig};
use crate::prompt::ComponentKind;
use crate::text;
use crate::world::{ClickModelConfig, WorldConfig};

/// The three recommendation surfaces, each fixing list length and click semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskPreset {
    #[serde(rename = "suggestion_N3_multi")]
    Suggestion,
    #[serde(rename = "facets_N8_multi")]
    Facets,
    #[serde(rename = "hint_N1_single")]
    Hint,
}

impl TaskPreset {
    pub fn n_queries(self) -> usize {
        match self {
            Self::Suggestion => 3,
            Self::Facets => 8,
            Self::Hint => 1,
        }
    }

    pub fn component(self) -> ComponentKind {
        match self {
            Self::Hint => ComponentKind::SingleChoice,
            _ => ComponentKind::MultiChoice,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Suggestion => "suggestion_N3_multi",
            Self::Facets => "facets_N8_multi",
            Self::Hint => "hint_N1_single",
        }
    }
}

impl fmt::Display for TaskPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "suggestion" | "suggestion_N3_multi" => Ok(Self::Suggestion),
            "facets" | "facets_N8_multi" => Ok(Self::Facets),
            "hint" | "hint_N1_single" => Ok(Self::Hint),
            other => Err(Error::Argument(format!(
                "unknown task {other:?}; expected suggestion, facets or hint"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub impressions_per_day: usize,
    /// Days of logs per period used for CTR training, COR and prompt mining.
    pub train_days: u32,
    /// Share of distinct user queries whose prompts go to the test split.
    pub test_fraction: f64,
    pub n_train_prompts: usize,
    pub n_test_prompts: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            impressions_per_day: 20_000,
            train_days: 14,
            test_fraction: 0.3,
            n_train_prompts: 600,
            n_test_prompts: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CtrConfig {
    pub hash_dim: u32,
    pub train: TrainConfig,
}

impl Default for CtrConfig {
    fn default() -> Self {
        Self {
            hash_dim: 1 << 18,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hash_dim: u32,
    /// Sampling temperature of the served and evaluated policy.
    pub temperature: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hash_dim: 1 << 16,
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Held-out days simulated after the training days.
    pub days: u32,
    /// Sampled responses per test prompt for expected-click metrics.
    pub samples_per_prompt: usize,
    /// Responses sampled to measure the near-duplicate rate.
    pub overlap_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            days: 7,
            samples_per_prompt: 4,
            overlap_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub task: TaskPreset,
    pub seed: u64,
    /// Update periods; each period's aligned policy serves the next one's traffic.
    pub periods: usize,
    pub out_dir: PathBuf,
    pub use_cor: bool,
    pub world: WorldConfig,
    /// `n_slots` is always taken from the task preset.
    pub click: ClickModelConfig,
    pub data: DataConfig,
    pub pool: PoolConfig,
    pub policy: PolicyConfig,
    pub ctr: CtrConfig,
    pub cor: CorConfig,
    pub sft: SftConfig,
    pub align: AlignConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            task: TaskPreset::Suggestion,
            seed: 0,
            periods: 1,
            out_dir: PathBuf::from("runs/default"),
            use_cor: true,
            world: WorldConfig::default(),
            click: ClickModelConfig::default(),
            data: DataConfig::default(),
            pool: PoolConfig::default(),
            policy: PolicyConfig::default(),
            ctr: CtrConfig::default(),
            cor: CorConfig::default(),
            sft: SftConfig::default(),
            align: AlignConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Independent seeds derived from the root seed by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub world: u64,
    pub sft: u64,
    pub align: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn new(root: u64) -> Self {
        Self {
            root,
            world: text::substream(root, "world"),
            sft: text::substream(root, "sft"),
            align: text::substream(root, "align"),
            eval: text::substream(root, "eval"),
        }
    }

    /// Traffic simulation of one period.
    pub fn simulation(&self, period: usize) -> u64 {
        text::indexed(text::substream(self.world, "traffic"), period as u64)
    }

    pub fn align_period(&self, period: usize) -> u64 {
        text::indexed(self.align, period as u64)
    }
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&body)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::new(self.seed)
    }

    pub fn n_queries(&self) -> usize {
        self.task.n_queries()
    }

    /// Click model parameters with one position-bias slot per displayed query.
    pub fn click_config(&self) -> ClickModelConfig {
        ClickModelConfig {
            n_slots: self.n_queries(),
            ..self.click.clone()
        }
    }

    /// SHA-256 over the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(&Self {
            out_dir: PathBuf::new(),
            ..self.clone()
        })?;
        Ok(Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.cor.validate()?;
        self.align.validate()?;
        if self.periods == 0 {
            return Err(Error::Config("periods must be at least 1".into()));
        }
        let d = &self.data;
        if d.impressions_per_day == 0 || d.train_days == 0 {
            return Err(Error::Config(
                "need positive impressions_per_day and train_days".into(),
            ));
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if d.n_train_prompts == 0 || d.n_test_prompts == 0 {
            return Err(Error::Config("prompt set sizes must be positive".into()));
        }
        if self.eval.days == 0 || self.eval.samples_per_prompt == 0 {
            return Err(Error::Config(
                "eval days and samples_per_prompt must be positive".into(),
            ));
        }
        if self.pool.size < self.n_queries() {
            return Err(Error::Config(format!(
                "pool size {} is smaller than the {} queries per response",
                self.pool.size,
                self.n_queries()
            )));
        }
        if !(self.policy.temperature > 0.0) || !self.policy.hash_dim.is_power_of_two() {
            return Err(Error::Config(
                "policy needs a positive temperature and power-of-two hash_dim".into(),
            ));
        }
        if !self.ctr.hash_dim.is_power_of_two() {
            return Err(Error::Config("ctr hash_dim must be a power of two".into()));
        }
        if let Some(r) = self.cor.n_ref {
            if r > self.n_queries() {
                return Err(Error::Config(format!(
                    "cor.n_ref {r} exceeds N = {}",
                    self.n_queries()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        assert_eq!(
            (
                TaskPreset::Suggestion.n_queries(),
                TaskPreset::Suggestion.component()
            ),
            (3, ComponentKind::MultiChoice)
        );
        assert_eq!(
            (
                TaskPreset::Facets.n_queries(),
                TaskPreset::Facets.component()
            ),
            (8, ComponentKind::MultiChoice)
        );
        assert_eq!(
            (TaskPreset::Hint.n_queries(), TaskPreset::Hint.component()),
            (1, ComponentKind::SingleChoice)
        );
        assert_eq!("facets".parse::<TaskPreset>().unwrap(), TaskPreset::Facets);
        assert!(matches!("x".parse::<TaskPreset>(), Err(Error::Argument(_))));
    }

    #[test]
    fn toml_round_trip_and_partial_sections() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        let p = PipelineConfig::from_toml(
            "task = \"hint_N1_single\"\nseed = 5\n[world]\nn_queries = 120\n",
        )
        .unwrap();
        assert_eq!(p.task, TaskPreset::Hint);
        assert_eq!(p.world.n_queries, 120);
        assert_eq!(p.world.n_topics, WorldConfig::default().n_topics);
        assert_eq!(p.click_config().n_slots, 1);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(matches!(
            PipelineConfig::from_toml("sed = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::from_toml("[align]\nbeam = 3"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_values_are_errors() {
        assert!(PipelineConfig::from_toml("periods = 0").is_err());
        assert!(PipelineConfig::from_toml("[align]\nconvergence_delta = 0.0").is_err());
        assert!(PipelineConfig::from_toml("[pool]\nsize = 2").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            seed: 1,
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        let moved = PipelineConfig {
            out_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), moved.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
        let s = Seeds::new(3);
        assert_ne!(s.world, s.sft);
        assert_ne!(s.simulation(1), s.simulation(2));
    }
}
