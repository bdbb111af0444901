//! End-to-end orchestration of the periodic update loop: simulate traffic,
//! train the click model, mine co-occurrences, fine-tune, align, evaluate.

pub mod config;
pub mod lab;
pub mod stages;

pub use config::{
    CtrConfig, DataConfig, EvalConfig, PipelineConfig, PolicyConfig, Seeds, TaskPreset,
};
pub use lab::*;
pub use stages::{
    cmd_pipeline, ArtifactDir, PeriodRecord, RunManifest, ServingSpec, Stage, StageRecord,
    StageStatus,
};
