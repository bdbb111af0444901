//! Disk-backed stages. Each stage reads its inputs from an artifact
//! directory, writes its outputs there, and can run on its own.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Seeds};
use super::lab::*;
use crate::align::{write_trace, write_triples};
use crate::cor::{CooDict, CorRetriever};
use crate::ctr::CtrModel;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::policy::Policy;
use crate::world::{read_log, write_log, ImpressionRecord};

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const EVAL_LOG: &str = "eval_log.jsonl";
pub const CTR_MODEL: &str = "ctr_model.json";
pub const COO: &str = "coo.jsonl";
pub const SFT_POLICY: &str = "sft_policy.json";
pub const ALIGNED_POLICY: &str = "aligned_policy.json";
pub const ALIGN_TRACE: &str = "align_trace.csv";
pub const ALIGN_SUMMARY: &str = "align_summary.json";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";

pub fn preferences_file(t: usize) -> String {
    format!("preferences_t{t}.jsonl")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Simulate,
    TrainCtr,
    BuildCoo,
    Sft,
    Align,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::TrainCtr,
        Stage::BuildCoo,
        Stage::Sft,
        Stage::Align,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::TrainCtr => "train-ctr",
            Stage::BuildCoo => "build-coo",
            Stage::Sft => "sft",
            Stage::Align => "align",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    /// Not applicable under the config, e.g. co-occurrence mining with COR off.
    Skipped,
    Failed,
}

/// What one stage consumed and produced. Paths are relative to the run root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Artifact locations of one stage directory. `rel` is the directory as
/// recorded in manifests.
#[derive(Debug, Clone)]
pub struct ArtifactDir {
    pub root: PathBuf,
    pub rel: PathBuf,
}

impl ArtifactDir {
    pub fn new(root: &Path, rel: impl Into<PathBuf>) -> Self {
        Self {
            root: root.to_path_buf(),
            rel: rel.into(),
        }
    }

    /// A standalone directory; manifest paths are then bare file names.
    pub fn flat(dir: &Path) -> Self {
        Self::new(dir, PathBuf::new())
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(&self.rel).join(file)
    }

    pub fn rel(&self, file: &str) -> PathBuf {
        self.rel.join(file)
    }

    fn require(&self, file: &str) -> Result<PathBuf> {
        let p = self.path(file);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Data(format!(
                "missing input artifact {}",
                p.display()
            )))
        }
    }

    fn ensure(&self) -> Result<()> {
        std::fs::create_dir_all(self.root.join(&self.rel))?;
        Ok(())
    }
}

/// The policy and optional co-occurrence dictionary serving a period's traffic.
#[derive(Debug, Clone, Default)]
pub struct ServingSpec {
    pub policy: Option<PathBuf>,
    pub coo: Option<PathBuf>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Runs `body` as `stage`, timing it and tagging any error with the stage name.
fn run_stage(
    stage: Stage,
    body: impl FnOnce() -> Result<(StageStatus, Vec<PathBuf>, Vec<PathBuf>)>,
) -> Result<StageRecord> {
    let started_unix = unix_now();
    info!("stage {stage}: start");
    let (status, inputs, artifacts) = body().map_err(|e| e.in_stage(stage.name()))?;
    Ok(StageRecord {
        stage,
        status,
        inputs,
        artifacts,
        started_unix,
        finished_unix: unix_now(),
        error: None,
    })
}

fn retriever(
    config: &PipelineConfig,
    dir: &ArtifactDir,
    train: &[ImpressionRecord],
) -> Result<Option<CorRetriever>> {
    if !config.use_cor {
        return Ok(None);
    }
    let dict = CooDict::load(&dir.require(COO)?)?;
    Ok(Some(build_retriever(dict, train, config)?))
}

fn cor_inputs(config: &PipelineConfig, dir: &ArtifactDir) -> Vec<PathBuf> {
    if config.use_cor {
        vec![dir.rel(COO)]
    } else {
        Vec::new()
    }
}

/// Simulate one period of traffic served by `serving` (uniform policy when absent).
pub fn stage_simulate(
    config: &PipelineConfig,
    dir: &ArtifactDir,
    period: usize,
    serving: &ServingSpec,
    serving_rel: &[PathBuf],
) -> Result<StageRecord> {
    run_stage(Stage::Simulate, || {
        dir.ensure()?;
        let world = World::build(config)?;
        let policy = match &serving.policy {
            Some(p) => Policy::load(p)?,
            None => Policy::uniform(config.policy.hash_dim, config.policy.temperature)?,
        };
        let cor = match &serving.coo {
            Some(p) => Some(build_retriever(CooDict::load(p)?, &[], config)?),
            None => None,
        };
        let server = Serving {
            factory: PromptFactory::new(&world.universe, config, cor.as_ref()),
            policy: &policy,
        };
        let logs = simulate_period(&world, &server, config, period)?;
        write_log(&dir.path(TRAIN_LOG), &logs.train)?;
        write_log(&dir.path(EVAL_LOG), &logs.eval)?;
        Ok((
            StageStatus::Completed,
            serving_rel.to_vec(),
            vec![dir.rel(TRAIN_LOG), dir.rel(EVAL_LOG)],
        ))
    })
}

pub fn stage_train_ctr(config: &PipelineConfig, dir: &ArtifactDir) -> Result<StageRecord> {
    run_stage(Stage::TrainCtr, || {
        let log = read_log(&dir.require(TRAIN_LOG)?)?;
        let out = train_ctr(&log, config)?;
        out.model.save(&dir.path(CTR_MODEL))?;
        Ok((
            StageStatus::Completed,
            vec![dir.rel(TRAIN_LOG)],
            vec![dir.rel(CTR_MODEL)],
        ))
    })
}

pub fn stage_build_coo(config: &PipelineConfig, dir: &ArtifactDir) -> Result<StageRecord> {
    run_stage(Stage::BuildCoo, || {
        if !config.use_cor {
            return Ok((StageStatus::Skipped, Vec::new(), Vec::new()));
        }
        let log = read_log(&dir.require(TRAIN_LOG)?)?;
        build_coo(&log).save(&dir.path(COO))?;
        Ok((
            StageStatus::Completed,
            vec![dir.rel(TRAIN_LOG)],
            vec![dir.rel(COO)],
        ))
    })
}

pub fn stage_sft(config: &PipelineConfig, dir: &ArtifactDir, period: usize) -> Result<StageRecord> {
    run_stage(Stage::Sft, || {
        let world = World::build(config)?;
        let train = read_log(&dir.require(TRAIN_LOG)?)?;
        let cor = retriever(config, dir, &train)?;
        let factory = PromptFactory::new(&world.universe, config, cor.as_ref());
        let (_, sets) = period_prompts(&factory, &train, config, period)?;
        let gold = annotate(&sets.train, config, prompt_seed(config, period))?;
        run_sft(&sets.train, &gold, config)?
            .policy
            .save(&dir.path(SFT_POLICY))?;
        let mut inputs = vec![dir.rel(TRAIN_LOG)];
        inputs.extend(cor_inputs(config, dir));
        Ok((StageStatus::Completed, inputs, vec![dir.rel(SFT_POLICY)]))
    })
}

pub fn stage_align(
    config: &PipelineConfig,
    dir: &ArtifactDir,
    period: usize,
) -> Result<StageRecord> {
    run_stage(Stage::Align, || {
        let world = World::build(config)?;
        let train = read_log(&dir.require(TRAIN_LOG)?)?;
        let ctr = CtrModel::load(&dir.require(CTR_MODEL)?)?;
        let sft = Policy::load(&dir.require(SFT_POLICY)?)?;
        let cor = retriever(config, dir, &train)?;
        let factory = PromptFactory::new(&world.universe, config, cor.as_ref());
        let (_, sets) = period_prompts(&factory, &train, config, period)?;
        let out = run_align(&sft, &ctr, &sets, config, period)?;
        out.policy.save(&dir.path(ALIGNED_POLICY))?;
        write_trace(&dir.path(ALIGN_TRACE), &out.trace)?;
        save_json(&dir.path(ALIGN_SUMMARY), &AlignSummary::of(&out))?;
        let mut artifacts = vec![
            dir.rel(ALIGNED_POLICY),
            dir.rel(ALIGN_TRACE),
            dir.rel(ALIGN_SUMMARY),
        ];
        for (i, triples) in out.triples.iter().enumerate() {
            let name = preferences_file(i + 1);
            write_triples(&dir.path(&name), triples)?;
            artifacts.push(dir.rel(&name));
        }
        let mut inputs = vec![dir.rel(TRAIN_LOG), dir.rel(CTR_MODEL), dir.rel(SFT_POLICY)];
        inputs.extend(cor_inputs(config, dir));
        Ok((StageStatus::Completed, inputs, artifacts))
    })
}

pub fn stage_evaluate(
    config: &PipelineConfig,
    dir: &ArtifactDir,
    period: usize,
) -> Result<StageRecord> {
    run_stage(Stage::Evaluate, || {
        let world = World::build(config)?;
        let train = read_log(&dir.require(TRAIN_LOG)?)?;
        let eval = read_log(&dir.require(EVAL_LOG)?)?;
        let ctr = CtrModel::load(&dir.require(CTR_MODEL)?)?;
        let sft = Policy::load(&dir.require(SFT_POLICY)?)?;
        let aligned = Policy::load(&dir.require(ALIGNED_POLICY)?)?;
        let summary: AlignSummary = load_json(&dir.require(ALIGN_SUMMARY)?)?;
        let cor = retriever(config, dir, &train)?;
        let factory = PromptFactory::new(&world.universe, config, cor.as_ref());
        let (_, sets) = period_prompts(&factory, &train, config, period)?;
        let report = evaluate_period(
            &world, &ctr, &eval, &sets.test, &sft, &aligned, &summary, config,
        )?;
        std::fs::write(dir.path(REPORT_CSV), report.to_csv())?;
        std::fs::write(dir.path(REPORT_JSON), report.to_json()?)?;
        let mut inputs = vec![
            dir.rel(TRAIN_LOG),
            dir.rel(EVAL_LOG),
            dir.rel(CTR_MODEL),
            dir.rel(SFT_POLICY),
            dir.rel(ALIGNED_POLICY),
            dir.rel(ALIGN_SUMMARY),
        ];
        inputs.extend(cor_inputs(config, dir));
        Ok((
            StageStatus::Completed,
            inputs,
            vec![dir.rel(REPORT_CSV), dir.rel(REPORT_JSON)],
        ))
    })
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    EvalReport::from_json(&std::fs::read_to_string(path)?)
}

/// One update period of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub period: usize,
    pub dir: PathBuf,
    /// Aligned policy that generated this period's traffic; `None` means the
    /// uniform bootstrap policy.
    pub serving_policy: Option<PathBuf>,
    pub serving_coo: Option<PathBuf>,
    pub stages: Vec<StageRecord>,
}

impl PeriodRecord {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub config: PathBuf,
    pub seeds: Seeds,
    pub task: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub status: StageStatus,
    pub periods: Vec<PeriodRecord>,
}

impl RunManifest {
    /// Every artifact of every completed stage, relative to the run root.
    pub fn artifacts(&self) -> Vec<&Path> {
        let mut v = vec![self.config.as_path()];
        for p in &self.periods {
            for s in &p.stages {
                v.extend(s.artifacts.iter().map(PathBuf::as_path));
            }
        }
        v
    }

    /// Fails if any referenced artifact is missing under `root`.
    pub fn check_artifacts(&self, root: &Path) -> Result<()> {
        for a in self.artifacts() {
            if !root.join(a).is_file() {
                return Err(Error::Data(format!(
                    "manifest references missing artifact {}",
                    a.display()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_json(path)
    }

    /// Report of the last completed period.
    pub fn final_report(&self, root: &Path) -> Result<EvalReport> {
        let period = self
            .periods
            .iter()
            .rev()
            .find(|p| {
                p.stage(Stage::Evaluate)
                    .is_some_and(|s| s.status == StageStatus::Completed)
            })
            .ok_or_else(|| Error::Data("manifest has no evaluated period".into()))?;
        read_report(&root.join(&period.dir).join(REPORT_JSON))
    }
}

pub fn period_dir(period: usize) -> String {
    format!("period_{period}")
}

/// Run every stage for each period under `config.out_dir`. Period `p > 1` is
/// served by period `p - 1`'s aligned policy and co-occurrence dictionary.
/// The manifest is written last, including on failure, after which the
/// stage-tagged error is returned.
pub fn cmd_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    let root = config.out_dir.clone();
    std::fs::create_dir_all(&root)?;
    std::fs::write(root.join(CONFIG_COPY), config.to_toml()?)?;
    let mut manifest = RunManifest {
        config_hash: config.hash()?,
        config: PathBuf::from(CONFIG_COPY),
        seeds: config.seeds(),
        task: config.task.name().to_string(),
        started_unix: unix_now(),
        finished_unix: 0,
        status: StageStatus::Completed,
        periods: Vec::new(),
    };
    let mut failure = None;
    'periods: for period in 1..=config.periods {
        let dir = ArtifactDir::new(&root, period_dir(period));
        let (serving, serving_rel) = match manifest.periods.last() {
            None => (ServingSpec::default(), Vec::new()),
            Some(prev) => {
                let prev_dir = ArtifactDir::new(&root, &prev.dir);
                let coo = config.use_cor.then(|| prev_dir.path(COO));
                let mut rel = vec![prev_dir.rel(ALIGNED_POLICY)];
                rel.extend(config.use_cor.then(|| prev_dir.rel(COO)));
                (
                    ServingSpec {
                        policy: Some(prev_dir.path(ALIGNED_POLICY)),
                        coo,
                    },
                    rel,
                )
            }
        };
        let mut record = PeriodRecord {
            period,
            dir: dir.rel.clone(),
            serving_policy: serving_rel.first().cloned(),
            serving_coo: serving_rel.get(1).cloned(),
            stages: Vec::new(),
        };
        for stage in Stage::ALL {
            let started = unix_now();
            let result = match stage {
                Stage::Simulate => stage_simulate(config, &dir, period, &serving, &serving_rel),
                Stage::TrainCtr => stage_train_ctr(config, &dir),
                Stage::BuildCoo => stage_build_coo(config, &dir),
                Stage::Sft => stage_sft(config, &dir, period),
                Stage::Align => stage_align(config, &dir, period),
                Stage::Evaluate => stage_evaluate(config, &dir, period),
            };
            match result {
                Ok(r) => record.stages.push(r),
                Err(e) => {
                    record.stages.push(StageRecord {
                        stage,
                        status: StageStatus::Failed,
                        inputs: Vec::new(),
                        artifacts: Vec::new(),
                        started_unix: started,
                        finished_unix: unix_now(),
                        error: Some(e.to_string()),
                    });
                    manifest.periods.push(record);
                    manifest.status = StageStatus::Failed;
                    failure = Some(e);
                    break 'periods;
                }
            }
        }
        manifest.periods.push(record);
    }
    manifest.finished_unix = unix_now();
    manifest.check_artifacts(&root)?;
    manifest.save(&root.join(MANIFEST))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}
