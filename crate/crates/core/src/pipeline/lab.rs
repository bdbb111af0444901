//! In-memory stage implementations. The CLI layer wraps these with artifact I/O.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::rc::Rc;

use log::info;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::align::{align, overlapping_pairs, AlignOutcome};
use crate::cor::{
    annotate_with_cor, sessions_from_log, synthesize_annotation, CooDict, CorRetriever,
};
use crate::ctr::{extract_instances, train, CtrModel, Featurizer, TrainOutcome};
use crate::error::{Error, Result};
use crate::metrics::{aec, auc, daily_list_ctr, diff_ctr, logloss, EvalReport};
use crate::policy::{
    sft_train, CandidatePool, Policy, PoolBuilder, PreparedPrompt, SftExample, SftOutcome,
};
use crate::prompt::{PromptRecord, ResponseRecord};
use crate::reward::ClickScorer;
use crate::text;
use crate::world::{
    build_universe, simulate_day, GroundTruth, ImpressionRecord, QueryUniverse, Recommender,
    UserClickModel,
};

/// The synthetic environment: query universe plus ground-truth click model.
#[derive(Debug, Clone)]
pub struct World {
    pub universe: QueryUniverse,
    pub click: UserClickModel,
}

impl World {
    pub fn build(config: &PipelineConfig) -> Result<Self> {
        let seed = config.seeds().world;
        let universe = build_universe(&config.world, seed)?;
        let click = UserClickModel::from_config(
            &config.click_config(),
            config.world.n_topics,
            text::substream(seed, "clicks"),
        )?;
        Ok(Self { universe, click })
    }

    pub fn truth(&self) -> GroundTruth<'_> {
        GroundTruth {
            universe: &self.universe,
            model: &self.click,
        }
    }
}

/// Prepared prompts kept by [`PromptFactory::prepare_cached`] before the
/// cache is flushed.
const PROMPT_CACHE_CAP: usize = 20_000;

type Context = (String, Vec<String>);

/// Builds policy-ready prompts: side information, then the candidate pool.
/// COR lookups are memoized per user query.
pub struct PromptFactory<'a> {
    pub universe: &'a QueryUniverse,
    pub config: &'a PipelineConfig,
    pub cor: Option<&'a CorRetriever>,
    cor_cache: RefCell<HashMap<String, Vec<String>>>,
    prompt_cache: RefCell<HashMap<Context, Rc<PreparedPrompt>>>,
}

impl<'a> PromptFactory<'a> {
    pub fn new(
        universe: &'a QueryUniverse,
        config: &'a PipelineConfig,
        cor: Option<&'a CorRetriever>,
    ) -> Self {
        Self {
            universe,
            config,
            cor,
            cor_cache: RefCell::new(HashMap::new()),
            prompt_cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn prompt(&self, user_query: &str, history: &[String]) -> Result<PromptRecord> {
        let p = PromptRecord::new(
            user_query,
            self.config.n_queries(),
            self.config.task.component(),
        )?
        .with_history(history.to_vec());
        let Some(cor) = self.cor else { return Ok(p) };
        if let Some(c) = self.cor_cache.borrow().get(user_query) {
            return Ok(annotate_with_cor(p, c.clone()));
        }
        let c = cor.retrieve(user_query)?;
        self.cor_cache
            .borrow_mut()
            .insert(user_query.to_string(), c.clone());
        Ok(annotate_with_cor(p, c))
    }

    pub fn pool(&self, prompt: &PromptRecord) -> Result<CandidatePool> {
        PoolBuilder::new(self.universe, &self.config.pool).build(prompt)
    }

    pub fn prepare(&self, user_query: &str, history: &[String]) -> Result<PreparedPrompt> {
        let prompt = self.prompt(user_query, history)?;
        let pool = self.pool(&prompt)?;
        Ok(PreparedPrompt::new(
            prompt,
            pool,
            self.config.policy.hash_dim,
        ))
    }

    /// Like [`prepare`](Self::prepare), reusing earlier results for the same context.
    pub fn prepare_cached(
        &self,
        user_query: &str,
        history: &[String],
    ) -> Result<Rc<PreparedPrompt>> {
        let key = (user_query.to_string(), history.to_vec());
        if let Some(pp) = self.prompt_cache.borrow().get(&key) {
            return Ok(Rc::clone(pp));
        }
        let pp = Rc::new(self.prepare(user_query, history)?);
        let mut cache = self.prompt_cache.borrow_mut();
        if cache.len() >= PROMPT_CACHE_CAP {
            cache.clear();
        }
        cache.insert(key, Rc::clone(&pp));
        Ok(pp)
    }
}

/// Serves sampled policy responses to simulated users.
pub struct Serving<'a> {
    pub factory: PromptFactory<'a>,
    pub policy: &'a Policy,
}

impl Recommender for Serving<'_> {
    fn recommend(
        &self,
        user_query: &str,
        history: &[String],
        rng: &mut ChaCha8Rng,
    ) -> Result<(PromptRecord, ResponseRecord)> {
        let pp = self.factory.prepare_cached(user_query, history)?;
        let response = self.policy.sample_response(&pp, rng)?;
        Ok((pp.prompt.clone(), response))
    }
}

/// One period of traffic, split into training and held-out days.
#[derive(Debug, Clone, PartialEq)]
pub struct Logs {
    pub train: Vec<ImpressionRecord>,
    pub eval: Vec<ImpressionRecord>,
}

/// First simulated day of `period` (1-based); periods occupy consecutive day ranges.
pub fn first_day(config: &PipelineConfig, period: usize) -> u32 {
    (period as u32 - 1) * (config.data.train_days + config.eval.days)
}

/// Simulate exactly `impressions_per_day` impressions for each day of `period`.
pub fn simulate_period(
    world: &World,
    recommender: &dyn Recommender,
    config: &PipelineConfig,
    period: usize,
) -> Result<Logs> {
    info!("period {period}: simulating traffic");
    let seed = config.seeds().simulation(period);
    let target = config.data.impressions_per_day;
    let start = first_day(config, period);
    let mut logs = Logs {
        train: Vec::new(),
        eval: Vec::new(),
    };
    for d in 0..config.data.train_days + config.eval.days {
        let day = start + d;
        let mut sessions =
            (target as f64 / config.world.mean_session_length.max(1.0) * 1.25).ceil() as usize + 1;
        let records = loop {
            let r = simulate_day(
                &world.universe,
                &world.click,
                recommender,
                sessions,
                day,
                seed,
            )?;
            if r.len() >= target {
                break r;
            }
            sessions *= 2;
        };
        let dest = if d < config.data.train_days {
            &mut logs.train
        } else {
            &mut logs.eval
        };
        dest.extend(records.into_iter().take(target));
    }
    info!(
        "period {period}: simulated {} train / {} held-out impressions",
        logs.train.len(),
        logs.eval.len()
    );
    Ok(logs)
}

pub fn train_ctr(log: &[ImpressionRecord], config: &PipelineConfig) -> Result<TrainOutcome> {
    let dataset = extract_instances(log);
    let featurizer = Featurizer::with_dim(config.ctr.hash_dim)?;
    let out = train(
        &dataset,
        &featurizer,
        &config.ctr.train,
        text::substream(config.seed, "ctr"),
    )?;
    info!(
        "ctr: {} instances, click rate {:.4}, best epoch {}",
        dataset.len(),
        dataset.click_rate(),
        out.best_epoch
    );
    Ok(out)
}

pub fn build_coo(log: &[ImpressionRecord]) -> CooDict {
    CooDict::build(&sessions_from_log(log))
}

/// Retriever over `dict`, indexing every query text seen in `log` or `dict`.
pub fn build_retriever(
    dict: CooDict,
    log: &[ImpressionRecord],
    config: &PipelineConfig,
) -> Result<CorRetriever> {
    let mut texts: BTreeSet<String> = BTreeSet::new();
    for r in log {
        texts.insert(r.prompt.user_query.clone());
        texts.extend(r.prompt.history.iter().cloned());
    }
    for (q, succ) in dict.iter() {
        texts.insert(q.to_string());
        texts.extend(succ.iter().map(|(s, _)| s.clone()));
    }
    let texts: Vec<String> = texts.into_iter().collect();
    CorRetriever::new(dict, &texts, config.cor.clone())
}

/// Raw `(user_query, history)` contexts for training and testing.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContexts {
    pub train: Vec<(String, Vec<String>)>,
    pub test: Vec<(String, Vec<String>)>,
}

/// Distinct logged contexts, split by user query so that no test user query
/// appears in training, then subsampled to the configured sizes.
pub fn mine_contexts(
    log: &[ImpressionRecord],
    config: &PipelineConfig,
    seed: u64,
) -> Result<PromptContexts> {
    let tag = text::substream(seed, "split") as u32;
    let mut seen = HashSet::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in log {
        let key = (r.prompt.user_query.clone(), r.prompt.history.clone());
        if !seen.insert(key.clone()) {
            continue;
        }
        if text::unit_interval(text::hash_parts(tag, &[&key.0])) < config.data.test_fraction {
            test.push(key);
        } else {
            train.push(key);
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "log yields {} training and {} test contexts",
            train.len(),
            test.len()
        )));
    }
    let mut rng = text::rng(text::substream(seed, "subsample"));
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    train.truncate(config.data.n_train_prompts);
    test.truncate(config.data.n_test_prompts);
    Ok(PromptContexts { train, test })
}

/// Seed for prompt mining and annotation in `period`.
pub fn prompt_seed(config: &PipelineConfig, period: usize) -> u64 {
    text::indexed(config.seeds().sft, period as u64)
}

#[derive(Debug, Clone)]
pub struct PromptSets {
    pub train: Vec<PreparedPrompt>,
    pub test: Vec<PreparedPrompt>,
}

pub fn prepare_prompts(
    factory: &PromptFactory<'_>,
    contexts: &PromptContexts,
) -> Result<PromptSets> {
    let prep = |v: &[(String, Vec<String>)]| -> Result<Vec<PreparedPrompt>> {
        v.iter().map(|(u, h)| factory.prepare(u, h)).collect()
    };
    Ok(PromptSets {
        train: prep(&contexts.train)?,
        test: prep(&contexts.test)?,
    })
}

/// Mine and prepare the train/test prompts of `period` from its training log.
pub fn period_prompts(
    factory: &PromptFactory<'_>,
    train_log: &[ImpressionRecord],
    config: &PipelineConfig,
    period: usize,
) -> Result<(PromptContexts, PromptSets)> {
    let contexts = mine_contexts(train_log, config, prompt_seed(config, period))?;
    let sets = prepare_prompts(factory, &contexts)?;
    Ok((contexts, sets))
}

/// Synthetic gold responses for the training prompts.
pub fn annotate(
    prompts: &[PreparedPrompt],
    config: &PipelineConfig,
    seed: u64,
) -> Result<Vec<ResponseRecord>> {
    let n_ref = config.cor.n_ref.unwrap_or(config.n_queries());
    let mut rng = text::rng(text::substream(seed, "annotate"));
    prompts
        .iter()
        .map(|pp| {
            let elsewhere: Vec<String> = pp
                .pool
                .queries
                .iter()
                .zip(&pp.pool.cor_rank)
                .filter(|(_, r)| r.is_none())
                .map(|(q, _)| q.clone())
                .collect();
            synthesize_annotation(&pp.prompt, &elsewhere, n_ref, &mut rng).map(|(r, _)| r)
        })
        .collect()
}

pub fn run_sft(
    prompts: &[PreparedPrompt],
    gold: &[ResponseRecord],
    config: &PipelineConfig,
) -> Result<SftOutcome> {
    let examples = prompts
        .iter()
        .zip(gold)
        .map(|(pp, g)| SftExample::new(pp.clone(), g))
        .collect::<Result<Vec<_>>>()?;
    let p0 = Policy::uniform(config.policy.hash_dim, config.policy.temperature)?;
    let out = sft_train(&p0, &examples, &config.sft)?;
    info!(
        "sft: final loss {:.4}",
        out.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(out)
}

pub fn run_align(
    sft: &Policy,
    ctr: &dyn ClickScorer,
    sets: &PromptSets,
    config: &PipelineConfig,
    period: usize,
) -> Result<AlignOutcome> {
    align(
        sft,
        ctr,
        &sets.train,
        &sets.test,
        &config.align,
        config.seeds().align_period(period),
    )
}

/// Near-duplicate pairs per query pair over `n_samples` sampled responses,
/// cycling through `prompts`. Zero when responses hold a single query.
pub fn near_duplicate_rate(
    policy: &Policy,
    prompts: &[PreparedPrompt],
    n_samples: usize,
    config: &PipelineConfig,
    seed: u64,
) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::UndefinedMetric(
            "near-duplicate rate over no prompts".into(),
        ));
    }
    let mut rng = text::rng(text::substream(seed, "overlap"));
    let (mut dup, mut pairs) = (0usize, 0usize);
    for i in 0..n_samples {
        let r = policy.sample_response(&prompts[i % prompts.len()], &mut rng)?;
        let n = r.queries.len();
        pairs += n * n.saturating_sub(1) / 2;
        dup += overlapping_pairs(&r.queries, &config.align.overlap);
    }
    Ok(if pairs == 0 {
        0.0
    } else {
        dup as f64 / pairs as f64
    })
}

/// Reward-model quality on held-out logs.
pub fn ctr_metrics(
    model: &CtrModel,
    eval_log: &[ImpressionRecord],
    report: &mut EvalReport,
) -> Result<()> {
    let data = extract_instances(eval_log);
    let preds: Vec<f64> = data.instances.iter().map(|i| model.predict(i)).collect();
    let labels: Vec<bool> = data
        .instances
        .iter()
        .map(|i| i.label.unwrap_or(false))
        .collect();
    report.push("ctr_auc", auc(&preds, &labels)?, "ctr");
    report.push("ctr_logloss", logloss(&preds, &labels)?, "ctr");
    let (_, pred, real) = daily_list_ctr(model, eval_log)?;
    report.push("diff_ctr", diff_ctr(&pred, &real)?, "ctr");
    let mean_pred = preds.iter().sum::<f64>() / preds.len() as f64;
    let mean_real = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
    report.push("ctr_mean_predicted", mean_pred, "ctr");
    report.push("ctr_mean_empirical", mean_real, "ctr");
    Ok(())
}

/// Expected-click metrics of `policies` on the test prompts, each compared with
/// the first entry.
pub fn policy_metrics(
    world: &World,
    ctr: &dyn ClickScorer,
    test: &[PreparedPrompt],
    policies: &[(&str, &Policy)],
    config: &PipelineConfig,
    report: &mut EvalReport,
) -> Result<()> {
    let seed = config.seeds().eval;
    let r = config.eval.samples_per_prompt;
    let truth = world.truth();
    let Some(&(base_tag, base)) = policies.first() else {
        return Ok(());
    };
    let base_aec = aec(ctr, base, test, r, seed)?;
    let base_true = aec(&truth, base, test, r, seed)?;
    report.push("aec", base_aec, base_tag);
    report.push("true_reward", base_true, base_tag);
    for &(tag, p) in &policies[1..] {
        report.push_compared("aec", aec(ctr, p, test, r, seed)?, tag, base_tag, base_aec);
        report.push_compared(
            "true_reward",
            aec(&truth, p, test, r, seed)?,
            tag,
            base_tag,
            base_true,
        );
    }
    for &(tag, p) in policies {
        let rate = near_duplicate_rate(p, test, config.eval.overlap_samples, config, seed)?;
        report.push("near_duplicate_rate", rate, tag);
    }
    Ok(())
}

/// Scalar facts about an alignment run that the report carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignSummary {
    pub iterations: usize,
    pub best_t: usize,
    pub s_initial: f64,
    pub best_s: f64,
}

impl AlignSummary {
    pub fn of(outcome: &AlignOutcome) -> Self {
        Self {
            iterations: outcome.trace.len(),
            best_t: outcome.best_t,
            s_initial: outcome.s_initial,
            best_s: outcome.best_s(),
        }
    }
}

/// The full evaluation report of one period: reward-model quality on the
/// held-out days, then SFT versus aligned policy on the test prompts.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_period(
    world: &World,
    ctr: &CtrModel,
    eval_log: &[ImpressionRecord],
    test: &[PreparedPrompt],
    sft: &Policy,
    aligned: &Policy,
    summary: &AlignSummary,
    config: &PipelineConfig,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    ctr_metrics(ctr, eval_log, &mut report)?;
    policy_metrics(
        world,
        ctr,
        test,
        &[("sft", sft), ("aligned", aligned)],
        config,
        &mut report,
    )?;
    report.push("align_iterations", summary.iterations as f64, "aligned");
    report.push("align_best_t", summary.best_t as f64, "aligned");
    Ok(report)
}

/// Everything one update period produced.
pub struct PeriodOutput {
    pub logs: Logs,
    pub ctr: TrainOutcome,
    pub cor: Option<CorRetriever>,
    pub contexts: PromptContexts,
    pub sets: PromptSets,
    pub gold: Vec<ResponseRecord>,
    pub sft: SftOutcome,
    pub aligned: AlignOutcome,
    pub report: EvalReport,
}

/// Run all stages of one period in memory. `serving` is the policy (and
/// optional retriever) that generates the period's traffic.
pub fn run_period(
    world: &World,
    config: &PipelineConfig,
    period: usize,
    serving: &Policy,
    serving_cor: Option<&CorRetriever>,
) -> Result<PeriodOutput> {
    let logs = {
        let server = Serving {
            factory: PromptFactory::new(&world.universe, config, serving_cor),
            policy: serving,
        };
        simulate_period(world, &server, config, period).map_err(|e| e.in_stage("simulate"))?
    };
    let ctr = train_ctr(&logs.train, config).map_err(|e| e.in_stage("train-ctr"))?;
    let cor = if config.use_cor {
        Some(
            build_retriever(build_coo(&logs.train), &logs.train, config)
                .map_err(|e| e.in_stage("build-coo"))?,
        )
    } else {
        None
    };
    let factory = PromptFactory::new(&world.universe, config, cor.as_ref());
    let (contexts, sets, gold, sft) = (|| {
        let (contexts, sets) = period_prompts(&factory, &logs.train, config, period)?;
        let gold = annotate(&sets.train, config, prompt_seed(config, period))?;
        let sft = run_sft(&sets.train, &gold, config)?;
        Ok::<_, Error>((contexts, sets, gold, sft))
    })()
    .map_err(|e| e.in_stage("sft"))?;
    let aligned = run_align(&sft.policy, &ctr.model, &sets, config, period)
        .map_err(|e| e.in_stage("align"))?;
    let summary = AlignSummary::of(&aligned);
    let report = evaluate_period(
        world,
        &ctr.model,
        &logs.eval,
        &sets.test,
        &sft.policy,
        &aligned.policy,
        &summary,
        config,
    )
    .map_err(|e| e.in_stage("evaluate"))?;
    drop(factory);
    Ok(PeriodOutput {
        logs,
        ctr,
        cor,
        contexts,
        sets,
        gold,
        sft,
        aligned,
        report,
    })
}
