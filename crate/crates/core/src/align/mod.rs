//! Iterative preference alignment of the recommendation policy against a
//! click-probability reward model.
//!
//! Each iteration builds a preference set over the training prompts: chosen
//! responses come from a reward-guided beam search over the policy's pool,
//! rejected ones from the lowest-reward temperature-1 rollouts. Chosen lists
//! with near-duplicate queries are dropped, then a single pair per prompt is
//! selected with the closest serialized lengths. The policy is updated with
//! DPO against a frozen copy of the previous iterate, and the loop continues
//! while the test-set expected click improves by at least `convergence_delta`.

pub mod beam;
pub mod dpo;
pub mod pairs;

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::aec;
use crate::policy::{Policy, PreparedPrompt};
use crate::reward::{ClickScorer, ListReward};
use crate::text;

pub use beam::{beam_search_chosen, sample_rejected};
pub use dpo::{accumulate_dpo_grad, dpo_loss, dpo_train, DpoConfig, DpoExample};
pub use pairs::{
    filter_overlaps, near_duplicate, overlapping_pairs, pair_by_length, read_triples,
    write_triples, OverlapConfig, PreferenceTriple,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub beam_size: usize,
    /// Candidates proposed by the policy per beam entry and slot.
    pub expansions: usize,
    pub n_rejected_budget: usize,
    pub n_rejected_keep: usize,
    pub dpo_beta: f64,
    pub convergence_delta: f64,
    pub max_iterations: usize,
    pub overlap: OverlapConfig,
    pub length_pairing: bool,
    pub diverse_beam: bool,
    pub diversity_lambda: f64,
    pub dpo: DpoConfig,
    /// Sampled responses per test prompt when evaluating S.
    pub eval_samples: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            expansions: 8,
            n_rejected_budget: 16,
            n_rejected_keep: 4,
            dpo_beta: 0.1,
            convergence_delta: 0.005,
            max_iterations: 10,
            overlap: OverlapConfig::default(),
            length_pairing: true,
            diverse_beam: false,
            diversity_lambda: 0.2,
            dpo: DpoConfig::default(),
            eval_samples: 4,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.beam_size == 0 || self.expansions == 0 {
            return bad("beam_size and expansions must be at least 1");
        }
        if self.n_rejected_keep == 0 || self.n_rejected_keep > self.n_rejected_budget {
            return bad("need 1 <= n_rejected_keep <= n_rejected_budget");
        }
        if !(self.dpo_beta > 0.0) {
            return bad("dpo_beta must be positive");
        }
        if !(self.convergence_delta > 0.0) {
            return bad("convergence_delta must be positive");
        }
        if self.max_iterations == 0 || self.eval_samples == 0 {
            return bad("max_iterations and eval_samples must be at least 1");
        }
        if self.dpo.batch_size == 0 || !(self.dpo.adam.lr >= 0.0) {
            return bad("DPO batch_size must be positive and lr non-negative");
        }
        if !(self.diversity_lambda >= 0.0) {
            return bad("diversity_lambda must be non-negative");
        }
        Ok(())
    }
}

/// A response as pool positions, with its list reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResponse {
    pub indices: Vec<usize>,
    pub queries: Vec<String>,
    pub reward: ListReward,
}

/// Output of one pass over the training prompts.
#[derive(Debug)]
pub struct Preferences<'a> {
    pub triples: Vec<PreferenceTriple>,
    pub examples: Vec<DpoExample<'a>>,
    /// Prompts with every beam entry flagged, or no admissible pair.
    pub n_dropped_prompts: usize,
    /// Triples excluded for a non-finite reference log-probability.
    pub n_excluded: usize,
}

/// Build the preference set for one iteration. The reference log-probabilities
/// are taken from `policy` itself.
pub fn build_preferences<'a>(
    policy: &Policy,
    ctr: &dyn ClickScorer,
    x_train: &'a [PreparedPrompt],
    config: &AlignConfig,
    seed: u64,
) -> Result<Preferences<'a>> {
    let reference = policy.snapshot();
    let mut out = Preferences {
        triples: Vec::new(),
        examples: Vec::new(),
        n_dropped_prompts: 0,
        n_excluded: 0,
    };
    for (i, pp) in x_train.iter().enumerate() {
        let mut rng = text::rng(text::indexed(seed, i as u64));
        let chosen: Vec<ScoredResponse> = beam_search_chosen(policy, ctr, pp, config)?
            .into_iter()
            .filter(|r| !filter_overlaps(&r.queries, &config.overlap))
            .collect();
        if chosen.is_empty() {
            out.n_dropped_prompts += 1;
            continue;
        }
        let rejected = sample_rejected(policy, ctr, pp, config, &mut rng)?;
        let Some((ci, rj)) = pair_by_length(&chosen, &rejected, config.length_pairing)? else {
            out.n_dropped_prompts += 1;
            continue;
        };
        let (c, r) = (&chosen[ci], &rejected[rj]);
        match DpoExample::new(&reference, pp, c.indices.clone(), r.indices.clone()) {
            Ok(ex) => out.examples.push(ex),
            Err(Error::Data(_)) => {
                out.n_excluded += 1;
                continue;
            }
            Err(e) => return Err(e),
        }
        out.triples.push(PreferenceTriple {
            prompt: pp.prompt.clone(),
            chosen: pp.response(&c.indices),
            rejected: pp.response(&r.indices),
            chosen_score: c.reward.value,
            rejected_score: r.reward.value,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationState {
    pub t: usize,
    pub s_prev: f64,
    pub s: f64,
    pub delta_s: f64,
    pub n_triples: usize,
    pub n_dropped_prompts: usize,
}

/// Everything one iteration produced.
#[derive(Debug, Clone)]
pub struct IterationResult {
    pub policy: Policy,
    pub state: IterationState,
    pub triples: Vec<PreferenceTriple>,
}

/// Test-set S: mean sampled-response reward. Uses a fixed seed so S values of
/// different iterates are directly comparable.
pub fn evaluate_s(
    policy: &Policy,
    ctr: &dyn ClickScorer,
    x_test: &[PreparedPrompt],
    config: &AlignConfig,
    seed: u64,
) -> Result<f64> {
    aec(
        ctr,
        policy,
        x_test,
        config.eval_samples,
        text::substream(seed, "eval"),
    )
}

/// One round of preference building, DPO, and evaluation.
#[allow(clippy::too_many_arguments)]
pub fn run_iteration(
    previous: &Policy,
    ctr: &dyn ClickScorer,
    x_train: &[PreparedPrompt],
    x_test: &[PreparedPrompt],
    config: &AlignConfig,
    t: usize,
    s_prev: f64,
    seed: u64,
) -> Result<IterationResult> {
    let round = text::indexed(text::substream(seed, "round"), t as u64);
    let prefs = build_preferences(
        previous,
        ctr,
        x_train,
        config,
        text::substream(round, "pairs"),
    )?;
    if prefs.examples.is_empty() {
        return Err(Error::Aborted(format!(
            "iteration {t}: no preference triples ({} prompts dropped, {} excluded)",
            prefs.n_dropped_prompts, prefs.n_excluded
        )));
    }
    let mut rng = text::rng(text::substream(round, "dpo"));
    let policy = dpo_train(
        previous,
        &prefs.examples,
        config.dpo_beta,
        &config.dpo,
        &mut rng,
    )?;
    let s = evaluate_s(&policy, ctr, x_test, config, seed)?;
    let state = IterationState {
        t,
        s_prev,
        s,
        delta_s: s - s_prev,
        n_triples: prefs.triples.len(),
        n_dropped_prompts: prefs.n_dropped_prompts + prefs.n_excluded,
    };
    info!(
        "align t={t} S={s:.5} dS={:.5} triples={} dropped={}",
        state.delta_s, state.n_triples, state.n_dropped_prompts
    );
    Ok(IterationResult {
        policy,
        state,
        triples: prefs.triples,
    })
}

#[derive(Debug, Clone)]
pub struct AlignOutcome {
    /// Iterate with the highest test S.
    pub policy: Policy,
    pub trace: Vec<IterationState>,
    pub best_t: usize,
    /// S of the starting policy.
    pub s_initial: f64,
    pub checkpoints: Vec<Policy>,
    /// Preference set of every iteration.
    pub triples: Vec<Vec<PreferenceTriple>>,
}

impl AlignOutcome {
    pub fn best_s(&self) -> f64 {
        self.trace[self.best_t - 1].s
    }
}

/// Iterate until the improvement in S drops below `convergence_delta` or
/// `max_iterations` rounds have run. S before the first round counts as zero.
pub fn align(
    policy_0: &Policy,
    ctr: &dyn ClickScorer,
    x_train: &[PreparedPrompt],
    x_test: &[PreparedPrompt],
    config: &AlignConfig,
    seed: u64,
) -> Result<AlignOutcome> {
    config.validate()?;
    let s_initial = evaluate_s(policy_0, ctr, x_test, config, seed)?;
    info!("align S_initial={s_initial:.5}");
    let mut trace = Vec::new();
    let mut checkpoints = Vec::new();
    let mut triples = Vec::new();
    let mut current = policy_0.clone();
    let (mut s_prev, mut delta_s, mut t) = (0.0, f64::INFINITY, 1);
    while delta_s >= config.convergence_delta && t <= config.max_iterations {
        let r = run_iteration(&current, ctr, x_train, x_test, config, t, s_prev, seed)?;
        s_prev = r.state.s;
        delta_s = r.state.delta_s;
        trace.push(r.state);
        checkpoints.push(r.policy.clone());
        triples.push(r.triples);
        current = r.policy;
        t += 1;
    }
    let best = trace
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if s.s > trace[b].s { i } else { b });
    Ok(AlignOutcome {
        policy: checkpoints[best].clone(),
        best_t: best + 1,
        trace,
        s_initial,
        checkpoints,
        triples,
    })
}

pub const TRACE_HEADER: &str = "t,S,delta_S,n_triples,n_dropped_prompts";

pub fn trace_to_csv(trace: &[IterationState]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for r in trace {
        s.push_str(&format!(
            "{},{:?},{:?},{},{}\n",
            r.t, r.s, r.delta_s, r.n_triples, r.n_dropped_prompts
        ));
    }
    s
}

pub fn write_trace(path: &Path, trace: &[IterationState]) -> Result<()> {
    std::fs::write(path, trace_to_csv(trace))?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<IterationState>> {
    let body = std::fs::read_to_string(path)?;
    let mut lines = body.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Data(format!("{}: bad trace header", path.display())));
    }
    let mut out: Vec<IterationState> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let err = || Error::Data(format!("bad trace row {line:?}"));
        if f.len() != 5 {
            return Err(err());
        }
        let s: f64 = f[1].parse().map_err(|_| err())?;
        let delta_s: f64 = f[2].parse().map_err(|_| err())?;
        out.push(IterationState {
            t: f[0].parse().map_err(|_| err())?,
            s_prev: s - delta_s,
            s,
            delta_s,
            n_triples: f[3].parse().map_err(|_| err())?,
            n_dropped_prompts: f[4].parse().map_err(|_| err())?,
        });
    }
    Ok(out)
}
