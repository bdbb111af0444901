use std::cmp::Ordering;

use rand_chacha::ChaCha8Rng;

use super::{AlignConfig, ScoredResponse};
use crate::cor::{NgramEmbedder, QueryEmbedder, SparseVec};
use crate::error::{Error, Result};
use crate::policy::{Policy, PreparedPrompt};
use crate::reward::{extend, score_list, ClickScorer, ListReward};

const TIE: f64 = 1e-12;

#[derive(Clone)]
struct Partial {
    idx: Vec<usize>,
    probs: Vec<f64>,
    /// List reward after each slot.
    values: Vec<f64>,
    key: f64,
}

impl Partial {
    fn value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// Higher key first; near-ties go to the lexicographically higher sequence
/// of prefix rewards, then to the smaller query list.
fn rank(a: &Partial, b: &Partial, key: impl Fn(&Partial) -> f64, texts: &[String]) -> Ordering {
    let (ka, kb) = (key(a), key(b));
    if (ka - kb).abs() > TIE {
        return kb.total_cmp(&ka);
    }
    for (va, vb) in a.values.iter().zip(&b.values) {
        if (va - vb).abs() > TIE {
            return vb.total_cmp(va);
        }
    }
    let ta = a.idx.iter().map(|&j| texts[j].as_str());
    let tb = b.idx.iter().map(|&j| texts[j].as_str());
    ta.cmp(tb)
}

/// Beam search over the pool scored by incremental list reward. Each beam
/// entry expands into the `expansions` remaining candidates the policy scores
/// highest given that entry's prefix.
/// Returns the final beam, best first; each reward is recomputed from scratch.
pub fn beam_search_chosen(
    policy: &Policy,
    ctr: &dyn ClickScorer,
    pp: &PreparedPrompt,
    config: &AlignConfig,
) -> Result<Vec<ScoredResponse>> {
    let texts = &pp.pool.queries;
    let kind = pp.prompt.component;
    let lambda = if config.diverse_beam {
        config.diversity_lambda
    } else {
        0.0
    };
    let embeds: Vec<SparseVec> = if lambda != 0.0 {
        let e = NgramEmbedder::default();
        texts.iter().map(|t| e.embed(t)).collect()
    } else {
        Vec::new()
    };

    let mut beam = vec![Partial {
        idx: Vec::new(),
        probs: Vec::new(),
        values: Vec::new(),
        key: 0.0,
    }];
    for k in 0..pp.n() {
        let mut next = Vec::with_capacity(beam.len() * config.expansions);
        for b in &beam {
            let ctx: Vec<&str> = b.idx.iter().map(|&j| texts[j].as_str()).collect();
            let scores = policy.step_scores(pp, &b.idx);
            let mut order: Vec<usize> = (0..texts.len()).filter(|c| !b.idx.contains(c)).collect();
            order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
            for &c in order.iter().take(config.expansions) {
                let p = ctr
                    .click_prob(&pp.prompt.user_query, &ctx, &texts[c], k + 1)
                    .clamp(0.0, 1.0);
                let v = extend(b.value(), p, kind);
                let penalty = if lambda != 0.0 {
                    lambda
                        * b.idx
                            .iter()
                            .map(|&m| embeds[c].dot(&embeds[m]))
                            .fold(0.0, f64::max)
                } else {
                    0.0
                };
                let mut n = b.clone();
                n.idx.push(c);
                n.probs.push(p);
                n.values.push(v);
                n.key = v - penalty;
                next.push(n);
            }
        }
        if next.is_empty() {
            return Err(Error::DegeneratePrompt(format!(
                "no expansions at slot {} for {:?}",
                k + 1,
                pp.prompt.user_query
            )));
        }
        next.sort_by(|a, b| rank(a, b, |p| p.key, texts));
        next.truncate(config.beam_size);
        beam = next;
    }
    beam.sort_by(|a, b| rank(a, b, Partial::value, texts));
    Ok(beam
        .into_iter()
        .map(|b| {
            let queries: Vec<String> = b.idx.iter().map(|&j| texts[j].clone()).collect();
            let reward = score_list(ctr, &pp.prompt.user_query, &queries, kind);
            ScoredResponse {
                indices: b.idx,
                queries,
                reward,
            }
        })
        .collect())
}

/// `n_rejected_budget` rollouts at temperature 1; the `n_rejected_keep`
/// lowest-reward ones, lowest first.
pub fn sample_rejected(
    policy: &Policy,
    ctr: &dyn ClickScorer,
    pp: &PreparedPrompt,
    config: &AlignConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ScoredResponse>> {
    let mut out = Vec::with_capacity(config.n_rejected_budget);
    for _ in 0..config.n_rejected_budget {
        let indices = policy.sample_indices_at(pp, 1.0, rng)?;
        let queries: Vec<String> = indices
            .iter()
            .map(|&j| pp.pool.queries[j].clone())
            .collect();
        let reward: ListReward =
            score_list(ctr, &pp.prompt.user_query, &queries, pp.prompt.component);
        out.push(ScoredResponse {
            indices,
            queries,
            reward,
        });
    }
    out.sort_by(|a, b| {
        a.reward
            .value
            .total_cmp(&b.reward.value)
            .then_with(|| a.queries.cmp(&b.queries))
    });
    out.truncate(config.n_rejected_keep);
    Ok(out)
}
