//! List-level click probability.
//!
//! With per-slot click probabilities `p_1..p_N` and independent clicks, a
//! multi-choice list is clicked at least once with probability
//! `1 - prod(1 - p_k)`. A single-choice list has exclusive clicks, so its
//! reward is `sum(p_k)`.

use log::warn;

use crate::error::{Error, Result};
use crate::prompt::ComponentKind;

/// Anything that can estimate `P(click | user query, preceding queries, target, slot)`.
/// Slots are 1-based.
pub trait ClickScorer {
    fn click_prob(&self, user_query: &str, context: &[&str], target: &str, slot: usize) -> f64;
}

impl<T: ClickScorer + ?Sized> ClickScorer for &T {
    fn click_prob(&self, user_query: &str, context: &[&str], target: &str, slot: usize) -> f64 {
        (**self).click_prob(user_query, context, target, slot)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListReward {
    pub per_query_probs: Vec<f64>,
    pub component: ComponentKind,
    pub value: f64,
}

fn check(p: &[f64]) -> Result<()> {
    for (k, &x) in p.iter().enumerate() {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Argument(format!(
                "probability p[{k}] = {x} outside [0, 1]"
            )));
        }
    }
    Ok(())
}

pub fn reward_multi(p: &[f64]) -> Result<f64> {
    check(p)?;
    Ok(1.0 - p.iter().map(|x| 1.0 - x).product::<f64>())
}

pub fn reward_single(p: &[f64]) -> Result<f64> {
    check(p)?;
    let s: f64 = p.iter().sum();
    if s > 1.0 {
        warn!("single-choice probabilities sum to {s:.4} > 1");
    }
    Ok(s)
}

pub fn list_reward(p: &[f64], kind: ComponentKind) -> Result<f64> {
    match kind {
        ComponentKind::MultiChoice => reward_multi(p),
        ComponentKind::SingleChoice => reward_single(p),
    }
}

/// Fold one more slot into a partial list reward.
#[inline]
pub fn extend(partial: f64, p_k: f64, kind: ComponentKind) -> f64 {
    match kind {
        ComponentKind::MultiChoice => 1.0 - (1.0 - partial) * (1.0 - p_k),
        ComponentKind::SingleChoice => partial + p_k,
    }
}

pub const ORACLE_MAX_N: usize = 20;

/// Reference computation by explicit outcome enumeration: all `2^N`
/// independent click patterns for multi-choice, the `N + 1` exclusive
/// outcomes for single-choice.
pub fn reward_oracle(p: &[f64], kind: ComponentKind) -> Result<f64> {
    check(p)?;
    if p.len() > ORACLE_MAX_N {
        return Err(Error::Size(format!(
            "enumeration oracle supports N <= {ORACLE_MAX_N}, got {}",
            p.len()
        )));
    }
    match kind {
        ComponentKind::MultiChoice => {
            let n = p.len();
            let mut has_click = 0.0;
            for mask in 1u32..(1u32 << n) {
                let mut prob = 1.0;
                for (k, &pk) in p.iter().enumerate() {
                    prob *= if mask & (1 << k) != 0 { pk } else { 1.0 - pk };
                }
                has_click += prob;
            }
            Ok(has_click)
        }
        ComponentKind::SingleChoice => {
            // outcome k clicks exactly one query; the no-click outcome contributes nothing
            Ok(p.iter().map(|&pk| pk * 1.0).sum())
        }
    }
}

/// Score a query list from scratch under `scorer`.
pub fn score_list(
    scorer: &dyn ClickScorer,
    user_query: &str,
    queries: &[String],
    kind: ComponentKind,
) -> ListReward {
    let mut probs = Vec::with_capacity(queries.len());
    let mut ctx: Vec<&str> = Vec::with_capacity(queries.len());
    for (k, q) in queries.iter().enumerate() {
        probs.push(
            scorer
                .click_prob(user_query, &ctx, q, k + 1)
                .clamp(0.0, 1.0),
        );
        ctx.push(q);
    }
    let mut value = 0.0;
    for &p in &probs {
        value = extend(value, p, kind);
    }
    ListReward {
        per_query_probs: probs,
        component: kind,
        value,
    }
}
