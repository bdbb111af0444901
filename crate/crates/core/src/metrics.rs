//! Offline evaluation: ranking quality and calibration of the click model,
//! and average estimated CTR (AEC) of a policy's responses.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Policy, PreparedPrompt};
use crate::reward::{score_list, ClickScorer};
use crate::text;
use crate::world::ImpressionRecord;

pub const LOGLOSS_EPS: f64 = 1e-7;

/// Area under the ROC curve via the rank-sum statistic, ties at average rank.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Mean negative log-likelihood with scores clipped to `[ε, 1-ε]`.
pub fn logloss(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("logloss of an empty batch".into()));
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = s.clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// `(1/K) Σ_i | p_i^θ · mean(p^real) / mean(p^θ) - p_i^real |` over K sets.
pub fn diff_ctr(predicted: &[f64], real: &[f64]) -> Result<f64> {
    if predicted.len() != real.len() {
        return Err(Error::Argument(format!(
            "{} predicted sets for {} real sets",
            predicted.len(),
            real.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::UndefinedMetric(
            "diff_ctr needs at least one set".into(),
        ));
    }
    let k = predicted.len() as f64;
    let mean_pred = predicted.iter().sum::<f64>() / k;
    let mean_real = real.iter().sum::<f64>() / k;
    if mean_pred <= 0.0 {
        return Err(Error::UndefinedMetric(
            "diff_ctr with zero mean prediction".into(),
        ));
    }
    let ratio = mean_real / mean_pred;
    Ok(predicted
        .iter()
        .zip(real)
        .map(|(p, r)| (p * ratio - r).abs())
        .sum::<f64>()
        / k)
}

/// Per-day list-level CTR: mean predicted list click probability of the
/// logged responses, and the fraction of impressions with a click.
pub fn daily_list_ctr(
    scorer: &dyn ClickScorer,
    log: &[ImpressionRecord],
) -> Result<(Vec<u32>, Vec<f64>, Vec<f64>)> {
    let mut by_day: BTreeMap<u32, (f64, f64, usize)> = BTreeMap::new();
    for r in log {
        let lr = score_list(
            scorer,
            &r.prompt.user_query,
            &r.response.queries,
            r.component,
        );
        let e = by_day.entry(r.day).or_default();
        e.0 += lr.value;
        e.1 += if r.has_click() { 1.0 } else { 0.0 };
        e.2 += 1;
    }
    let days = by_day.keys().copied().collect();
    let pred = by_day.values().map(|v| v.0 / v.2 as f64).collect();
    let real = by_day.values().map(|v| v.1 / v.2 as f64).collect();
    Ok((days, pred, real))
}

/// Mean list reward of `samples_per_prompt` sampled responses per prompt,
/// scored by `scorer`. Prompt `i` draws from its own seed stream so results do
/// not depend on evaluation order.
pub fn aec(
    scorer: &dyn ClickScorer,
    policy: &Policy,
    prompts: &[PreparedPrompt],
    samples_per_prompt: usize,
    seed: u64,
) -> Result<f64> {
    if prompts.is_empty() || samples_per_prompt == 0 {
        return Err(Error::UndefinedMetric(
            "AEC over an empty prompt set".into(),
        ));
    }
    let mut total = 0.0;
    for (i, pp) in prompts.iter().enumerate() {
        let mut rng = text::rng(text::indexed(seed, i as u64));
        for _ in 0..samples_per_prompt {
            let resp = policy.sample_response(pp, &mut rng)?;
            total += score_list(
                scorer,
                &pp.prompt.user_query,
                &resp.queries,
                pp.prompt.component,
            )
            .value;
        }
    }
    Ok(total / (prompts.len() * samples_per_prompt) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    pub value: f64,
    pub policy_tag: String,
    pub baseline_tag: String,
    pub rel_improvement: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    /// A metric not compared against any baseline.
    pub fn push(&mut self, metric: &str, value: f64, policy_tag: &str) {
        self.rows.push(ReportRow {
            metric: metric.into(),
            value,
            policy_tag: policy_tag.into(),
            baseline_tag: String::new(),
            rel_improvement: None,
        });
    }

    /// A metric with relative improvement `(value - baseline) / baseline`.
    pub fn push_compared(
        &mut self,
        metric: &str,
        value: f64,
        policy_tag: &str,
        baseline_tag: &str,
        baseline: f64,
    ) {
        let rel = if baseline != 0.0 {
            Some((value - baseline) / baseline)
        } else {
            None
        };
        self.rows.push(ReportRow {
            metric: metric.into(),
            value,
            policy_tag: policy_tag.into(),
            baseline_tag: baseline_tag.into(),
            rel_improvement: rel,
        });
    }

    pub fn get(&self, metric: &str, policy_tag: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.policy_tag == policy_tag)
            .map(|r| r.value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value,policy_tag,baseline_tag,rel_improvement\n");
        for r in &self.rows {
            let rel = r
                .rel_improvement
                .map(|x| format!("{x:?}"))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:?},{},{},{}",
                r.metric, r.value, r.policy_tag, r.baseline_tag, rel
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{CandidatePool, PreparedPrompt};
    use crate::prompt::{ComponentKind, PromptRecord};
    use proptest::prelude::*;

    #[test]
    fn auc_fixtures() {
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(
            auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(),
            0.75
        );
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn logloss_fixtures() {
        assert!((logloss(&[0.5], &[true]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let l = logloss(&[LOGLOSS_EPS, 1.0 - LOGLOSS_EPS], &[false, true]).unwrap();
        assert!(l < 1e-6);
        let s = [0.2, 0.7, 0.01, 0.99, 0.5];
        let y = [false, true, true, false, true];
        let mut naive = 0.0;
        for i in 0..5 {
            naive += if y[i] {
                -f64::ln(s[i])
            } else {
                -f64::ln(1.0 - s[i])
            };
        }
        assert!((logloss(&s, &y).unwrap() - naive / 5.0).abs() < 1e-12);
    }

    #[test]
    fn diff_ctr_fixtures() {
        assert_eq!(diff_ctr(&[0.3], &[0.1]).unwrap(), 0.0);
        assert!(diff_ctr(&[0.2, 0.4, 0.6], &[0.1, 0.2, 0.3]).unwrap() < 1e-15);
        let d = diff_ctr(&[0.10, 0.20], &[0.12, 0.16]).unwrap();
        assert!((d - 0.026_666_666_666_666_67).abs() < 1e-9, "{d}");
        assert!(matches!(
            diff_ctr(&[0.0, 0.0], &[0.1, 0.2]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            pairs in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..60)
        ) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(y.iter().any(|&b| b) && y.iter().any(|&b| !b));
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            let a = auc(&s, &y).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, auc(&t, &y).unwrap());
            // pairwise-count oracle
            let (mut good, mut pairs_n) = (0.0, 0.0);
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if y[i] && !y[j] {
                        pairs_n += 1.0;
                        good += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            prop_assert!((a - good / pairs_n).abs() < 1e-12);
        }

        #[test]
        fn diff_ctr_scale_invariant(real in prop::collection::vec(0.01f64..1.0, 1..10), c in 0.1f64..10.0) {
            let pred: Vec<f64> = real.iter().map(|r| r * c).collect();
            prop_assert!(diff_ctr(&pred, &real).unwrap() < 1e-12);
        }
    }

    struct Const(f64);

    impl ClickScorer for Const {
        fn click_prob(&self, _: &str, _: &[&str], _: &str, _: usize) -> f64 {
            self.0
        }
    }

    fn prompts() -> Vec<PreparedPrompt> {
        (0..5)
            .map(|i| {
                let p = PromptRecord::new(format!("u{i}"), 3, ComponentKind::MultiChoice).unwrap();
                let pool = CandidatePool {
                    queries: (0..6).map(|j| format!("c{j}")).collect(),
                    cor_rank: vec![None; 6],
                };
                PreparedPrompt::new(p, pool, 1 << 6)
            })
            .collect()
    }

    #[test]
    fn aec_with_constant_scorers() {
        let pol = Policy::uniform(1 << 6, 1.0).unwrap();
        let a = aec(&Const(0.5), &pol, &prompts(), 1, 0).unwrap();
        assert!((a - 0.875).abs() < 1e-12);
        assert_eq!(aec(&Const(0.0), &pol, &prompts(), 3, 0).unwrap(), 0.0);
    }

    /// Depends on the target, so samples matter.
    struct ByName;

    impl ClickScorer for ByName {
        fn click_prob(&self, _: &str, _: &[&str], t: &str, slot: usize) -> f64 {
            (t.len() as f64 * 0.05 + slot as f64 * 0.01).min(1.0)
        }
    }

    #[test]
    fn aec_deterministic_and_linear() {
        let pol = Policy::uniform(1 << 6, 1.0).unwrap();
        let ps = prompts();
        let a = aec(&ByName, &pol, &ps, 2, 42).unwrap();
        assert!((a - aec(&ByName, &pol, &ps, 2, 42).unwrap()).abs() < 1e-12);
        let mut manual = 0.0;
        for (i, pp) in ps.iter().enumerate() {
            let mut rng = text::rng(text::indexed(42, i as u64));
            for _ in 0..2 {
                let r = pol.sample_response(pp, &mut rng).unwrap();
                manual += score_list(
                    &ByName,
                    &pp.prompt.user_query,
                    &r.queries,
                    ComponentKind::MultiChoice,
                )
                .value;
            }
        }
        assert!((a - manual / 10.0).abs() < 1e-12);
    }

    #[test]
    fn report_csv_columns() {
        let mut r = EvalReport::default();
        r.push("auc", 0.9, "ctr");
        r.push_compared("aec", 0.3, "aligned", "sft", 0.2);
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "metric,value,policy_tag,baseline_tag,rel_improvement"
        );
        assert_eq!(lines.next().unwrap(), "auc,0.9,ctr,,");
        assert!(lines
            .next()
            .unwrap()
            .starts_with("aec,0.3,aligned,sft,0.4999"));
        assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }
}
