use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScoredResponse;
use crate::cor::{NgramEmbedder, QueryEmbedder};
use crate::error::{Error, Result};
use crate::prompt::{ComponentKind, PromptRecord, PromptWire, ResponseRecord};
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapConfig {
    pub enabled: bool,
    pub jaccard: f64,
    pub cosine: f64,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            jaccard: 0.6,
            cosine: 0.85,
        }
    }
}

/// True when two queries are near-duplicates: normalized word Jaccard or
/// character n-gram cosine at or above its threshold.
pub fn near_duplicate(
    a: &str,
    b: &str,
    config: &OverlapConfig,
    embedder: &dyn QueryEmbedder,
) -> bool {
    text::jaccard(a, b) >= config.jaccard
        || embedder.embed(a).dot(&embedder.embed(b)) >= config.cosine
}

/// Number of near-duplicate query pairs within one response.
pub fn overlapping_pairs(queries: &[String], config: &OverlapConfig) -> usize {
    let e = NgramEmbedder::default();
    let vecs: Vec<_> = queries.iter().map(|q| e.embed(q)).collect();
    let mut n = 0;
    for i in 0..queries.len() {
        for j in i + 1..queries.len() {
            if text::jaccard(&queries[i], &queries[j]) >= config.jaccard
                || vecs[i].dot(&vecs[j]) >= config.cosine
            {
                n += 1;
            }
        }
    }
    n
}

/// Whether a response should be dropped from the chosen set. Always false
/// when the filter is disabled.
pub fn filter_overlaps(queries: &[String], config: &OverlapConfig) -> bool {
    config.enabled && overlapping_pairs(queries, config) > 0
}

/// Choose `(chosen, rejected)` positions. Only pairs with
/// `chosen score >= rejected score` are admissible; `Ok(None)` if there are
/// none. With `by_length`, minimizes the character-length gap of the
/// serialized query lists, then prefers the higher chosen score, the lower
/// rejected score, and finally the lexicographically smaller lists. Without
/// it, the length criterion is skipped.
pub fn pair_by_length(
    chosen: &[ScoredResponse],
    rejected: &[ScoredResponse],
    by_length: bool,
) -> Result<Option<(usize, usize)>> {
    if chosen.is_empty() || rejected.is_empty() {
        return Err(Error::Pairing(format!(
            "cannot pair {} chosen with {} rejected responses",
            chosen.len(),
            rejected.len()
        )));
    }
    let len = |r: &ScoredResponse| ResponseRecord::new(r.queries.clone()).char_len() as i64;
    let mut best: Option<(usize, usize)> = None;
    for (i, c) in chosen.iter().enumerate() {
        for (j, r) in rejected.iter().enumerate() {
            if c.reward.value < r.reward.value {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, bj)) => {
                    let (bc, br) = (&chosen[bi], &rejected[bj]);
                    let gap = if by_length {
                        (len(c) - len(r)).abs()
                    } else {
                        0
                    };
                    let bgap = if by_length {
                        (len(bc) - len(br)).abs()
                    } else {
                        0
                    };
                    gap.cmp(&bgap)
                        .then(bc.reward.value.total_cmp(&c.reward.value))
                        .then(r.reward.value.total_cmp(&br.reward.value))
                        .then_with(|| c.queries.cmp(&bc.queries))
                        .then_with(|| r.queries.cmp(&br.queries))
                        .is_lt()
                }
            };
            if better {
                best = Some((i, j));
            }
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceTriple {
    pub prompt: PromptRecord,
    pub chosen: ResponseRecord,
    pub rejected: ResponseRecord,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripleWire {
    prompt: PromptWire,
    component: ComponentKind,
    chosen: ResponseRecord,
    rejected: ResponseRecord,
    chosen_score: f64,
    rejected_score: f64,
}

impl PreferenceTriple {
    pub fn validate(&self) -> Result<()> {
        let n = self.prompt.n_queries;
        if self.chosen.queries.len() != n || self.rejected.queries.len() != n {
            return Err(Error::Data(format!(
                "triple responses must have {n} queries"
            )));
        }
        if self.chosen_score < self.rejected_score {
            return Err(Error::Data(format!(
                "chosen score {} below rejected score {}",
                self.chosen_score, self.rejected_score
            )));
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(&TripleWire {
            prompt: PromptWire::from_prompt(&self.prompt),
            component: self.prompt.component,
            chosen: self.chosen.clone(),
            rejected: self.rejected.clone(),
            chosen_score: self.chosen_score,
            rejected_score: self.rejected_score,
        })?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let w: TripleWire = serde_json::from_str(line)?;
        let t = Self {
            prompt: w.prompt.into_prompt(w.chosen.queries.len(), w.component)?,
            chosen: w.chosen,
            rejected: w.rejected,
            chosen_score: w.chosen_score,
            rejected_score: w.rejected_score,
        };
        t.validate()?;
        Ok(t)
    }
}

pub fn write_triples(path: &Path, triples: &[PreferenceTriple]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in triples {
        writeln!(w, "{}", t.to_json_line()?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_triples(path: &Path) -> Result<Vec<PreferenceTriple>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(PreferenceTriple::from_json_line(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::ListReward;
    use proptest::prelude::*;

    fn scored(queries: &[&str], value: f64) -> ScoredResponse {
        ScoredResponse {
            indices: (0..queries.len()).collect(),
            queries: queries.iter().map(|s| s.to_string()).collect(),
            reward: ListReward {
                per_query_probs: vec![],
                component: ComponentKind::MultiChoice,
                value,
            },
        }
    }

    fn of_len(n: usize, value: f64) -> ScoredResponse {
        scored(&[&"x".repeat(n)], value)
    }

    #[test]
    fn overlap_examples() {
        let cfg = OverlapConfig::default();
        let q = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(filter_overlaps(
            &q(&["cheap flights", "cheap flights"]),
            &cfg
        ));
        assert!(!filter_overlaps(&q(&["alpha beta", "gamma delta"]), &cfg));
        // {a b c} vs {a b c d e}: 3/5 = 0.6 exactly
        assert_eq!(text::jaccard("aa bb cc", "aa bb cc dd ee"), 0.6);
        assert!(filter_overlaps(
            &q(&["aa bb cc", "aa bb cc dd ee"]),
            &OverlapConfig {
                cosine: 2.0,
                ..cfg.clone()
            }
        ));
        // 2/4 = 0.5 stays below the Jaccard threshold
        assert!(!filter_overlaps(
            &q(&["aa bb", "aa bb cc dd"]),
            &OverlapConfig {
                cosine: 2.0,
                ..cfg.clone()
            }
        ));
        let off = OverlapConfig {
            enabled: false,
            ..cfg
        };
        assert!(!filter_overlaps(&q(&["same", "same"]), &off));
    }

    #[test]
    fn pairing_examples() {
        let chosen = [of_len(10, 0.9), of_len(17, 0.8)];
        let rejected = [of_len(5, 0.1), of_len(16, 0.2)];
        assert_eq!(
            pair_by_length(&chosen, &rejected, true).unwrap(),
            Some((1, 1))
        );
        let chosen = [of_len(8, 0.5), of_len(8, 0.7), of_len(8, 0.6)];
        let rejected = [of_len(8, 0.1), of_len(8, 0.3)];
        assert_eq!(
            pair_by_length(&chosen, &rejected, true).unwrap(),
            Some((1, 0))
        );
        assert!(matches!(
            pair_by_length(&[], &rejected, true),
            Err(Error::Pairing(_))
        ));
        // nothing admissible
        assert_eq!(
            pair_by_length(&[of_len(3, 0.1)], &[of_len(3, 0.2)], true).unwrap(),
            None
        );
        // without length control the score order decides
        let chosen = [of_len(10, 0.9), of_len(17, 0.8)];
        let rejected = [of_len(5, 0.1), of_len(16, 0.2)];
        assert_eq!(
            pair_by_length(&chosen, &rejected, false).unwrap(),
            Some((0, 0))
        );
    }

    proptest! {
        #[test]
        fn pairing_matches_exhaustive_argmin(
            c in prop::collection::vec((1usize..30, 0.0f64..1.0), 1..6),
            r in prop::collection::vec((1usize..30, 0.0f64..1.0), 1..6),
        ) {
            let chosen: Vec<_> = c.iter().map(|&(n, v)| of_len(n, v)).collect();
            let rejected: Vec<_> = r.iter().map(|&(n, v)| of_len(n, v)).collect();
            let got = pair_by_length(&chosen, &rejected, true).unwrap();
            // lexicographic minimum of (gap, -chosen, rejected, lengths) over admissible pairs
            let mut best: Option<(i64, f64, f64, usize, usize)> = None;
            for &(ci, cv) in &c {
                for &(rj, rv) in &r {
                    if cv < rv {
                        continue;
                    }
                    let cand = ((ci as i64 - rj as i64).abs(), -cv, rv, ci, rj);
                    if best.is_none_or(|b| cand.partial_cmp(&b) == Some(std::cmp::Ordering::Less)) {
                        best = Some(cand);
                    }
                }
            }
            match (got, best) {
                (None, None) => {}
                (Some((i, j)), Some(b)) => {
                    prop_assert_eq!((c[i].0 as i64 - r[j].0 as i64).abs(), b.0);
                    prop_assert_eq!(c[i].1, -b.1);
                    prop_assert_eq!(r[j].1, b.2);
                    prop_assert!(c[i].1 >= r[j].1);
                }
                other => prop_assert!(false, "{other:?}"),
            }
        }
    }

    #[test]
    fn triple_jsonl_round_trip() {
        let prompt = PromptRecord::new("u", 2, ComponentKind::SingleChoice)
            .unwrap()
            .with_cor(vec!["c".into()]);
        let t = PreferenceTriple {
            prompt,
            chosen: ResponseRecord::new(vec!["a".into(), "b".into()]),
            rejected: ResponseRecord::new(vec!["c".into(), "d".into()]),
            chosen_score: 0.4,
            rejected_score: 0.1,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_triples(&p, std::slice::from_ref(&t)).unwrap();
        assert_eq!(read_triples(&p).unwrap(), vec![t]);
    }
}
