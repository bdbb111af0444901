//! Co-occurrence retrieval: successor queries users actually issued after a
//! query, with an embedding-neighbor fallback for rarely seen queries.

mod coo;
mod embed;

pub use coo::{sessions_from_log, CooDict};
pub use embed::{cosine, IndexMode, NgramEmbedder, QueryEmbedder, QueryIndex, SparseVec};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{PromptRecord, ResponseRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// Neighbor similarity times successor count.
    #[default]
    SimTimesCount,
    Count,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorConfig {
    /// Fallback is used when a query has fewer than this many successors.
    pub sparsity_threshold: usize,
    pub n_neighbors: usize,
    pub max_candidates: usize,
    /// Upper bound of COR queries placed in a synthetic gold response;
    /// `None` means the response length.
    pub n_ref: Option<usize>,
    pub merge: MergeRule,
    pub index_mode: IndexMode,
}

impl Default for CorConfig {
    fn default() -> Self {
        Self {
            sparsity_threshold: 5,
            n_neighbors: 10,
            max_candidates: 10,
            n_ref: None,
            merge: MergeRule::SimTimesCount,
            index_mode: IndexMode::Exact,
        }
    }
}

impl CorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sparsity_threshold == 0 || self.n_neighbors == 0 {
            return Err(Error::Config(
                "cor sparsity_threshold and n_neighbors must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Candidates for `q` with their merge scores.
pub fn retrieve_candidates(
    dict: &CooDict,
    embedder: &dyn QueryEmbedder,
    index: &QueryIndex,
    q: &str,
    config: &CorConfig,
) -> Result<(Vec<(String, f64)>, bool)> {
    let own = dict.successors(q);
    if own.len() >= config.sparsity_threshold {
        let out = own
            .iter()
            .take(config.max_candidates)
            .map(|(s, c)| (s.clone(), *c as f64))
            .collect();
        return Ok((out, false));
    }
    let mut merged: HashMap<&str, f64> = HashMap::new();
    let neighbors = if index.is_empty() {
        Vec::new()
    } else {
        index.nearest(embedder, q, config.n_neighbors)?
    };
    // the query itself enters with similarity 1
    let sources = std::iter::once((q, 1.0)).chain(neighbors.iter().map(|(t, s)| (t.as_str(), *s)));
    for (src, sim) in sources {
        for (s, c) in dict.successors(src) {
            if s == q {
                continue;
            }
            let score = match config.merge {
                MergeRule::SimTimesCount => sim * *c as f64,
                MergeRule::Count => *c as f64,
            };
            let e = merged.entry(s.as_str()).or_insert(f64::NEG_INFINITY);
            if score > *e {
                *e = score;
            }
        }
    }
    let mut out: Vec<(String, f64)> = merged
        .into_iter()
        .map(|(s, v)| (s.to_string(), v))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out.truncate(config.max_candidates);
    Ok((out, true))
}

/// Dictionary, embedder and index bundled for serving.
pub struct CorRetriever {
    pub dict: CooDict,
    pub embedder: NgramEmbedder,
    pub index: QueryIndex,
    pub config: CorConfig,
    fallbacks: AtomicU64,
    lookups: AtomicU64,
}

impl CorRetriever {
    pub fn new(dict: CooDict, index_texts: &[String], config: CorConfig) -> Result<Self> {
        config.validate()?;
        let embedder = NgramEmbedder::default();
        let index = QueryIndex::build(&embedder, index_texts, config.index_mode);
        Ok(Self {
            dict,
            embedder,
            index,
            config,
            fallbacks: AtomicU64::new(0),
            lookups: AtomicU64::new(0),
        })
    }

    pub fn retrieve(&self, q: &str) -> Result<Vec<String>> {
        let (c, fell_back) =
            retrieve_candidates(&self.dict, &self.embedder, &self.index, q, &self.config)?;
        self.lookups.fetch_add(1, Ordering::Relaxed);
        if fell_back {
            self.fallbacks.fetch_add(1, Ordering::Relaxed);
        }
        Ok(c.into_iter().map(|(s, _)| s).collect())
    }

    /// `(lookups, fallbacks)` since construction.
    pub fn counters(&self) -> (u64, u64) {
        (
            self.lookups.load(Ordering::Relaxed),
            self.fallbacks.load(Ordering::Relaxed),
        )
    }
}

/// Attach COR candidates to a prompt as its labeled side-information block.
pub fn annotate_with_cor(prompt: PromptRecord, candidates: Vec<String>) -> PromptRecord {
    prompt.with_cor(candidates)
}

/// Synthetic gold response: `u ~ U{0..n_ref}` queries taken from the prompt's
/// COR candidates, the rest from `elsewhere`. Returns the response and `u`.
///
/// When fewer COR candidates exist than drawn, the shortfall comes from
/// `elsewhere` as well.
pub fn synthesize_annotation(
    prompt: &PromptRecord,
    elsewhere: &[String],
    n_ref: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(ResponseRecord, usize)> {
    let n = prompt.n_queries;
    let u = rng.gen_range(0..=n_ref.min(n));
    let cor: Vec<&String> = prompt
        .cor_candidates
        .iter()
        .filter(|c| **c != prompt.user_query)
        .collect();
    let mut picked: Vec<String> = cor
        .iter()
        .copied()
        .choose_multiple(rng, u.min(cor.len()))
        .into_iter()
        .cloned()
        .collect();
    let rest: Vec<&String> = elsewhere
        .iter()
        .filter(|q| !picked.contains(q) && !cor.contains(q) && **q != prompt.user_query)
        .collect();
    let need = n - picked.len();
    if rest.len() < need {
        return Err(Error::Data(format!(
            "only {} non-COR queries available to fill {need} annotation slots",
            rest.len()
        )));
    }
    picked.extend(rest.choose_multiple(rng, need).map(|q| (*q).clone()));
    picked.shuffle(rng);
    Ok((ResponseRecord::new(picked), u))
}
