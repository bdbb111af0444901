use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::PromptRecord;
use crate::text;
use crate::world::QueryUniverse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    pub size: usize,
    /// Share of the pool reserved for queries on the user query's topic.
    pub topic_fraction: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            size: 64,
            topic_fraction: 0.5,
        }
    }
}

/// Finite generation space for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub queries: Vec<String>,
    /// Rank of each candidate in the prompt's COR list, if present there.
    pub cor_rank: Vec<Option<usize>>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn position(&self, q: &str) -> Option<usize> {
        self.queries.iter().position(|c| c == q)
    }
}

/// Builds candidate pools from the query universe: COR candidates first,
/// then queries on the user's topic, then random fillers. The user query is
/// never a candidate. Construction is a function of the prompt content only.
#[derive(Debug, Clone, Copy)]
pub struct PoolBuilder<'a> {
    pub universe: &'a QueryUniverse,
    pub config: &'a PoolConfig,
}

const POOL_TAG: u32 = 0x504f_4f4c;

impl<'a> PoolBuilder<'a> {
    pub fn new(universe: &'a QueryUniverse, config: &'a PoolConfig) -> Self {
        Self { universe, config }
    }

    pub fn build(&self, prompt: &PromptRecord) -> Result<CandidatePool> {
        let size = self.config.size;
        if size == 0 {
            return Err(Error::Config("pool size must be positive".into()));
        }
        let mut key: Vec<&str> = vec![&prompt.user_query];
        key.extend(prompt.history.iter().map(String::as_str));
        key.push("\u{1}");
        key.extend(prompt.cor_candidates.iter().map(String::as_str));
        let mut rng = text::rng(text::hash_parts(POOL_TAG, &key));

        let mut seen: HashSet<&str> = HashSet::new();
        seen.insert(&prompt.user_query);
        let mut queries: Vec<String> = Vec::with_capacity(size);
        let mut cor_rank: Vec<Option<usize>> = Vec::with_capacity(size);

        for (r, c) in prompt.cor_candidates.iter().enumerate() {
            if queries.len() >= size {
                break;
            }
            if self.universe.lookup(c).is_some() && seen.insert(c) {
                queries.push(c.clone());
                cor_rank.push(Some(r));
            }
        }
        if let Some(user) = self.universe.lookup(&prompt.user_query) {
            let topical_target = ((size as f64) * self.config.topic_fraction).round() as usize;
            let mut members: Vec<usize> = self.universe.topic_members(user.topic).to_vec();
            members.shuffle(&mut rng);
            for i in members {
                if queries.len() >= topical_target.min(size) {
                    break;
                }
                let q = &self.universe.queries[i].text;
                if seen.insert(q) {
                    queries.push(q.clone());
                    cor_rank.push(None);
                }
            }
        }
        let mut all: Vec<usize> = (0..self.universe.len()).collect();
        all.shuffle(&mut rng);
        for i in all {
            if queries.len() >= size {
                break;
            }
            let q = &self.universe.queries[i].text;
            if seen.insert(q) {
                queries.push(q.clone());
                cor_rank.push(None);
            }
        }
        Ok(CandidatePool { queries, cor_rank })
    }
}
