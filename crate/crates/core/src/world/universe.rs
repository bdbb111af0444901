use std::collections::{HashMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

/// Modifier words shared by every topic.
const MODIFIERS: &[&str] = &[
    "best", "cheap", "new", "top", "free", "guide", "near", "how", "review", "price", "online",
    "ideas",
];
const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_topics: usize,
    pub n_queries: usize,
    /// Topic-specific vocabulary size.
    pub vocab_per_topic: usize,
    pub max_words: usize,
    /// Probability that a new query extends an existing same-topic query by one word.
    pub variant_rate: f64,
    /// Intent successors per query; sessions follow them and users favour them.
    pub successors_per_query: usize,
    /// Zipf exponent of query popularity.
    pub popularity_exponent: f64,
    pub mean_session_length: f64,
    pub topic_drift: f64,
    /// Probability that the next session query is one of the current query's successors.
    pub successor_follow: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_topics: 3,
            n_queries: 300,
            vocab_per_topic: 20,
            max_words: 4,
            variant_rate: 0.25,
            successors_per_query: 3,
            popularity_exponent: 0.8,
            mean_session_length: 2.5,
            topic_drift: 0.2,
            successor_follow: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_topics == 0 || self.n_queries == 0 {
            return Err(Error::Config(
                "world needs at least one topic and one query".into(),
            ));
        }
        if self.vocab_per_topic == 0 || self.max_words == 0 {
            return Err(Error::Config(
                "vocabulary size and max_words must be positive".into(),
            ));
        }
        if !(self.mean_session_length >= 1.0) {
            return Err(Error::Config("mean session length must be >= 1".into()));
        }
        for (name, v) in [
            ("topic_drift", self.topic_drift),
            ("variant_rate", self.variant_rate),
            ("successor_follow", self.successor_follow),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.popularity_exponent >= 0.0) {
            return Err(Error::Config("popularity exponent must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: usize,
    pub text: String,
    pub topic: usize,
    pub popularity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionParams {
    pub mean_length: f64,
    pub topic_drift: f64,
    pub successor_follow: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryUniverse {
    pub topics: Vec<usize>,
    pub queries: Vec<Query>,
    pub successors: Vec<Vec<usize>>,
    pub sessions: SessionParams,
    #[serde(skip)]
    index: Index,
}

#[derive(Debug, Clone, Default)]
struct Index {
    by_text: HashMap<String, usize>,
    by_topic: Vec<Vec<usize>>,
    global: Option<WeightedIndex<f64>>,
    topical: Vec<Option<WeightedIndex<f64>>>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                ONSETS[rng.gen_range(0..ONSETS.len())],
                VOWELS[rng.gen_range(0..VOWELS.len())]
            )
        })
        .collect()
}

pub fn build_universe(config: &WorldConfig, seed: u64) -> Result<QueryUniverse> {
    config.validate()?;
    let mut rng = text::rng(text::substream(seed, "universe"));

    let mut used: HashSet<String> = MODIFIERS.iter().map(|s| s.to_string()).collect();
    let mut vocab: Vec<Vec<String>> = Vec::with_capacity(config.n_topics);
    for _ in 0..config.n_topics {
        let mut words = Vec::with_capacity(config.vocab_per_topic);
        while words.len() < config.vocab_per_topic {
            let w = pseudo_word(&mut rng);
            if used.insert(w.clone()) {
                words.push(w);
            }
        }
        vocab.push(words);
    }

    let mut queries: Vec<Query> = Vec::with_capacity(config.n_queries);
    let mut seen: HashSet<String> = HashSet::new();
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); config.n_topics];
    let max_attempts = 200 * config.n_queries + 1000;
    let mut attempts = 0;
    while queries.len() < config.n_queries {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Config(format!(
                "could not generate {} unique queries from the configured vocabulary",
                config.n_queries
            )));
        }
        let topic = queries.len() % config.n_topics;
        let words = &vocab[topic];
        let parents: Vec<usize> = by_topic[topic]
            .iter()
            .copied()
            .filter(|&i| text::words(&queries[i].text).count() < config.max_words)
            .collect();
        let candidate = if !parents.is_empty() && rng.gen::<f64>() < config.variant_rate {
            let parent = &queries[*parents.choose(&mut rng).unwrap()].text;
            let present: HashSet<&str> = text::words(parent).collect();
            let extra = if rng.gen::<f64>() < 0.7 {
                words[rng.gen_range(0..words.len())].as_str()
            } else {
                MODIFIERS[rng.gen_range(0..MODIFIERS.len())]
            };
            if present.contains(extra) {
                continue;
            }
            format!("{parent} {extra}")
        } else {
            let n_words = rng.gen_range(1..=config.max_words);
            let mut parts: Vec<&str> = vec![words[rng.gen_range(0..words.len())].as_str()];
            while parts.len() < n_words {
                let w = if rng.gen::<f64>() < 0.7 {
                    words[rng.gen_range(0..words.len())].as_str()
                } else {
                    MODIFIERS[rng.gen_range(0..MODIFIERS.len())]
                };
                if !parts.contains(&w) {
                    parts.push(w);
                }
            }
            parts.join(" ")
        };
        if !seen.insert(candidate.clone()) {
            continue;
        }
        let id = queries.len();
        by_topic[topic].push(id);
        queries.push(Query {
            id,
            text: candidate,
            topic,
            popularity: 0.0,
        });
    }

    let mut ranks: Vec<usize> = (0..queries.len()).collect();
    ranks.shuffle(&mut rng);
    for (rank, &qi) in ranks.iter().enumerate() {
        queries[qi].popularity = 1.0 / ((rank + 1) as f64).powf(config.popularity_exponent);
    }

    let successors = queries
        .iter()
        .map(|q| {
            let mut pool: Vec<usize> = by_topic[q.topic]
                .iter()
                .copied()
                .filter(|&j| j != q.id)
                .collect();
            pool.shuffle(&mut rng);
            pool.truncate(config.successors_per_query);
            pool
        })
        .collect();

    let mut u = QueryUniverse {
        topics: (0..config.n_topics).collect(),
        queries,
        successors,
        sessions: SessionParams {
            mean_length: config.mean_session_length,
            topic_drift: config.topic_drift,
            successor_follow: config.successor_follow,
        },
        index: Index::default(),
    };
    u.reindex();
    Ok(u)
}

impl QueryUniverse {
    /// Assemble a universe from explicit parts, checking its invariants.
    pub fn from_parts(
        queries: Vec<Query>,
        successors: Vec<Vec<usize>>,
        sessions: SessionParams,
    ) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::Config("universe needs at least one query".into()));
        }
        if successors.len() != queries.len() {
            return Err(Error::Config(
                "one successor list per query required".into(),
            ));
        }
        let mut seen = HashSet::new();
        for (i, q) in queries.iter().enumerate() {
            if q.id != i {
                return Err(Error::Config(format!("query {i} carries id {}", q.id)));
            }
            if !seen.insert(q.text.as_str()) {
                return Err(Error::Config(format!("duplicate query text {:?}", q.text)));
            }
            if !(q.popularity >= 0.0 && q.popularity.is_finite()) {
                return Err(Error::Config(format!("bad popularity for {:?}", q.text)));
            }
        }
        let n_topics = queries.iter().map(|q| q.topic).max().unwrap() + 1;
        let mut u = Self {
            topics: (0..n_topics).collect(),
            queries,
            successors,
            sessions,
            index: Index::default(),
        };
        u.reindex();
        Ok(u)
    }

    /// Rebuild lookup tables; needed after deserialization.
    pub fn reindex(&mut self) {
        let mut by_topic = vec![Vec::new(); self.topics.len()];
        let mut by_text = HashMap::with_capacity(self.queries.len());
        for q in &self.queries {
            by_topic[q.topic].push(q.id);
            by_text.insert(q.text.clone(), q.id);
        }
        let global = WeightedIndex::new(self.queries.iter().map(|q| q.popularity)).ok();
        let topical = by_topic
            .iter()
            .map(|ids| WeightedIndex::new(ids.iter().map(|&i| self.queries[i].popularity)).ok())
            .collect();
        self.index = Index {
            by_text,
            by_topic,
            global,
            topical,
        };
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn lookup(&self, text: &str) -> Option<&Query> {
        self.index.by_text.get(text).map(|&i| &self.queries[i])
    }

    pub fn topic_members(&self, topic: usize) -> &[usize] {
        &self.index.by_topic[topic]
    }

    pub fn is_successor(&self, from: usize, to: usize) -> bool {
        self.successors[from].contains(&to)
    }

    fn popular_in(&self, topic: Option<usize>, rng: &mut ChaCha8Rng) -> usize {
        match topic {
            Some(t) => match &self.index.topical[t] {
                Some(w) => self.index.by_topic[t][w.sample(rng)],
                None => self.index.by_topic[t][0],
            },
            None => match &self.index.global {
                Some(w) => w.sample(rng),
                None => 0,
            },
        }
    }

    /// One search session: geometric length, popularity-weighted start,
    /// then successor-following or same-topic continuation with drift.
    pub fn sample_session(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let p = &self.sessions;
        let continue_prob = 1.0 - 1.0 / p.mean_length;
        let mut len = 1;
        while len < 64 && rng.gen::<f64>() < continue_prob {
            len += 1;
        }
        let mut session = vec![self.popular_in(None, rng)];
        while session.len() < len {
            let cur = *session.last().unwrap();
            let mut next = cur;
            for _ in 0..8 {
                next = if !self.successors[cur].is_empty() && rng.gen::<f64>() < p.successor_follow
                {
                    *self.successors[cur].choose(rng).unwrap()
                } else if rng.gen::<f64>() < 1.0 - p.topic_drift {
                    self.popular_in(Some(self.queries[cur].topic), rng)
                } else {
                    self.popular_in(None, rng)
                };
                if next != cur {
                    break;
                }
            }
            session.push(next);
        }
        session
    }
}
