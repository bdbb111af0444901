use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{self, hash_parts};

/// Sparse L2-normalized vector, entries sorted by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec(pub Vec<(u32, f64)>);

impl SparseVec {
    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }
}

/// Maps query text to a unit vector; cosine similarity is the dot product.
pub trait QueryEmbedder {
    fn embed(&self, text: &str) -> SparseVec;
}

/// Hashed character n-gram term frequencies, L2-normalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgramEmbedder {
    pub dim: u32,
    pub orders: Vec<usize>,
}

impl Default for NgramEmbedder {
    fn default() -> Self {
        Self {
            dim: 1 << 16,
            orders: vec![3, 4],
        }
    }
}

const EMBED_TAG: u32 = 0x454d_4200;

impl QueryEmbedder for NgramEmbedder {
    fn embed(&self, raw: &str) -> SparseVec {
        let t = text::normalize(raw);
        let mut tf: HashMap<u32, f64> = HashMap::new();
        for &n in &self.orders {
            text::for_each_char_ngram(&t, n, |g| {
                let i = (hash_parts(EMBED_TAG + n as u32, &[g]) % self.dim as u64) as u32;
                *tf.entry(i).or_default() += 1.0;
            });
        }
        let norm = tf.values().map(|v| v * v).sum::<f64>().sqrt();
        let mut v: Vec<(u32, f64)> = tf.into_iter().map(|(i, x)| (i, x / norm)).collect();
        v.sort_unstable_by_key(|e| e.0);
        SparseVec(v)
    }
}

pub fn cosine(e: &dyn QueryEmbedder, a: &str, b: &str) -> f64 {
    e.embed(a).dot(&e.embed(b))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    /// Brute-force scan.
    #[default]
    Exact,
    /// Inverted lists over embedding coordinates. Only entries sharing a
    /// coordinate with the query are scored; zero-similarity entries fill any
    /// remaining slots, so results coincide with the exact scan.
    Inverted,
}

/// Nearest-neighbor index over query embeddings.
#[derive(Debug, Clone)]
pub struct QueryIndex {
    mode: IndexMode,
    texts: Vec<String>,
    vecs: Vec<SparseVec>,
    postings: HashMap<u32, Vec<(u32, f64)>>,
    /// Entry ids sorted by text, for deterministic zero-similarity filling.
    by_text: Vec<u32>,
}

impl QueryIndex {
    pub fn build(embedder: &dyn QueryEmbedder, texts: &[String], mode: IndexMode) -> Self {
        let vecs: Vec<SparseVec> = texts.iter().map(|t| embedder.embed(t)).collect();
        let mut postings: HashMap<u32, Vec<(u32, f64)>> = HashMap::new();
        if mode == IndexMode::Inverted {
            for (doc, v) in vecs.iter().enumerate() {
                for &(i, w) in &v.0 {
                    postings.entry(i).or_default().push((doc as u32, w));
                }
            }
        }
        let mut by_text: Vec<u32> = (0..texts.len() as u32).collect();
        by_text.sort_by(|&a, &b| texts[a as usize].cmp(&texts[b as usize]));
        Self {
            mode,
            texts: texts.to_vec(),
            vecs,
            postings,
            by_text,
        }
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    /// Top `k` entries by cosine to `q`, excluding entries whose text is
    /// exactly `q`. Descending similarity, ties broken by text.
    pub fn nearest(
        &self,
        embedder: &dyn QueryEmbedder,
        q: &str,
        k: usize,
    ) -> Result<Vec<(String, f64)>> {
        if self.texts.is_empty() {
            return Err(Error::Retrieval(
                "nearest-neighbor query against an empty index".into(),
            ));
        }
        let qv = embedder.embed(q);
        let mut scored: Vec<(u32, f64)> = match self.mode {
            IndexMode::Exact => (0..self.texts.len() as u32)
                .map(|d| (d, qv.dot(&self.vecs[d as usize])))
                .collect(),
            IndexMode::Inverted => {
                let mut acc: HashMap<u32, f64> = HashMap::new();
                for &(i, w) in &qv.0 {
                    if let Some(list) = self.postings.get(&i) {
                        for &(d, dw) in list {
                            *acc.entry(d).or_default() += w * dw;
                        }
                    }
                }
                let mut hits: Vec<(u32, f64)> = acc.into_iter().collect();
                if hits.len() < k + 1 {
                    let seen: std::collections::HashSet<u32> = hits.iter().map(|h| h.0).collect();
                    for &d in &self.by_text {
                        if hits.len() > k {
                            break;
                        }
                        if !seen.contains(&d) {
                            hits.push((d, 0.0));
                        }
                    }
                }
                hits
            }
        };
        scored.retain(|&(d, _)| self.texts[d as usize] != q);
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.texts[a.0 as usize].cmp(&self.texts[b.0 as usize]))
        });
        scored.truncate(k);
        Ok(scored
            .into_iter()
            .map(|(d, s)| (self.texts[d as usize].clone(), s))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_universe, WorldConfig};

    #[test]
    fn self_cosine_is_one() {
        let e = NgramEmbedder::default();
        for t in ["a", "cheap flights", "x y z w"] {
            assert!((cosine(&e, t, t) - 1.0).abs() < 1e-12);
        }
        assert_eq!(e.embed("ab cd"), e.embed("ab cd"));
    }

    #[test]
    fn normalized_duplicate_ranks_first() {
        let e = NgramEmbedder::default();
        let texts: Vec<String> = ["Cheap  Flights", "cheap hotels", "train times"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let idx = QueryIndex::build(&e, &texts, IndexMode::Exact);
        let out = idx.nearest(&e, "cheap flights", 2).unwrap();
        assert_eq!(out[0].0, "Cheap  Flights");
        assert!((out[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn excludes_query_and_returns_whole_index() {
        let e = NgramEmbedder::default();
        let texts: Vec<String> = ["a b", "c d", "a c"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let idx = QueryIndex::build(&e, &texts, IndexMode::Exact);
        let out = idx.nearest(&e, "a b", 10).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|(t, _)| t != "a b"));
        assert!(out[0].1 >= out[1].1);
    }

    #[test]
    fn empty_index_is_an_error() {
        let e = NgramEmbedder::default();
        let idx = QueryIndex::build(&e, &[], IndexMode::Exact);
        assert!(matches!(idx.nearest(&e, "q", 3), Err(Error::Retrieval(_))));
    }

    #[test]
    fn inverted_matches_brute_force_on_universe() {
        let u = build_universe(&WorldConfig::default(), 3).unwrap();
        let texts: Vec<String> = u.queries.iter().map(|q| q.text.clone()).collect();
        let e = NgramEmbedder::default();
        let exact = QueryIndex::build(&e, &texts, IndexMode::Exact);
        let inv = QueryIndex::build(&e, &texts, IndexMode::Inverted);
        for q in &texts {
            for k in [1, 10, texts.len()] {
                assert_eq!(
                    exact.nearest(&e, q, k).unwrap(),
                    inv.nearest(&e, q, k).unwrap(),
                    "{q} k={k}"
                );
            }
        }
        // the scan itself, computed independently
        let q = &texts[0];
        let mut oracle: Vec<(String, f64)> = texts
            .iter()
            .filter(|t| *t != q)
            .map(|t| (t.clone(), cosine(&e, q, t)))
            .collect();
        oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        oracle.truncate(10);
        assert_eq!(exact.nearest(&e, q, 10).unwrap(), oracle);
    }
}
