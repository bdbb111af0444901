use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{self, hash_parts};

/// Which feature groups are emitted.
///
/// * `token`: n-grams and identity of the target query, words of the user query
/// * `domain`: interactions between the user-query field and the target field
/// * `segment`: interactions between the context segment (preceding queries) and the target
/// * `position`: the display slot
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureGroups {
    pub token: bool,
    pub position: bool,
    pub segment: bool,
    pub domain: bool,
}

impl FeatureGroups {
    pub const ALL: FeatureGroups = FeatureGroups {
        token: true,
        position: true,
        segment: true,
        domain: true,
    };
}

impl Default for FeatureGroups {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Featurizer {
    pub hash_dim: u32,
    pub char_orders: Vec<usize>,
    pub word_orders: Vec<usize>,
    pub groups: FeatureGroups,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self {
            hash_dim: 1 << 18,
            char_orders: vec![2, 3],
            word_orders: vec![1],
            groups: FeatureGroups::ALL,
        }
    }
}

// feature namespaces
const T_WORD: u32 = 100;
const T_CHAR: u32 = 200;
const T_ID: u32 = 3;
const T_USER_WORD: u32 = 4;
const D_CROSS: u32 = 10;
const D_PAIR: u32 = 11;
const D_SHARED: u32 = 12;
const S_CROSS: u32 = 20;
const S_OVERLAP: u32 = 21;
const P_SLOT: u32 = 30;
const P_SLOT_SHARED: u32 = 31;

fn bucket(n: usize) -> String {
    n.min(4).to_string()
}

impl Featurizer {
    pub fn with_dim(hash_dim: u32) -> Result<Self> {
        let f = Self {
            hash_dim,
            ..Self::default()
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hash_dim == 0 || !self.hash_dim.is_power_of_two() {
            return Err(Error::Config(format!(
                "hash_dim {} is not a power of two",
                self.hash_dim
            )));
        }
        if self.char_orders.contains(&0) || self.word_orders.contains(&0) {
            return Err(Error::Config("n-gram orders must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    fn idx(&self, tag: u32, parts: &[&str]) -> u32 {
        (hash_parts(tag, parts) & (self.hash_dim as u64 - 1)) as u32
    }

    /// Sparse binary features; repeated indices add up.
    pub fn features(
        &self,
        user_query: &str,
        context: &[&str],
        target: &str,
        slot: usize,
    ) -> Vec<u32> {
        let mut out = Vec::with_capacity(96);
        self.features_into(user_query, context, target, slot, &mut out);
        out
    }

    pub fn features_into(
        &self,
        user_query: &str,
        context: &[&str],
        target: &str,
        slot: usize,
        out: &mut Vec<u32>,
    ) {
        let user_words: Vec<&str> = text::words(user_query).collect();
        let target_words: Vec<&str> = text::words(target).collect();
        let shared = target_words
            .iter()
            .filter(|w| user_words.contains(w))
            .count();
        let g = self.groups;

        if g.token {
            for &n in &self.word_orders {
                let tag = T_WORD + n as u32;
                if n == 1 {
                    for w in &target_words {
                        out.push(self.idx(tag, &[w]));
                    }
                } else {
                    for gram in text::word_ngrams(target, n) {
                        out.push(self.idx(tag, &[&gram]));
                    }
                }
            }
            for &n in &self.char_orders {
                text::for_each_char_ngram(target, n, |gram| {
                    out.push(self.idx(T_CHAR + n as u32, &[gram]))
                });
            }
            out.push(self.idx(T_ID, &[target]));
            for w in &user_words {
                out.push(self.idx(T_USER_WORD, &[w]));
            }
        }
        if g.domain {
            for u in &user_words {
                for t in &target_words {
                    out.push(self.idx(D_CROSS, &[u, t]));
                }
            }
            out.push(self.idx(D_PAIR, &[user_query, target]));
            out.push(self.idx(D_SHARED, &[&bucket(shared)]));
        }
        if g.segment && !context.is_empty() {
            let mut max_overlap = 0;
            for c in context {
                let cw: Vec<&str> = text::words(c).collect();
                max_overlap =
                    max_overlap.max(target_words.iter().filter(|w| cw.contains(w)).count());
                for a in &cw {
                    for t in &target_words {
                        out.push(self.idx(S_CROSS, &[a, t]));
                    }
                }
            }
            out.push(self.idx(S_OVERLAP, &[&bucket(max_overlap)]));
        }
        if g.position {
            let s = slot.to_string();
            out.push(self.idx(P_SLOT, &[&s]));
            if g.domain {
                out.push(self.idx(P_SLOT_SHARED, &[&s, &bucket(shared)]));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let f = Featurizer::with_dim(1 << 10).unwrap();
        let a = f.features("cheap flights", &["paris hotels"], "cheap flights paris", 2);
        let b = f.features("cheap flights", &["paris hotels"], "cheap flights paris", 2);
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i < 1 << 10));
    }

    #[test]
    fn slot_changes_features() {
        let f = Featurizer::default();
        let a = f.features("u", &[], "t", 1);
        let b = f.features("u", &[], "t", 2);
        assert_ne!(a, b);
    }

    #[test]
    fn groups_can_be_disabled() {
        let mut f = Featurizer::default();
        let full = f.features("a b", &["c"], "a d", 2).len();
        f.groups.segment = false;
        let no_seg = f.features("a b", &["c"], "a d", 2).len();
        assert_eq!(full - no_seg, 2 + 1);
        f.groups = FeatureGroups {
            token: false,
            position: true,
            segment: false,
            domain: false,
        };
        assert_eq!(f.features("a b", &["c"], "a d", 2).len(), 1);
    }

    #[test]
    fn rejects_bad_dim() {
        assert!(Featurizer::with_dim(1000).is_err());
        assert!(Featurizer::with_dim(0).is_err());
    }
}
