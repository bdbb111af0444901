use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::ImpressionRecord;

/// Query to successor counts, each list sorted by count descending then text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooDict {
    entries: BTreeMap<String, Vec<(String, u64)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CooLine {
    query: String,
    successors: Vec<(String, u64)>,
}

fn sort_successors(list: &mut [(String, u64)]) {
    list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

impl CooDict {
    /// Count adjacent pairs `(q, q_next)` over all sessions.
    pub fn build<S: AsRef<str>>(sessions: &[Vec<S>]) -> Self {
        let mut counts: HashMap<&str, HashMap<&str, u64>> = HashMap::new();
        for s in sessions {
            for w in s.windows(2) {
                *counts
                    .entry(w[0].as_ref())
                    .or_default()
                    .entry(w[1].as_ref())
                    .or_default() += 1;
            }
        }
        let entries = counts
            .into_iter()
            .map(|(q, succ)| {
                let mut list: Vec<(String, u64)> =
                    succ.into_iter().map(|(s, c)| (s.to_string(), c)).collect();
                sort_successors(&mut list);
                (q.to_string(), list)
            })
            .collect();
        Self { entries }
    }

    pub fn from_entries(
        entries: impl IntoIterator<Item = (String, Vec<(String, u64)>)>,
    ) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (q, mut list) in entries {
            if list.iter().any(|(_, c)| *c == 0) {
                return Err(Error::Data(format!("zero successor count under {q:?}")));
            }
            sort_successors(&mut list);
            if !list.is_empty() {
                out.insert(q, list);
            }
        }
        Ok(Self { entries: out })
    }

    pub fn successors(&self, q: &str) -> &[(String, u64)] {
        self.entries.get(q).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[(String, u64)])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// One JSON object per line: `{"query": .., "successors": [[q_next, c], ..]}`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (q, list) in &self.entries {
            let line = CooLine {
                query: q.clone(),
                successors: list.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: CooLine = serde_json::from_str(&line)?;
            entries.push((l.query, l.successors));
        }
        Self::from_entries(entries)
    }
}

/// Adjacent query pairs recovered from an impression log. Every logged query
/// with a non-empty history contributes `(previous query, query)`, so each
/// session adjacency is counted once.
pub fn sessions_from_log(log: &[ImpressionRecord]) -> Vec<Vec<String>> {
    log.iter()
        .filter_map(|r| {
            r.prompt
                .history
                .last()
                .map(|prev| vec![prev.clone(), r.prompt.user_query.clone()])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn direct_counting() {
        let d = CooDict::build(&[vec!["a", "b"], vec!["a", "b"], vec!["a", "c"]]);
        assert_eq!(
            d.successors("a"),
            &[("b".to_string(), 2), ("c".to_string(), 1)]
        );
        assert!(d.successors("b").is_empty());
        assert!(CooDict::build(&[vec!["a"], vec!["b"]]).is_empty());
    }

    #[test]
    fn round_trip_file() {
        let d = CooDict::build(&[vec!["x y", "z"], vec!["z", "x y", "z"]]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("coo.jsonl");
        d.save(&p).unwrap();
        assert_eq!(CooDict::load(&p).unwrap(), d);
    }

    #[test]
    fn counts_match_naive_recount() {
        let mut rng = text::rng(17);
        let sessions: Vec<Vec<String>> = (0..300)
            .map(|_| {
                let n = rng.gen_range(1..6);
                (0..n)
                    .map(|_| format!("q{}", rng.gen_range(0..8)))
                    .collect()
            })
            .collect();
        let d = CooDict::build(&sessions);
        for a in 0..8 {
            for b in 0..8 {
                let (qa, qb) = (format!("q{a}"), format!("q{b}"));
                let mut naive = 0;
                for s in &sessions {
                    for i in 0..s.len().saturating_sub(1) {
                        if s[i] == qa && s[i + 1] == qb {
                            naive += 1;
                        }
                    }
                }
                let got = d
                    .successors(&qa)
                    .iter()
                    .find(|(s, _)| *s == qb)
                    .map_or(0, |(_, c)| *c);
                assert_eq!(got, naive, "{qa} -> {qb}");
            }
        }
    }

    proptest! {
        #[test]
        fn lists_sorted_and_positive(sessions in prop::collection::vec(prop::collection::vec(0u8..5, 0..6), 0..40)) {
            let s: Vec<Vec<String>> = sessions.iter().map(|s| s.iter().map(|x| x.to_string()).collect()).collect();
            let d = CooDict::build(&s);
            for (_, list) in d.iter() {
                prop_assert!(list.iter().all(|(_, c)| *c >= 1));
                for w in list.windows(2) {
                    prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
                }
            }
        }
    }
}
