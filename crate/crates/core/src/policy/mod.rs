//! The recommendation policy: a softmax over a finite candidate pool,
//! sampled slot by slot without replacement.
//!
//! For a prompt `x` with pool `C` and response `y = (q_1..q_N)`,
//! `log π(y|x) = Σ_k [ s(q_k)/τ - logsumexp_{c ∈ C \ {q_1..q_{k-1}}} s(c)/τ ]`
//! where `s(c) = w·φ(x, c) + w·ψ(c, q_1..q_{k-1})`. `φ` holds hashed
//! prompt/candidate features; `ψ` is a one-hot bucket of the candidate's
//! largest word overlap with the queries already emitted, which lets the
//! policy learn to avoid (or favour) near-repeats within one response.

mod pool;
mod sft;

pub use pool::{CandidatePool, PoolBuilder, PoolConfig};
pub use sft::{sft_loss, sft_train, SftConfig, SftExample, SftOutcome};

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::SparseGrad;
use crate::prompt::{PromptRecord, ResponseRecord};
use crate::text::{self, hash_parts};

pub const POLICY_FORMAT: &str = "gqr-policy";
pub const POLICY_VERSION: u32 = 1;

const F_ID: u32 = 1;
const F_WORD: u32 = 2;
const F_USER_CROSS: u32 = 3;
const F_PAIR: u32 = 4;
const F_HIST_CROSS: u32 = 5;
const F_IN_COR: u32 = 6;
const F_COR_RANK: u32 = 7;
const F_SHARED: u32 = 8;
const F_LEN: u32 = 9;
const F_PREFIX_SIM: u32 = 10;
const SIM_BUCKETS: usize = 11;

fn sim_bucket(sim: f64) -> usize {
    ((sim * 10.0).ceil().max(0.0) as usize).min(SIM_BUCKETS - 1)
}

fn word_ids(q: &str) -> Vec<u64> {
    let mut v: Vec<u64> = text::words(q)
        .map(|w| {
            if w.bytes().any(|b| b.is_ascii_uppercase() || !b.is_ascii()) {
                hash_parts(0, &[&text::normalize(w)])
            } else {
                hash_parts(0, &[w])
            }
        })
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Jaccard index of two sorted id sets; 0 when both are empty.
fn sorted_jaccard(a: &[u64], b: &[u64]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Hashed features of every pool candidate for one prompt.
pub fn candidate_features(
    prompt: &PromptRecord,
    pool: &CandidatePool,
    hash_dim: u32,
) -> Vec<Vec<u32>> {
    let mask = hash_dim as u64 - 1;
    let idx = |tag: u32, parts: &[&str]| (hash_parts(tag, parts) & mask) as u32;
    let user_words: Vec<&str> = text::words(&prompt.user_query).collect();
    let hist_words: Vec<&str> = prompt
        .history
        .last()
        .map(|h| text::words(h).collect())
        .unwrap_or_default();
    pool.queries
        .iter()
        .zip(&pool.cor_rank)
        .map(|(q, rank)| {
            let cw: Vec<&str> = text::words(q).collect();
            let mut f =
                Vec::with_capacity(8 + cw.len() * (1 + user_words.len() + hist_words.len()));
            f.push(idx(F_ID, &[q]));
            f.push(idx(F_PAIR, &[&prompt.user_query, q]));
            for w in &cw {
                f.push(idx(F_WORD, &[w]));
                for u in &user_words {
                    f.push(idx(F_USER_CROSS, &[u, w]));
                }
                for h in &hist_words {
                    f.push(idx(F_HIST_CROSS, &[h, w]));
                }
            }
            if let Some(r) = rank {
                f.push(idx(F_IN_COR, &[]));
                f.push(idx(F_COR_RANK, &[&(*r).min(9).to_string()]));
            }
            let shared = cw.iter().filter(|w| user_words.contains(w)).count();
            f.push(idx(F_SHARED, &[&shared.min(4).to_string()]));
            f.push(idx(F_LEN, &[&(q.chars().count() / 4).min(8).to_string()]));
            f
        })
        .collect()
}

/// A prompt with its pool and cached candidate features.
#[derive(Debug, Clone)]
pub struct PreparedPrompt {
    pub prompt: PromptRecord,
    pub pool: CandidatePool,
    features: Vec<Vec<u32>>,
    words: Vec<Vec<u64>>,
    prefix_ids: [u32; SIM_BUCKETS],
    hash_dim: u32,
}

impl PreparedPrompt {
    pub fn new(prompt: PromptRecord, pool: CandidatePool, hash_dim: u32) -> Self {
        let features = candidate_features(&prompt, &pool, hash_dim);
        let words = pool.queries.iter().map(|q| word_ids(q)).collect();
        let mask = hash_dim as u64 - 1;
        let prefix_ids =
            std::array::from_fn(|b| (hash_parts(F_PREFIX_SIM, &[&b.to_string()]) & mask) as u32);
        Self {
            prompt,
            pool,
            features,
            words,
            prefix_ids,
            hash_dim,
        }
    }

    pub fn features(&self, j: usize) -> &[u32] {
        &self.features[j]
    }

    /// Word-set Jaccard index of two pool entries.
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        sorted_jaccard(&self.words[a], &self.words[b])
    }

    /// The prefix feature of candidate `j`, absent at the first slot.
    fn prefix_feature(&self, prefix: &Prefix, j: usize) -> Option<u32> {
        (prefix.len > 0).then(|| self.prefix_ids[sim_bucket(prefix.max_sim[j])])
    }

    pub fn n(&self) -> usize {
        self.prompt.n_queries
    }

    /// Pool positions of a response's queries.
    pub fn indices_of(&self, response: &ResponseRecord) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(response.queries.len());
        for q in &response.queries {
            let j = self
                .pool
                .position(q)
                .ok_or_else(|| Error::Data(format!("query {q:?} is not in the candidate pool")))?;
            if out.contains(&j) {
                return Err(Error::Data(format!("query {q:?} repeated in response")));
            }
            out.push(j);
        }
        Ok(out)
    }

    pub fn response(&self, indices: &[usize]) -> ResponseRecord {
        ResponseRecord::new(
            indices
                .iter()
                .map(|&j| self.pool.queries[j].clone())
                .collect(),
        )
    }
}

/// Decoding state: which candidates are emitted and each remaining
/// candidate's largest similarity to them.
struct Prefix {
    taken: Vec<bool>,
    max_sim: Vec<f64>,
    len: usize,
}

impl Prefix {
    fn new(m: usize) -> Self {
        Self {
            taken: vec![false; m],
            max_sim: vec![0.0; m],
            len: 0,
        }
    }

    fn push(&mut self, pp: &PreparedPrompt, j: usize) {
        self.taken[j] = true;
        self.len += 1;
        for c in 0..self.taken.len() {
            if !self.taken[c] {
                self.max_sim[c] = self.max_sim[c].max(pp.similarity(c, j));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub weights: Vec<f64>,
    pub hash_dim: u32,
    pub temperature: f64,
    /// Training generation, bumped by each SFT or alignment round.
    pub version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    format: String,
    version: u32,
    hash_dim: u32,
    temperature: f64,
    generation: u32,
    weights: Vec<(u32, f64)>,
}

impl Policy {
    /// Zero weights: uniform over the pool at every slot.
    pub fn uniform(hash_dim: u32, temperature: f64) -> Result<Self> {
        if hash_dim == 0 || !hash_dim.is_power_of_two() {
            return Err(Error::Config(format!(
                "policy hash_dim {hash_dim} is not a power of two"
            )));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self {
            weights: vec![0.0; hash_dim as usize],
            hash_dim,
            temperature,
            version: 0,
        })
    }

    pub fn prepare(&self, prompt: PromptRecord, pool: CandidatePool) -> PreparedPrompt {
        PreparedPrompt::new(prompt, pool, self.hash_dim)
    }

    fn check(&self, pp: &PreparedPrompt) -> Result<()> {
        if pp.hash_dim != self.hash_dim {
            return Err(Error::Argument(format!(
                "prompt prepared for hash_dim {} but policy uses {}",
                pp.hash_dim, self.hash_dim
            )));
        }
        Ok(())
    }

    /// Prefix-independent part of every candidate's score.
    pub fn scores(&self, pp: &PreparedPrompt) -> Vec<f64> {
        pp.features
            .iter()
            .map(|f| f.iter().map(|&i| self.weights[i as usize]).sum())
            .collect()
    }

    fn step_logits(
        &self,
        pp: &PreparedPrompt,
        base: &[f64],
        prefix: &Prefix,
        tau: f64,
    ) -> Vec<f64> {
        (0..base.len())
            .map(|j| {
                if prefix.taken[j] {
                    f64::NEG_INFINITY
                } else {
                    let extra = pp
                        .prefix_feature(prefix, j)
                        .map_or(0.0, |f| self.weights[f as usize]);
                    (base[j] + extra) / tau
                }
            })
            .collect()
    }

    /// Untempered scores of every candidate after emitting `prefix`;
    /// emitted candidates score `-inf`.
    pub fn step_scores(&self, pp: &PreparedPrompt, prefix: &[usize]) -> Vec<f64> {
        let mut state = Prefix::new(pp.pool.len());
        for &j in prefix {
            state.push(pp, j);
        }
        self.step_logits(pp, &self.scores(pp), &state, 1.0)
    }

    fn check_fill(&self, pp: &PreparedPrompt) -> Result<()> {
        self.check(pp)?;
        if pp.pool.len() < pp.n() {
            return Err(Error::Serving(format!(
                "pool of {} cannot fill {} slots",
                pp.pool.len(),
                pp.n()
            )));
        }
        Ok(())
    }

    /// Sample pool positions at temperature `tau`.
    pub fn sample_indices_at(
        &self,
        pp: &PreparedPrompt,
        tau: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>> {
        self.check_fill(pp)?;
        let base = self.scores(pp);
        let mut prefix = Prefix::new(base.len());
        let mut out = Vec::with_capacity(pp.n());
        let mut w = vec![0.0; base.len()];
        for _ in 0..pp.n() {
            let logits = self.step_logits(pp, &base, &prefix, tau);
            let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for ((wj, &l), &taken) in w.iter_mut().zip(&logits).zip(&prefix.taken) {
                *wj = if taken { 0.0 } else { (l - mx).exp() };
                total += *wj;
            }
            let mut u = rng.gen::<f64>() * total;
            let mut pick = None;
            for (j, &wj) in w.iter().enumerate().take(logits.len()) {
                if prefix.taken[j] {
                    continue;
                }
                pick = Some(j);
                if u < wj {
                    break;
                }
                u -= wj;
            }
            let j = pick.expect("pool has an untaken candidate");
            prefix.push(pp, j);
            out.push(j);
        }
        Ok(out)
    }

    pub fn sample_indices(&self, pp: &PreparedPrompt, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        self.sample_indices_at(pp, self.temperature, rng)
    }

    pub fn sample_response(
        &self,
        pp: &PreparedPrompt,
        rng: &mut ChaCha8Rng,
    ) -> Result<ResponseRecord> {
        Ok(pp.response(&self.sample_indices(pp, rng)?))
    }

    /// The zero-temperature limit: the highest-scoring candidate at each slot,
    /// ties to the earlier pool entry.
    pub fn greedy_indices(&self, pp: &PreparedPrompt) -> Result<Vec<usize>> {
        self.check_fill(pp)?;
        let base = self.scores(pp);
        let mut prefix = Prefix::new(base.len());
        let mut out = Vec::with_capacity(pp.n());
        for _ in 0..pp.n() {
            let logits = self.step_logits(pp, &base, &prefix, 1.0);
            let j = (0..logits.len())
                .filter(|&j| !prefix.taken[j])
                .fold(None, |b: Option<usize>, j| match b {
                    Some(b) if logits[b] >= logits[j] => Some(b),
                    _ => Some(j),
                })
                .expect("pool has an untaken candidate");
            prefix.push(pp, j);
            out.push(j);
        }
        Ok(out)
    }

    /// Log-probability of `indices`, and per slot the distribution over the
    /// pool together with each candidate's prefix feature.
    #[allow(clippy::type_complexity)]
    fn slot_probs(
        &self,
        pp: &PreparedPrompt,
        indices: &[usize],
    ) -> (f64, Vec<Vec<f64>>, Vec<Vec<Option<u32>>>) {
        let base = self.scores(pp);
        let m = base.len();
        let mut prefix = Prefix::new(m);
        let mut lp = 0.0;
        let mut dists = Vec::with_capacity(indices.len());
        let mut pfeats = Vec::with_capacity(indices.len());
        for &j in indices {
            let logits = self.step_logits(pp, &base, &prefix, self.temperature);
            let lse = text::log_sum_exp(logits.iter().copied().filter(|l| l.is_finite()));
            lp += logits[j] - lse;
            dists.push(
                logits
                    .iter()
                    .map(|&l| if l.is_finite() { (l - lse).exp() } else { 0.0 })
                    .collect(),
            );
            pfeats.push((0..m).map(|c| pp.prefix_feature(&prefix, c)).collect());
            prefix.push(pp, j);
        }
        (lp, dists, pfeats)
    }

    pub fn log_prob_indices(&self, pp: &PreparedPrompt, indices: &[usize]) -> f64 {
        self.slot_probs(pp, indices).0
    }

    /// Exact response log-likelihood. Queries outside the pool are a data error.
    pub fn log_prob(&self, pp: &PreparedPrompt, response: &ResponseRecord) -> Result<f64> {
        self.check(pp)?;
        let idx = pp.indices_of(response)?;
        Ok(self.log_prob_indices(pp, &idx))
    }

    /// Add `scale * ∇_w log π(indices | prompt)` into `grad`; returns the log-probability.
    pub fn accumulate_log_prob_grad(
        &self,
        pp: &PreparedPrompt,
        indices: &[usize],
        scale: f64,
        grad: &mut SparseGrad,
    ) -> f64 {
        let (lp, dists, pfeats) = self.slot_probs(pp, indices);
        let s = scale / self.temperature;
        let mut coef = vec![0.0; pp.pool.len()];
        for (k, &j) in indices.iter().enumerate() {
            for (c, p) in dists[k].iter().enumerate() {
                let g = if c == j { 1.0 - p } else { -p };
                if g == 0.0 {
                    continue;
                }
                coef[c] += g;
                if let Some(f) = pfeats[k][c] {
                    grad.add(f, s * g);
                }
            }
        }
        for (j, c) in coef.iter().enumerate() {
            if *c != 0.0 {
                for &f in &pp.features[j] {
                    grad.add(f, s * c);
                }
            }
        }
        lp
    }

    pub fn snapshot(&self) -> ReferenceSnapshot {
        ReferenceSnapshot(Arc::new(self.clone()))
    }

    pub fn to_json(&self) -> Result<String> {
        let f = PolicyFile {
            format: POLICY_FORMAT.into(),
            version: POLICY_VERSION,
            hash_dim: self.hash_dim,
            temperature: self.temperature,
            generation: self.version,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(i, &w)| (i as u32, w))
                .collect(),
        };
        Ok(serde_json::to_string(&f)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: PolicyFile = serde_json::from_str(s)?;
        if f.format != POLICY_FORMAT || f.version != POLICY_VERSION {
            return Err(Error::Version {
                expected: format!("{POLICY_FORMAT} v{POLICY_VERSION}"),
                found: format!("{} v{}", f.format, f.version),
            });
        }
        let mut p = Self::uniform(f.hash_dim, f.temperature)?;
        for (i, w) in f.weights {
            *p.weights
                .get_mut(i as usize)
                .ok_or_else(|| Error::Data(format!("weight index {i} out of range")))? = w;
        }
        p.version = f.generation;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Frozen copy of a policy, used as the DPO reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSnapshot(Arc<Policy>);

impl ReferenceSnapshot {
    pub fn policy(&self) -> &Policy {
        &self.0
    }

    pub fn snapshot(&self) -> ReferenceSnapshot {
        self.clone()
    }

    pub fn log_prob(&self, pp: &PreparedPrompt, response: &ResponseRecord) -> Result<f64> {
        self.0.log_prob(pp, response)
    }

    pub fn log_prob_indices(&self, pp: &PreparedPrompt, indices: &[usize]) -> f64 {
        self.0.log_prob_indices(pp, indices)
    }
}
