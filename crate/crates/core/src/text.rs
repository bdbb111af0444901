//! Stable hashing and tokenization shared by every featurizer.
//!
//! All hashes here are FNV-1a followed by a splitmix64 finalizer, so feature
//! indices are identical across platforms, runs and toolchains. Model files
//! depend on that.

use std::collections::BTreeSet;
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a tagged tuple of string parts.
pub fn hash_parts(tag: u32, parts: &[&str]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&tag.to_le_bytes());
    for p in parts {
        h.write(p.as_bytes());
        h.write(&[0xff]);
    }
    finalize(h.finish())
}

/// Derive a named RNG substream from a root seed.
pub fn substream(root: u64, name: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&root.to_le_bytes());
    h.write(name.as_bytes());
    finalize(h.finish())
}

/// Derive a seed for item `index` of a stream.
pub fn indexed(seed: u64, index: u64) -> u64 {
    finalize(seed ^ finalize(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform value in [0, 1) from a hash.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Lowercase and collapse runs of whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for w in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(w.chars().flat_map(char::to_lowercase));
    }
    out
}

pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn word_set(text: &str) -> BTreeSet<String> {
    normalize(text)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Number of distinct normalized words two texts share.
pub fn shared_words(a: &str, b: &str) -> usize {
    let wa = word_set(a);
    word_set(b).iter().filter(|w| wa.contains(*w)).count()
}

/// Token-set Jaccard over normalized words. Two empty texts count as identical.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let wa = word_set(a);
    let wb = word_set(b);
    let union = wa.union(&wb).count();
    if union == 0 {
        return 1.0;
    }
    wa.intersection(&wb).count() as f64 / union as f64
}

/// Character n-grams of `^text$`, the boundary markers letting short words
/// still produce prefix/suffix grams.
pub fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('^')
        .chain(text.chars())
        .chain(std::iter::once('$'))
        .collect();
    if n == 0 || chars.len() < n {
        return Vec::new();
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

/// Visit the same n-grams as [`char_ngrams`] through one reused buffer.
pub fn for_each_char_ngram(text: &str, n: usize, mut f: impl FnMut(&str)) {
    let chars: Vec<char> = std::iter::once('^')
        .chain(text.chars())
        .chain(std::iter::once('$'))
        .collect();
    if n == 0 || chars.len() < n {
        return;
    }
    let mut buf = String::with_capacity(4 * n);
    for w in chars.windows(n) {
        buf.clear();
        buf.extend(w);
        f(&buf);
    }
}

/// Word n-grams joined by a single space.
pub fn word_ngrams(text: &str, n: usize) -> Vec<String> {
    let ws: Vec<&str> = words(text).collect();
    if n == 0 || ws.len() < n {
        return Vec::new();
    }
    ws.windows(n).map(|w| w.join(" ")).collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)) without overflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}
