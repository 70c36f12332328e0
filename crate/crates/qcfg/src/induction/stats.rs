//! Co-occurrence statistics behind the rule scores.

use std::collections::HashMap;
use std::sync::Arc;

use dashmap::DashMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chart::pattern_occurs;
use crate::corpus::Corpus;
use crate::rule::Rule;
use crate::symbol::{Symbol, Token};

use super::InductionConfig;

/// Corpora above this size are subsampled unless configured otherwise.
pub const AUTO_SAMPLE_THRESHOLD: usize = 10_000;
pub const AUTO_SAMPLE_SIZE: usize = 2_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Input,
    Output,
}

/// How many examples the estimates are computed over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhatSample {
    Exact,
    Sampled(usize),
}

impl Serialize for PhatSample {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PhatSample::Exact => s.serialize_str("exact"),
            PhatSample::Sampled(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for PhatSample {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("sample size must be positive")),
            Raw::Count(n) => Ok(PhatSample::Sampled(n)),
            Raw::Word(w) if w == "exact" => Ok(PhatSample::Exact),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a positive count or \"exact\", got {w:?}"
            ))),
        }
    }
}

type Bits = Vec<u64>;

fn popcount(bits: &[u64]) -> usize {
    bits.iter().map(|w| w.count_ones() as usize).sum()
}

/// Per-pattern sets of examples in which the pattern occurs, cached.
///
/// Counting is done over a fixed subset of the corpus (all of it, or a
/// seeded uniform sample). Repeated examples count repeatedly.
pub struct OccurrenceStats {
    sides: [Vec<Vec<Symbol>>; 2],
    postings: [HashMap<Token, Bits>; 2],
    cache: DashMap<(Side, Vec<Symbol>), Arc<Bits>>,
    words: usize,
}

impl OccurrenceStats {
    pub fn new(corpus: &Corpus, sample: PhatSample, seed: u64) -> OccurrenceStats {
        let chosen: Vec<usize> = match sample {
            PhatSample::Sampled(n) if n < corpus.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = rand::seq::index::sample(&mut rng, corpus.len(), n).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..corpus.len()).collect(),
        };
        let n = chosen.len();
        let words = n.div_ceil(64).max(1);
        let mut sides: [Vec<Vec<Symbol>>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
        let mut postings: [HashMap<Token, Bits>; 2] = [HashMap::new(), HashMap::new()];
        for (row, &i) in chosen.iter().enumerate() {
            let ex = &corpus.examples[i];
            for (s, toks) in [&ex.x, &ex.y].into_iter().enumerate() {
                sides[s].push(toks.iter().map(|&t| Symbol::T(t)).collect());
                for &t in toks {
                    postings[s].entry(t).or_insert_with(|| vec![0; words])[row / 64] |= 1 << (row % 64);
                }
            }
        }
        OccurrenceStats {
            sides,
            postings,
            cache: DashMap::new(),
            words,
        }
    }

    /// Statistics as configured, sampling large corpora by default.
    pub fn for_config(corpus: &Corpus, cfg: &InductionConfig) -> OccurrenceStats {
        let sample = cfg.sample_size_for_phat.unwrap_or(if corpus.len() > AUTO_SAMPLE_THRESHOLD {
            PhatSample::Sampled(AUTO_SAMPLE_SIZE)
        } else {
            PhatSample::Exact
        });
        OccurrenceStats::new(corpus, sample, cfg.rng_seed)
    }

    /// Number of examples the counts are taken over.
    pub fn len(&self) -> usize {
        self.sides[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn occurrences(&self, side: Side, pattern: &[Symbol]) -> Arc<Bits> {
        let key = (side, pattern.to_vec());
        if let Some(b) = self.cache.get(&key) {
            return b.clone();
        }
        let s = side as usize;
        // Only examples containing every terminal of the pattern can match.
        let mut candidates: Bits = vec![u64::MAX; self.words];
        let n = self.len();
        if !n.is_multiple_of(64) {
            candidates[self.words - 1] = (1u64 << (n % 64)) - 1;
        }
        if n == 0 {
            candidates[0] = 0;
        }
        for sym in pattern {
            if let Symbol::T(t) = sym {
                match self.postings[s].get(t) {
                    Some(p) => candidates.iter_mut().zip(p).for_each(|(c, w)| *c &= w),
                    None => candidates.iter_mut().for_each(|c| *c = 0),
                }
            }
        }
        let mut out = vec![0u64; self.words];
        for (w, &word) in candidates.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let row = w * 64 + b;
                if pattern_occurs(pattern, &self.sides[s][row]) {
                    out[w] |= 1 << b;
                }
            }
        }
        let out = Arc::new(out);
        self.cache.insert(key, out.clone());
        out
    }

    /// Number of counted examples whose `side` contains `pattern`.
    pub fn count(&self, side: Side, pattern: &[Symbol]) -> usize {
        popcount(&self.occurrences(side, pattern))
    }

    /// Number of counted examples containing both patterns on their sides.
    pub fn joint_count(&self, a: (Side, &[Symbol]), b: (Side, &[Symbol])) -> usize {
        let x = self.occurrences(a.0, a.1);
        let y = self.occurrences(b.0, b.1);
        x.iter().zip(y.iter()).map(|(p, q)| (p & q).count_ones() as usize).sum()
    }
}

/// Fraction of the examples containing `sigma_b` that also contain
/// `sigma_a`; zero when `sigma_b` never occurs.
pub fn phat(sigma_a: &[Symbol], side_a: Side, sigma_b: &[Symbol], side_b: Side, stats: &OccurrenceStats) -> f64 {
    let denom = stats.count(side_b, sigma_b);
    if denom == 0 {
        return 0.0;
    }
    stats.joint_count((side_a, sigma_a), (side_b, sigma_b)) as f64 / denom as f64
}

/// Weighted token count of one rule side.
fn side_size(side: &[Symbol], cfg: &InductionConfig) -> f64 {
    side.iter()
        .map(|s| if s.is_nt() { cfg.nonterminal_weight } else { cfg.terminal_weight })
        .sum()
}

/// `|alpha| + |beta| - c(alpha, beta)` with probabilities floored at
/// `1 / (2 n)` before taking logs.
pub fn rule_score(rule: &Rule, stats: &OccurrenceStats, cfg: &InductionConfig) -> f64 {
    let floor = 1.0 / (2.0 * stats.len().max(1) as f64);
    let ln = |p: f64| p.max(floor).ln();
    let mut c = 0.0;
    if cfg.k_alpha != 0.0 {
        c += cfg.k_alpha * ln(phat(rule.alpha(), Side::Input, rule.beta(), Side::Output, stats));
    }
    if cfg.k_beta != 0.0 {
        c += cfg.k_beta * ln(phat(rule.beta(), Side::Output, rule.alpha(), Side::Input, stats));
    }
    side_size(rule.alpha(), cfg) + side_size(rule.beta(), cfg) - c
}
