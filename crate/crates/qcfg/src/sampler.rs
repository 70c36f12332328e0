//! Forward sampling of synthetic examples from a fitted model.
//!
//! Each sample index owns an RNG stream derived from the seed, so results do
//! not depend on how samples are spread over threads.

use std::collections::HashSet;
use std::fmt;

use dashmap::DashMap;
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::chart::{beta_cells, OutputCfg};
use crate::corpus::{Corpus, ExamplePair};
use crate::derivation::Derivation;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, RuleId};
use crate::model::{log_softmax, Contexts, ModelParams};

/// Attempts allowed per sample before sampling is declared hopeless.
pub const MAX_ATTEMPTS_PER_SAMPLE: usize = 10_000;
/// Sampling aborts if a window of attempts accepts less than this fraction.
pub const MIN_ACCEPTANCE_RATE: f64 = 0.001;
const CHUNK: usize = 1024;

/// Sampling temperature; infinite means uniform over eligible rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperature(pub f64);

impl Temperature {
    pub const UNIFORM: Temperature = Temperature(f64::INFINITY);

    pub fn is_uniform(self) -> bool {
        self.0 == f64::INFINITY
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(1.0)
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_uniform() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for Temperature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Temperature> {
        let t = match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" => f64::INFINITY,
            other => other
                .parse::<f64>()
                .map_err(|_| Error::Precondition(format!("bad temperature {s:?}")))?,
        };
        if t > 0.0 {
            Ok(Temperature(t))
        } else {
            Err(Error::Precondition(format!("temperature must be positive, got {s}")))
        }
    }
}

impl Serialize for Temperature {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_uniform() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Temperature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Num(v) => v.to_string(),
            Raw::Text(t) => t,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub count: usize,
    pub temperature: Temperature,
    /// Added to the emission logits of rules with more than
    /// `nt_bias_threshold` nonterminals.
    pub nt_bias: f64,
    pub nt_bias_threshold: usize,
    /// Maximum derivation height; deeper samples are rejected.
    pub max_depth: usize,
    pub rng_seed: u64,
    pub dedup: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            count: 100_000,
            temperature: Temperature::default(),
            nt_bias: 0.0,
            nt_bias_threshold: 0,
            max_depth: 10,
            rng_seed: 0,
            dedup: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.0 > 0.0) {
            return Err(Error::Precondition("temperature must be positive".into()));
        }
        if !(self.nt_bias >= 0.0 && self.nt_bias.is_finite()) {
            return Err(Error::Precondition("nt_bias must be a non-negative number".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Precondition("max_depth must be positive".into()));
        }
        Ok(())
    }
}

/// Why a sampling attempt produced nothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reject {
    Depth,
    /// No rule fits the output constraints somewhere, or the output failed
    /// the output grammar.
    DeadEnd,
}

type Compat = Option<Vec<Vec<bool>>>;

/// A grammar with sampling distributions per context.
pub struct Sampler<'a> {
    grammar: &'a Grammar,
    output_cfg: Option<&'a OutputCfg>,
    contexts: Contexts,
    /// `p(r | c)` after temperature and bias, contexts x rules.
    probs: Vec<f64>,
    uniform: bool,
    max_depth: usize,
    /// Per `(rule, allowed categories)`: `None` if the rule cannot fit,
    /// else allowed categories for each of its indices.
    compat: DashMap<(RuleId, Vec<bool>), Compat>,
}

impl<'a> Sampler<'a> {
    pub fn new(params: &ModelParams, grammar: &'a Grammar, output_cfg: Option<&'a OutputCfg>, cfg: &SamplerConfig) -> Result<Sampler<'a>> {
        params.check(grammar)?;
        cfg.validate()?;
        if grammar.is_empty() {
            return Err(Error::Precondition("cannot sample from an empty grammar".into()));
        }
        let (ns, nr, nc) = (params.num_states, params.num_rules, params.num_contexts);
        let uniform = cfg.temperature.is_uniform();
        let mut probs = vec![1.0; nc * nr];
        if !uniform {
            let t = cfg.temperature.0;
            let mut emit = vec![0.0; ns * nr];
            for s in 0..ns {
                let logits: Vec<f64> = grammar
                    .rules()
                    .enumerate()
                    .map(|(r, rule)| {
                        let bias = if rule.arity() > cfg.nt_bias_threshold { cfg.nt_bias } else { 0.0 };
                        (params.theta_emit[s * nr + r] + bias) / t
                    })
                    .collect();
                log_softmax(&logits, &mut emit[s * nr..(s + 1) * nr]);
            }
            let mut state = vec![0.0; ns];
            for c in 0..nc {
                log_softmax(&params.theta_ctx[c * ns..(c + 1) * ns], &mut state);
                for r in 0..nr {
                    probs[c * nr + r] = (0..ns).map(|s| (state[s] + emit[s * nr + r]).exp()).sum();
                }
            }
        }
        Ok(Sampler {
            grammar,
            output_cfg,
            contexts: Contexts::new(grammar),
            probs,
            uniform,
            max_depth: cfg.max_depth,
            compat: DashMap::new(),
        })
    }

    /// Sampling weight of every rule at `ctx`, before output constraints.
    pub fn weights(&self, ctx: usize) -> &[f64] {
        let nr = self.grammar.len();
        &self.probs[ctx * nr..(ctx + 1) * nr]
    }

    fn compat(&self, cfg: &OutputCfg, rule: RuleId, allowed: &[bool]) -> Compat {
        let key = (rule, allowed.to_vec());
        if let Some(c) = self.compat.get(&key) {
            return c.clone();
        }
        let beta = self.grammar.rule(rule).beta();
        let nc = cfg.num_categories();
        let fits = |slot: &dyn Fn(u8) -> Vec<bool>| {
            let cats = cfg.categories_of(&beta_cells(beta, slot));
            cats.iter().zip(allowed).any(|(&a, &b)| a && b)
        };
        let all = vec![true; nc];
        let result = if !fits(&|_| all.clone()) {
            None
        } else {
            let arity = self.grammar.rule(rule).arity();
            let mut sets = Vec::with_capacity(arity);
            for i in 1..=arity as u8 {
                let set: Vec<bool> = (0..nc)
                    .map(|k| {
                        fits(&|j| {
                            if j == i {
                                let mut v = vec![false; nc];
                                v[k] = true;
                                v
                            } else {
                                all.clone()
                            }
                        })
                    })
                    .collect();
                sets.push(set);
            }
            sets.iter().all(|s| s.iter().any(|&b| b)).then_some(sets)
        };
        self.compat.insert(key, result.clone());
        result
    }

    fn expand(&self, rng: &mut ChaCha8Rng, ctx: usize, depth: usize, allowed: Option<&[bool]>) -> std::result::Result<Derivation, Reject> {
        let nr = self.grammar.len();
        let mut weights = Vec::with_capacity(nr);
        let mut children_sets: Vec<Compat> = Vec::new();
        for r in 0..nr {
            let w = if self.uniform { 1.0 } else { self.probs[ctx * nr + r] };
            match (self.output_cfg, allowed) {
                (Some(cfg), Some(allowed)) => {
                    let c = self.compat(cfg, r, allowed);
                    weights.push(if c.is_some() { w } else { 0.0 });
                    children_sets.push(c);
                }
                _ => weights.push(w),
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Reject::DeadEnd);
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = nr;
        for (r, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                pick = r;
                if u < w {
                    break;
                }
                u -= w;
            }
        }
        let rule = self.grammar.rule(pick);
        if rule.arity() > 0 && depth >= self.max_depth {
            return Err(Reject::Depth);
        }
        let mut children = Vec::with_capacity(rule.arity());
        for i in 1..=rule.arity() as u8 {
            let sub = children_sets.get(pick).and_then(|c| c.as_ref()).map(|sets| sets[i as usize - 1].as_slice());
            children.push(self.expand(rng, self.contexts.child(pick, i), depth + 1, sub)?);
        }
        Ok(Derivation {
            rule: rule.clone(),
            children,
        })
    }

    /// One forward sample from the root.
    pub fn sample_derivation(&self, rng: &mut ChaCha8Rng) -> std::result::Result<Derivation, Reject> {
        let start = self.output_cfg.map(|cfg| {
            let mut v = vec![false; cfg.num_categories()];
            v[cfg.start()] = true;
            v
        });
        let z = self.expand(rng, Contexts::ROOT, 1, start.as_deref())?;
        if let Some(cfg) = self.output_cfg {
            if !cfg.accepts(&z.output_yield()) {
                return Err(Reject::DeadEnd);
            }
        }
        Ok(z)
    }

    /// The RNG stream owned by sample `index`.
    pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        rng
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SampleStats {
    pub attempts: usize,
    pub accepted: usize,
    pub depth_rejects: usize,
    pub dead_ends: usize,
    /// Removed by deduplication.
    pub duplicates: usize,
}

impl SampleStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            1.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

struct Outcome {
    derivation: Option<Derivation>,
    attempts: usize,
    depth_rejects: usize,
    dead_ends: usize,
}

fn draw(sampler: &Sampler<'_>, seed: u64, index: u64) -> Outcome {
    let mut rng = Sampler::stream(seed, index);
    let mut out = Outcome {
        derivation: None,
        attempts: 0,
        depth_rejects: 0,
        dead_ends: 0,
    };
    while out.attempts < MAX_ATTEMPTS_PER_SAMPLE {
        out.attempts += 1;
        match sampler.sample_derivation(&mut rng) {
            Ok(z) => {
                out.derivation = Some(z);
                break;
            }
            Err(Reject::Depth) => out.depth_rejects += 1,
            Err(Reject::DeadEnd) => out.dead_ends += 1,
        }
    }
    out
}

/// Draws `cfg.count` accepted derivations and returns their yields.
pub fn sample_derivations(sampler: &Sampler<'_>, cfg: &SamplerConfig) -> Result<(Vec<Derivation>, SampleStats)> {
    let mut stats = SampleStats::default();
    let mut out = Vec::with_capacity(cfg.count);
    let mut next = 0usize;
    while next < cfg.count {
        let end = (next + CHUNK).min(cfg.count);
        let outcomes: Vec<Outcome> = (next..end).into_par_iter().map(|i| draw(sampler, cfg.rng_seed, i as u64)).collect();
        let mut window = SampleStats::default();
        let mut exhausted = false;
        for o in outcomes {
            window.attempts += o.attempts;
            window.depth_rejects += o.depth_rejects;
            window.dead_ends += o.dead_ends;
            match o.derivation {
                Some(z) => {
                    window.accepted += 1;
                    out.push(z);
                }
                None => exhausted = true,
            }
        }
        stats.attempts += window.attempts;
        stats.accepted += window.accepted;
        stats.depth_rejects += window.depth_rejects;
        stats.dead_ends += window.dead_ends;
        if exhausted || window.acceptance_rate() < MIN_ACCEPTANCE_RATE {
            return Err(Error::SamplerAbort {
                accepted: stats.accepted,
                attempts: stats.attempts,
                depth_rejects: stats.depth_rejects,
                dead_ends: stats.dead_ends,
            });
        }
        next = end;
    }
    Ok((out, stats))
}

/// A synthetic corpus of `cfg.count` examples (fewer after `dedup`).
pub fn sample_dataset(
    params: &ModelParams,
    grammar: &Grammar,
    output_cfg: Option<&OutputCfg>,
    cfg: &SamplerConfig,
) -> Result<(Corpus, SampleStats)> {
    let sampler = Sampler::new(params, grammar, output_cfg, cfg)?;
    let (derivations, mut stats) = sample_derivations(&sampler, cfg)?;
    let mut examples: Vec<ExamplePair> = derivations.iter().map(Derivation::derivation_yield).collect();
    if cfg.dedup {
        let mut seen = HashSet::new();
        examples.retain(|e| seen.insert(e.clone()));
        stats.duplicates = derivations.len() - examples.len();
    }
    info!(
        "sampled {} examples, acceptance rate {:.4}",
        examples.len(),
        stats.acceptance_rate()
    );
    Ok((Corpus::new("synthetic", examples), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::can_derive;
    use crate::grammar::GrammarConfig;
    use crate::model::{init_params, Model};

    fn grammar(rules: &[&str]) -> Grammar {
        Grammar::from_rules(GrammarConfig::default(), rules.iter().map(|r| r.parse().unwrap())).unwrap()
    }

    fn conjunction_grammar() -> Grammar {
        grammar(&["NT_1 and NT_2 ### NT_1 NT_2", "jump ### JUMP", "walk ### WALK"])
    }

    #[test]
    fn temperature_parsing() {
        assert!("inf".parse::<Temperature>().unwrap().is_uniform());
        assert_eq!("0.5".parse::<Temperature>().unwrap(), Temperature(0.5));
        assert!("0".parse::<Temperature>().is_err());
        assert!("-1".parse::<Temperature>().is_err());
        let cfg: SamplerConfig = serde_json::from_str(r#"{"temperature": "inf"}"#).unwrap();
        assert!(cfg.temperature.is_uniform());
        let back: SamplerConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn depth_one_gives_leaves() {
        let g = conjunction_grammar();
        let p = init_params(&g, 2, 0).unwrap();
        let cfg = SamplerConfig {
            count: 500,
            max_depth: 1,
            ..SamplerConfig::default()
        };
        let (corpus, stats) = sample_dataset(&p, &g, None, &cfg).unwrap();
        assert_eq!(corpus.len(), 500);
        assert!(corpus.iter().all(|e| e.x.len() == 1));
        assert!(stats.depth_rejects > 0);
    }

    #[test]
    fn samples_are_derivable_and_seeded() {
        let g = conjunction_grammar();
        let p = init_params(&g, 2, 0).unwrap();
        let cfg = SamplerConfig {
            count: 2000,
            max_depth: 5,
            rng_seed: 3,
            ..SamplerConfig::default()
        };
        let (a, _) = sample_dataset(&p, &g, None, &cfg).unwrap();
        for e in a.iter() {
            assert!(can_derive(&g, e).unwrap());
        }
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (b, _) = single.install(|| sample_dataset(&p, &g, None, &cfg)).unwrap();
        assert_eq!(a, b);
        let (empty, _) = sample_dataset(&p, &g, None, &SamplerConfig { count: 0, ..cfg.clone() }).unwrap();
        assert!(empty.is_empty());
        let (dedup, stats) = sample_dataset(&p, &g, None, &SamplerConfig { dedup: true, ..cfg }).unwrap();
        assert_eq!(dedup.len() + stats.duplicates, 2000);
        assert!(stats.duplicates > 0);
    }

    #[test]
    fn root_weights_follow_the_model() {
        let g = conjunction_grammar();
        let p = init_params(&g, 3, 8).unwrap();
        let s = Sampler::new(&p, &g, None, &SamplerConfig::default()).unwrap();
        let m = Model::new(p.clone(), &g).unwrap();
        for (r, rule) in g.rules().enumerate() {
            assert!((s.weights(0)[r] - m.expansion_prob(rule, None).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn output_cfg_constrains_samples() {
        let g = grammar(&["NT_1 and NT_2 ### NT_1 NT_2", "NT_1 twice ### ( NT_1 NT_1 )", "jump ### JUMP", "walk ### WALK"]);
        let cfg: OutputCfg = "@start S\nS -> A | A A\nA -> 'JUMP' | 'WALK' | '(' A A ')'".parse().unwrap();
        let p = init_params(&g, 2, 1).unwrap();
        let sc = SamplerConfig {
            count: 1000,
            max_depth: 4,
            ..SamplerConfig::default()
        };
        let (corpus, stats) = sample_dataset(&p, &g, Some(&cfg), &sc).unwrap();
        assert!(corpus.iter().all(|e| cfg.accepts(&e.y)));
        assert!(stats.dead_ends > 0 || stats.depth_rejects > 0);
    }

    #[test]
    fn impossible_constraints_abort() {
        let g = conjunction_grammar();
        let cfg: OutputCfg = "@start S\nS -> 'RUN'".parse().unwrap();
        let p = init_params(&g, 1, 1).unwrap();
        let err = sample_dataset(&p, &g, Some(&cfg), &SamplerConfig { count: 10, ..SamplerConfig::default() }).unwrap_err();
        assert!(matches!(err, Error::SamplerAbort { accepted: 0, .. }));
    }
}
