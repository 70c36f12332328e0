//! Maximum-likelihood training with Adam over minibatches of forests.

use std::collections::BTreeMap;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{init_params, CompiledForest, Contexts, ModelParams, Tables};
use crate::chart::Parser;
use crate::corpus::{Corpus, ExamplePair};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, RuleId};

/// Grammars above this many rules train with batch-restricted
/// normalization unless configured otherwise.
pub const BATCH_RESTRICTED_THRESHOLD: usize = 5_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Normalize `p(r | s)` over the rules in the batch's forests only.
    /// `None` turns it on for large grammars.
    pub batch_restricted_normalization: Option<bool>,
    pub rng_seed: u64,
    /// Independent runs from different initializations; the one with the
    /// highest training likelihood is kept.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            steps: 1000,
            batch_size: 128,
            batch_restricted_normalization: None,
            rng_seed: 0,
            restarts: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Precondition("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Precondition("batch_size must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Precondition("restarts must be at least 1".into()));
        }
        Ok(())
    }

    fn restricted(&self, grammar: &Grammar) -> bool {
        self.batch_restricted_normalization
            .unwrap_or(grammar.len() > BATCH_RESTRICTED_THRESHOLD)
    }
}

/// Gradient of a summed log-likelihood, shaped like [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub theta_ctx: Vec<f64>,
    pub theta_emit: Vec<f64>,
}

/// Sum of `ln p(x, y)` over `forests` and its gradient. Underivable
/// examples should not be passed in.
pub(crate) fn forests_gradient(
    params: &ModelParams,
    forests: &[&CompiledForest],
    support: Option<&[RuleId]>,
) -> (f64, ParamGrad) {
    let tables = Tables::new(params, support);
    let per_example: Vec<(f64, Vec<(usize, RuleId, f64)>)> = forests
        .par_iter()
        .map(|f| {
            let mut counts = Vec::new();
            let z = f.expected_counts(&tables, &mut counts);
            (z, counts)
        })
        .collect();
    let mut total = 0.0;
    let mut counts: BTreeMap<(usize, RuleId), f64> = BTreeMap::new();
    for (z, cs) in per_example {
        total += z;
        for (c, r, w) in cs {
            *counts.entry((c, r)).or_default() += w;
        }
    }
    (total, chain_rule(params, &tables, &counts))
}

/// From `d/d ln p(r | c)` to the raw parameters through the mixture and
/// both softmaxes.
fn chain_rule(params: &ModelParams, tables: &Tables, counts: &BTreeMap<(usize, RuleId), f64>) -> ParamGrad {
    let (ns, nr, nc) = (params.num_states, params.num_rules, params.num_contexts);
    let mut g_state = vec![0.0; nc * ns];
    let mut g_emit = vec![0.0; ns * nr];
    for (&(c, r), &g) in counts {
        let lp = tables.expand(c, r);
        for s in 0..ns {
            let w = g * (tables.log_state[c * ns + s] + tables.log_emit[s * nr + r] - lp).exp();
            g_state[c * ns + s] += w;
            g_emit[s * nr + r] += w;
        }
    }
    let mut grad = ParamGrad {
        theta_ctx: vec![0.0; nc * ns],
        theta_emit: vec![0.0; ns * nr],
    };
    for c in 0..nc {
        let row = &g_state[c * ns..(c + 1) * ns];
        let sum: f64 = row.iter().sum();
        for s in 0..ns {
            grad.theta_ctx[c * ns + s] = row[s] - tables.log_state[c * ns + s].exp() * sum;
        }
    }
    for s in 0..ns {
        let row = &g_emit[s * nr..(s + 1) * nr];
        let sum: f64 = row.iter().sum();
        for r in 0..nr {
            grad.theta_emit[s * nr + r] = row[r] - tables.log_emit[s * nr + r].exp() * sum;
        }
    }
    grad
}

/// Summed `ln p(x, y)` over the derivable `pairs` and its exact gradient
/// (full normalization). Underivable pairs are ignored.
pub fn loglik_gradient(params: &ModelParams, parser: &Parser<'_>, pairs: &[ExamplePair]) -> Result<(f64, ParamGrad)> {
    let grammar = parser.grammar();
    params.check(grammar)?;
    let contexts = Contexts::new(grammar);
    let mut forests = Vec::new();
    for p in pairs {
        if let Some(f) = parser.parse_pair(p)? {
            forests.push(CompiledForest::new(&f, grammar, &contexts));
        }
    }
    let refs: Vec<&CompiledForest> = forests.iter().collect();
    Ok(forests_gradient(params, &refs, None))
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub params: ModelParams,
    /// Training examples without a derivation, left out of training.
    pub skipped: usize,
    /// Mean batch log-likelihood before each update.
    pub trace: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// One ascent step on `theta` along `grad`.
    fn step(&mut self, theta: &mut [&mut [f64]], grad: &[&[f64]], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let mut k = 0;
        for (th, g) in theta.iter_mut().zip(grad) {
            for (p, &gi) in th.iter_mut().zip(g.iter()) {
                self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * gi;
                self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * gi * gi;
                *p += lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

/// Fits parameters by maximizing the mean joint log-likelihood of the
/// corpus with Adam. Run `k` starts from seed `rng_seed + k`, which drives
/// both initialization and epoch shuffling.
pub fn fit(parser: &Parser<'_>, corpus: &Corpus, num_states: usize, cfg: &TrainConfig) -> Result<FitReport> {
    cfg.validate()?;
    let grammar = parser.grammar();
    let contexts = Contexts::new(grammar);
    let parsed: Vec<Option<CompiledForest>> = corpus
        .examples
        .par_iter()
        .map(|p| Ok(parser.parse_pair(p)?.map(|f| CompiledForest::new(&f, grammar, &contexts))))
        .collect::<Result<_>>()?;
    let skipped = parsed.iter().filter(|f| f.is_none()).count();
    let forests: Vec<CompiledForest> = parsed.into_iter().flatten().collect();
    if skipped > 0 {
        info!("fit: skipping {skipped} underivable examples of {}", corpus.len());
    }
    let all: Vec<&CompiledForest> = forests.iter().collect();
    let mut best: Option<(f64, ModelParams, Vec<f64>)> = None;
    // Without steps every restart is just its initialization.
    let restarts = if cfg.steps == 0 { 1 } else { cfg.restarts };
    for k in 0..restarts {
        let seed = cfg.rng_seed.wrapping_add(k as u64);
        let (params, trace) = train_once(grammar, &forests, num_states, cfg, seed)?;
        if restarts == 1 {
            return Ok(FitReport { params, skipped, trace });
        }
        let tables = Tables::new(&params, None);
        let score: f64 = all.par_iter().map(|f| f.inside(&tables).0).collect::<Vec<f64>>().iter().sum();
        info!("fit restart {k}: training loglik {score:.4}");
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, params, trace));
        }
    }
    let (_, params, trace) = best.expect("at least one restart");
    Ok(FitReport { params, skipped, trace })
}

fn train_once(
    grammar: &Grammar,
    forests: &[CompiledForest],
    num_states: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams, Vec<f64>)> {
    let mut params = init_params(grammar, num_states, seed)?;
    let mut trace = Vec::with_capacity(cfg.steps);
    if forests.is_empty() || cfg.steps == 0 {
        return Ok((params, trace));
    }
    let restricted = cfg.restricted(grammar);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_df17);
    let mut order: Vec<usize> = (0..forests.len()).collect();
    let mut cursor = order.len();
    let mut adam = Adam::new(params.num_parameters());
    for step in 0..cfg.steps {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch: Vec<&CompiledForest> = order[cursor..end].iter().map(|&i| &forests[i]).collect();
        cursor = end;
        let support: Option<Vec<RuleId>> = restricted.then(|| {
            let mut ids: Vec<RuleId> = batch.iter().flat_map(|f| f.rule_ids().iter().copied()).collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        });
        let (total, mut grad) = forests_gradient(&params, &batch, support.as_deref());
        let n = batch.len() as f64;
        trace.push(total / n);
        grad.theta_ctx.iter_mut().chain(grad.theta_emit.iter_mut()).for_each(|g| *g /= n);
        adam.step(
            &mut [&mut params.theta_ctx, &mut params.theta_emit],
            &[&grad.theta_ctx, &grad.theta_emit],
            cfg.learning_rate,
        );
        if step % 100 == 0 {
            debug!("fit step {step}: mean batch loglik {:.4}", total / n);
        }
    }
    Ok((params, trace))
}
