//! Seeded property checks. Each returns `Err` with a description of the
//! first discrepancy so that both proptest and the acceptance runner can use
//! them.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use qcfg::induction::{induce_with_observer, unify, InductionConfig};
use qcfg::model::{fit, loglik_gradient, Model, ModelParams, TrainConfig};
use qcfg::sampler::{sample_derivations, Sampler, SamplerConfig, Temperature};
use qcfg::{can_derive, cfg_accepts, Grammar, OutputCfg, Parser};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Check = Result<(), String>;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol || (a == b)
}

/// Inside sum, derivation count and Viterbi maximum against enumeration.
pub fn forest_matches_enumeration(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Some((g, p)) = random_instance(&mut rng, 6, 7) else { return Ok(()) };
    let states = rng.random_range(1..=3);
    let params = random_params(&mut rng, &g, states);
    let oracle = ProbTable::new(&params, &g);
    let all = enumerate_derivations(&g, &p.x, &p.y);
    if all.is_empty() {
        return Err(format!("seed {seed}: generated pair has no derivation"));
    }
    let lps: Vec<f64> = all.iter().map(|z| oracle.logprob(&g, z)).collect();
    let model = Model::new(params, &g).map_err(|e| e.to_string())?;
    let forest = Parser::new(&g)
        .parse_pair(&p)
        .map_err(|e| e.to_string())?
        .ok_or_else(|| format!("seed {seed}: parser found no derivation of {p}"))?;
    let unpacked: HashSet<_> = forest.derivations(&g, usize::MAX).into_iter().collect();
    let expected: HashSet<_> = all.iter().cloned().collect();
    if unpacked != expected {
        return Err(format!("seed {seed}: forest holds {} derivations, enumeration {}", unpacked.len(), expected.len()));
    }
    let inside = model.forest_logsum(&forest);
    let want = log_sum_exp(&lps);
    if !close(inside, want, 1e-9) {
        return Err(format!("seed {seed}: inside {inside} vs enumeration {want}"));
    }
    let (best, z) = model.forest_viterbi(&forest);
    let want = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !close(best, want, 1e-9) {
        return Err(format!("seed {seed}: viterbi {best} vs max {want}"));
    }
    if !expected.contains(&z) || !close(oracle.logprob(&g, &z), best, 1e-9) {
        return Err(format!("seed {seed}: viterbi derivation does not score {best}"));
    }
    Ok(())
}

/// Analytic gradient against central differences of the enumerated
/// log-likelihood.
pub fn gradient_matches_differences(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Some((g, p)) = random_instance(&mut rng, 5, 5) else { return Ok(()) };
    let states = rng.random_range(1..=3);
    let params = random_params(&mut rng, &g, states);
    let derivs = enumerate_derivations(&g, &p.x, &p.y);
    let ll = |params: &ModelParams| {
        let t = ProbTable::new(params, &g);
        log_sum_exp(&derivs.iter().map(|z| t.logprob(&g, z)).collect::<Vec<_>>())
    };
    let parser = Parser::new(&g);
    let (value, grad) = loglik_gradient(&params, &parser, std::slice::from_ref(&p)).map_err(|e| e.to_string())?;
    if !close(value, ll(&params), 1e-9) {
        return Err(format!("seed {seed}: loglik {value} vs {}", ll(&params)));
    }
    let h = 1e-5;
    let n_ctx = params.theta_ctx.len();
    for k in 0..params.num_parameters() {
        let bump = |d: f64| {
            let mut q = params.clone();
            if k < n_ctx {
                q.theta_ctx[k] += d;
            } else {
                q.theta_emit[k - n_ctx] += d;
            }
            ll(&q)
        };
        let numeric = (bump(h) - bump(-h)) / (2.0 * h);
        let analytic = if k < n_ctx { grad.theta_ctx[k] } else { grad.theta_emit[k - n_ctx] };
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
        if rel > 1e-4 {
            return Err(format!("seed {seed}: parameter {k}: analytic {analytic} vs numeric {numeric}"));
        }
    }
    Ok(())
}

/// `unify` equals exhaustive decomposition search.
pub fn unify_matches_oracle(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r1, r2) = random_unify_pair(&mut rng);
    let max_nts = 3;
    let got: BTreeSet<String> = unify(&r1, &r2, max_nts).iter().map(|r| r.to_string()).collect();
    let want = unify_oracle(&r1, &r2, max_nts);
    if got != want {
        return Err(format!("seed {seed}: unify({r1}, {r2}) = {got:?}, oracle {want:?}"));
    }
    Ok(())
}

/// Every active example stays derivable after every iteration and the
/// objective never rises within a partition.
pub fn induction_invariants(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = rng.random_range(5..=14);
    let corpus = random_corpus(&mut rng, size);
    let cfg = InductionConfig {
        k_alpha: rng.random_range(0.0..2.0),
        k_beta: [1.0, 10.0, 100.0][rng.random_range(0..3)],
        terminal_weight: [1.0, 4.0][rng.random_range(0..2)],
        max_nonterminals: rng.random_range(1..=3),
        partitions: rng.random_range(1..=3),
        rng_seed: seed,
        ..InductionConfig::default()
    };
    let mut problems = Vec::new();
    let mut last: Option<(usize, f64)> = None;
    let result = induce_with_observer(&corpus, &[], None, &cfg, &mut |log, grammar, active| {
        for ex in active {
            if !can_derive(grammar, ex).unwrap() {
                problems.push(format!("iteration {}/{}: {ex} underivable", log.partition, log.step));
            }
        }
        if let Some((part, obj)) = last {
            if part == log.partition && log.objective > obj + 1e-9 {
                problems.push(format!("iteration {}/{}: objective rose {obj} -> {}", log.partition, log.step, log.objective));
            }
        }
        last = Some((log.partition, log.objective));
    })
    .map_err(|e| e.to_string())?;
    for ex in corpus.iter() {
        if !can_derive(&result.grammar, ex).unwrap() {
            problems.push(format!("final grammar misses {ex}"));
        }
    }
    match problems.first() {
        Some(p) => Err(format!("seed {seed}: {p}")),
        None => Ok(()),
    }
}

fn fitted_conjunction(states: usize) -> (Grammar, ModelParams) {
    let g = grammar(&["NT_1 and NT_2 ### NT_1 NT_2", "jump ### JUMP", "walk ### WALK", "run ### RUN"]);
    let corpus = Corpus::from_pairs(
        "toy",
        [("jump", "JUMP"), ("walk", "WALK"), ("jump and walk", "JUMP WALK"), ("run and walk and jump", "RUN WALK JUMP")],
    )
    .unwrap();
    let cfg = TrainConfig { steps: 60, restarts: 1, ..TrainConfig::default() };
    let params = fit(&Parser::new(&g), &corpus, states, &cfg).unwrap().params;
    (g, params)
}

/// Context distributions of a fitted model sum to one.
pub fn fitted_model_normalizes() -> Check {
    let (g, params) = fitted_conjunction(3);
    let oracle = ProbTable::new(&params, &g);
    let model = Model::new(params, &g).map_err(|e| e.to_string())?;
    for c in 0..model.contexts().len() {
        let s: f64 = model.context_distribution(c).map_err(|e| e.to_string())?.iter().sum();
        let o: f64 = oracle.probs[c].iter().sum();
        if !close(s, 1.0, 1e-9) || !close(o, 1.0, 1e-9) {
            return Err(format!("context {c} sums to {s}"));
        }
    }
    Ok(())
}

fn draw(params: &ModelParams, g: &Grammar, cfg_out: Option<&OutputCfg>, cfg: &SamplerConfig) -> Result<Vec<Derivation>, String> {
    let sampler = Sampler::new(params, g, cfg_out, cfg).map_err(|e| e.to_string())?;
    Ok(sample_derivations(&sampler, cfg).map_err(|e| e.to_string())?.0)
}

/// Samples parse under the grammar.
pub fn samples_are_sound(count: usize) -> Check {
    let (g, params) = fitted_conjunction(2);
    let cfg = SamplerConfig { count, max_depth: 6, rng_seed: 11, ..SamplerConfig::default() };
    let parser = Parser::new(&g);
    for z in draw(&params, &g, None, &cfg)? {
        let p = z.derivation_yield();
        if !parser.can_derive(&p).map_err(|e| e.to_string())? {
            return Err(format!("sampled {p} is not derivable"));
        }
    }
    Ok(())
}

/// Outputs start with JUMP.
pub const JUMP_FIRST_CFG: &str = "@start S\nS -> 'JUMP' | 'JUMP' T\nT -> A | A T\nA -> 'JUMP' | 'WALK' | 'RUN'\n";

/// With an output grammar every sampled output is accepted.
pub fn samples_respect_output_cfg(count: usize) -> Check {
    let (g, params) = fitted_conjunction(2);
    let out = OutputCfg::parse_named(JUMP_FIRST_CFG, "jump_first").map_err(|e| e.to_string())?;
    let cfg = SamplerConfig { count, max_depth: 6, rng_seed: 5, ..SamplerConfig::default() };
    let samples = draw(&params, &g, Some(&out), &cfg)?;
    if samples.len() != count {
        return Err(format!("{} of {count} samples", samples.len()));
    }
    let bad = samples.iter().filter(|z| !cfg_accepts(&out, &z.output_yield())).count();
    if bad > 0 {
        return Err(format!("{bad} of {count} outputs rejected by the output grammar"));
    }
    Ok(())
}

fn root_counts(samples: &[Derivation]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for z in samples {
        *counts.entry(z.rule.to_string()).or_default() += 1;
    }
    counts
}

fn within_3_sigma(observed: usize, n: usize, p: f64) -> bool {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (observed as f64 - mean).abs() <= 3.0 * sd
}

/// At infinite temperature the root rule is uniform over the grammar.
pub fn uniform_temperature_root(count: usize) -> Check {
    let (g, params) = fitted_conjunction(2);
    let cfg = SamplerConfig {
        count,
        temperature: Temperature::UNIFORM,
        // Uniform choice is subcritical here; depth rejections are negligible.
        max_depth: 60,
        rng_seed: 3,
        ..SamplerConfig::default()
    };
    let counts = root_counts(&draw(&params, &g, None, &cfg)?);
    let p = 1.0 / g.len() as f64;
    for r in g.rules() {
        let c = counts.get(&r.to_string()).copied().unwrap_or(0);
        if !within_3_sigma(c, count, p) {
            return Err(format!("root {r}: {c} of {count}, expected {:.0}", p * count as f64));
        }
    }
    Ok(())
}

/// Root frequencies match the model's root distribution.
pub fn root_frequencies_match_model(count: usize) -> Check {
    let g = grammar(&["NT_1 and NT_2 ### NT_1 NT_2", "jump ### JUMP", "walk ### WALK"]);
    let mut params = ModelParams::zeros(&g, 1).unwrap();
    params.theta_emit = vec![-0.5, 0.7, 0.1];
    let model = Model::new(params.clone(), &g).map_err(|e| e.to_string())?;
    let cfg = SamplerConfig { count, max_depth: 40, rng_seed: 9, ..SamplerConfig::default() };
    let counts = root_counts(&draw(&params, &g, None, &cfg)?);
    for r in g.rules() {
        let p = model.expansion_prob(r, None).map_err(|e| e.to_string())?;
        let c = counts.get(&r.to_string()).copied().unwrap_or(0);
        if !within_3_sigma(c, count, p) {
            return Err(format!("root {r}: {c} of {count}, expected {:.0}", p * count as f64));
        }
    }
    Ok(())
}

/// A positive nonterminal bias makes derivations deeper on average.
pub fn bias_increases_depth(count: usize) -> Check {
    let (g, params) = fitted_conjunction(2);
    let mean_depth = |delta: f64| -> Result<f64, String> {
        let cfg = SamplerConfig { count, nt_bias: delta, max_depth: 8, rng_seed: 1, ..SamplerConfig::default() };
        let s = draw(&params, &g, None, &cfg)?;
        Ok(s.iter().map(|z| z.depth() as f64).sum::<f64>() / s.len() as f64)
    };
    let (base, biased) = (mean_depth(0.0)?, mean_depth(1.5)?);
    if biased <= base {
        return Err(format!("mean depth {base:.3} without bias, {biased:.3} with"));
    }
    Ok(())
}
