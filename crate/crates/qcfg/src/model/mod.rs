//! Latent-state distribution over rule expansions.
//!
//! A rule `r` expanding nonterminal `i` of its parent `r_p` has probability
//! `p(r | r_p, i) = sum_s p(s | r_p, i) p(r | s)`, both factors softmaxes of
//! free parameters. The root expansion uses a dedicated context.

mod dp;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use dp::CompiledForest;
pub use train::{fit, loglik_gradient, FitReport, ParamGrad, TrainConfig};

use crate::chart::{OutputCfg, Parser};
use crate::corpus::ExamplePair;
use crate::derivation::Derivation;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, RuleId};
use crate::rule::Rule;
use crate::symbol::Token;

pub const PARAMS_VERSION: u32 = 1;

/// Standard deviation of the initial parameters.
pub const INIT_SCALE: f64 = 0.1;

/// Expansion contexts of a grammar: ROOT is 0, then one per
/// `(rule, index)` in rule order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contexts {
    offsets: Vec<usize>,
    total: usize,
}

impl Contexts {
    pub fn new(grammar: &Grammar) -> Contexts {
        let mut offsets = Vec::with_capacity(grammar.len());
        let mut total = 1;
        for r in grammar.rules() {
            offsets.push(total);
            total += r.arity();
        }
        Contexts { offsets, total }
    }

    pub const ROOT: usize = 0;

    /// Context for nonterminal `index` (1-based) of rule `rule`.
    pub fn child(&self, rule: RuleId, index: u8) -> usize {
        self.offsets[rule] + index as usize - 1
    }

    fn checked_child(&self, grammar: &Grammar, rule: RuleId, index: u8) -> Result<usize> {
        if rule >= self.offsets.len() || index == 0 || index as usize > grammar.rule(rule).arity() {
            return Err(Error::UnknownContext);
        }
        Ok(self.child(rule, index))
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Parameters of the expansion distribution, bound to one grammar by its
/// fingerprint. Tables are row-major: `theta_ctx[c * S + s]` and
/// `theta_emit[s * R + r]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub version: u32,
    pub num_states: usize,
    pub num_contexts: usize,
    pub num_rules: usize,
    pub grammar_fingerprint: String,
    pub theta_ctx: Vec<f64>,
    pub theta_emit: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters: every context expands uniformly.
    pub fn zeros(grammar: &Grammar, num_states: usize) -> Result<ModelParams> {
        if num_states == 0 {
            return Err(Error::Precondition("the number of states must be at least 1".into()));
        }
        let ctx = Contexts::new(grammar);
        Ok(ModelParams {
            version: PARAMS_VERSION,
            num_states,
            num_contexts: ctx.len(),
            num_rules: grammar.len(),
            grammar_fingerprint: grammar.fingerprint(),
            theta_ctx: vec![0.0; ctx.len() * num_states],
            theta_emit: vec![0.0; num_states * grammar.len()],
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.theta_ctx.len() + self.theta_emit.len()
    }

    /// Errors unless these parameters were made for `grammar`.
    pub fn check(&self, grammar: &Grammar) -> Result<()> {
        if self.version != PARAMS_VERSION {
            return Err(Error::Precondition(format!("unsupported params version {}", self.version)));
        }
        let ctx = Contexts::new(grammar);
        let shape_ok = self.num_states >= 1
            && self.num_contexts == ctx.len()
            && self.num_rules == grammar.len()
            && self.theta_ctx.len() == self.num_contexts * self.num_states
            && self.theta_emit.len() == self.num_states * self.num_rules;
        if !shape_ok || self.grammar_fingerprint != grammar.fingerprint() {
            return Err(Error::GrammarMismatch);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<ModelParams> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: "model parameters".into(),
            source,
        })
    }
}

/// Parameters drawn i.i.d. from `N(0, INIT_SCALE^2)` with a seeded stream.
pub fn init_params(grammar: &Grammar, num_states: usize, rng_seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(grammar, num_states)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let normal = Normal::new(0.0, INIT_SCALE).expect("valid normal");
    for v in p.theta_ctx.iter_mut().chain(p.theta_emit.iter_mut()) {
        *v = normal.sample(&mut rng);
    }
    Ok(p)
}

pub(crate) fn log_softmax(row: &[f64], out: &mut [f64]) {
    let lse = log_sum_exp(row.iter().copied());
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log-probability tables derived from parameters.
#[derive(Clone, Debug)]
pub(crate) struct Tables {
    pub rules: usize,
    /// `ln p(s | c)`, contexts x states.
    pub log_state: Vec<f64>,
    /// `ln p(r | s)`, states x rules; `-inf` for rules outside the support.
    pub log_emit: Vec<f64>,
    /// `ln p(r | c)`, contexts x rules.
    pub log_expand: Vec<f64>,
}

impl Tables {
    /// `support`: restrict the emission softmax to these rules.
    pub fn new(params: &ModelParams, support: Option<&[RuleId]>) -> Tables {
        let (s, r, c) = (params.num_states, params.num_rules, params.num_contexts);
        let mut log_state = vec![0.0; c * s];
        for k in 0..c {
            log_softmax(&params.theta_ctx[k * s..(k + 1) * s], &mut log_state[k * s..(k + 1) * s]);
        }
        let mut log_emit = vec![f64::NEG_INFINITY; s * r];
        for t in 0..s {
            let row = &params.theta_emit[t * r..(t + 1) * r];
            match support {
                None => log_softmax(row, &mut log_emit[t * r..(t + 1) * r]),
                Some(ids) => {
                    let lse = log_sum_exp(ids.iter().map(|&i| row[i]));
                    for &i in ids {
                        log_emit[t * r + i] = row[i] - lse;
                    }
                }
            }
        }
        let mut log_expand = vec![f64::NEG_INFINITY; c * r];
        for k in 0..c {
            for i in 0..r {
                log_expand[k * r + i] = log_sum_exp((0..s).map(|t| log_state[k * s + t] + log_emit[t * r + i]));
            }
        }
        Tables {
            rules: r,
            log_state,
            log_emit,
            log_expand,
        }
    }

    pub fn expand(&self, ctx: usize, rule: RuleId) -> f64 {
        self.log_expand[ctx * self.rules + rule]
    }
}

/// Parameters bound to their grammar, with precomputed tables and a parser.
pub struct Model<'g> {
    params: ModelParams,
    parser: Parser<'g>,
    contexts: Contexts,
    tables: Tables,
}

impl<'g> Model<'g> {
    pub fn new(params: ModelParams, grammar: &'g Grammar) -> Result<Model<'g>> {
        Model::with_parser(params, Parser::new(grammar))
    }

    pub fn with_parser(params: ModelParams, parser: Parser<'g>) -> Result<Model<'g>> {
        params.check(parser.grammar())?;
        let tables = Tables::new(&params, None);
        Ok(Model {
            contexts: Contexts::new(parser.grammar()),
            params,
            parser,
            tables,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grammar(&self) -> &'g Grammar {
        self.parser.grammar()
    }

    pub fn parser(&self) -> &Parser<'g> {
        &self.parser
    }

    pub fn contexts(&self) -> &Contexts {
        &self.contexts
    }

    fn rule_id(&self, r: &Rule) -> Result<RuleId> {
        self.grammar().id_of(r).ok_or_else(|| Error::UnknownRule(r.to_string()))
    }

    fn context_of(&self, parent: Option<(&Rule, u8)>) -> Result<usize> {
        match parent {
            None => Ok(Contexts::ROOT),
            Some((rp, i)) => {
                let id = self.rule_id(rp)?;
                self.contexts.checked_child(self.grammar(), id, i)
            }
        }
    }

    /// `p(r | parent)`, where `None` is the root context.
    pub fn expansion_prob(&self, r: &Rule, parent: Option<(&Rule, u8)>) -> Result<f64> {
        let ctx = self.context_of(parent)?;
        Ok(self.tables.expand(ctx, self.rule_id(r)?).exp())
    }

    /// Probability of every rule in one context, by rule id.
    pub fn context_distribution(&self, ctx: usize) -> Result<Vec<f64>> {
        if ctx >= self.contexts.len() {
            return Err(Error::UnknownContext);
        }
        Ok((0..self.grammar().len()).map(|r| self.tables.expand(ctx, r).exp()).collect())
    }

    pub fn derivation_logprob(&self, z: &Derivation) -> Result<f64> {
        let mut total = 0.0;
        for (r, parent) in z.applications() {
            let ctx = self.context_of(parent)?;
            total += self.tables.expand(ctx, self.rule_id(r)?);
        }
        Ok(total)
    }

    /// Log of the summed probability of every derivation in `forest`.
    pub fn forest_logsum(&self, forest: &crate::chart::Forest) -> f64 {
        CompiledForest::new(forest, self.grammar(), &self.contexts).inside(&self.tables).0
    }

    /// `ln p(x, y)`; `-inf` when the pair is not derivable.
    pub fn joint_loglik(&self, pair: &ExamplePair) -> Result<f64> {
        Ok(match self.parser.parse_pair(pair)? {
            Some(f) => self.forest_logsum(&f),
            None => f64::NEG_INFINITY,
        })
    }

    /// `ln p(x)`, summing over every output; `-inf` when `x` is not derivable.
    pub fn input_loglik(&self, x: &[Token]) -> Result<f64> {
        Ok(match self.parser.parse_input(x)? {
            Some(f) => self.forest_logsum(&f),
            None => f64::NEG_INFINITY,
        })
    }

    /// `ln p(y | x)`.
    pub fn conditional_loglik(&self, pair: &ExamplePair) -> Result<f64> {
        let marginal = self.input_loglik(&pair.x)?;
        if marginal == f64::NEG_INFINITY {
            return Err(Error::UndefinedConditional);
        }
        Ok(self.joint_loglik(pair)? - marginal)
    }

    /// Most probable derivation in `forest` and its log-probability.
    pub fn forest_viterbi(&self, forest: &crate::chart::Forest) -> (f64, Derivation) {
        CompiledForest::new(forest, self.grammar(), &self.contexts).viterbi(&self.tables, self.grammar())
    }

    /// Highest-probability derivation of `x` and its output; `None` when
    /// `x` is not derivable or the best output fails `output_cfg`.
    pub fn viterbi_parse(&self, x: &[Token], output_cfg: Option<&OutputCfg>) -> Result<Option<(Vec<Token>, Derivation)>> {
        let Some(forest) = self.parser.parse_input(x)? else {
            return Ok(None);
        };
        let (_, z) = self.forest_viterbi(&forest);
        let y = z.output_yield();
        if output_cfg.is_some_and(|cfg| !cfg.accepts(&y)) {
            return Ok(None);
        }
        Ok(Some((y, z)))
    }
}

pub fn expansion_prob(params: &ModelParams, grammar: &Grammar, r: &Rule, parent: Option<(&Rule, u8)>) -> Result<f64> {
    Model::new(params.clone(), grammar)?.expansion_prob(r, parent)
}

pub fn derivation_logprob(params: &ModelParams, grammar: &Grammar, z: &Derivation) -> Result<f64> {
    Model::new(params.clone(), grammar)?.derivation_logprob(z)
}

pub fn joint_loglik(params: &ModelParams, parser: &Parser<'_>, pair: &ExamplePair) -> Result<f64> {
    let grammar = parser.grammar();
    params.check(grammar)?;
    let tables = Tables::new(params, None);
    let ctx = Contexts::new(grammar);
    Ok(match parser.parse_pair(pair)? {
        Some(f) => CompiledForest::new(&f, grammar, &ctx).inside(&tables).0,
        None => f64::NEG_INFINITY,
    })
}

pub fn conditional_loglik(params: &ModelParams, parser: &Parser<'_>, pair: &ExamplePair) -> Result<f64> {
    let grammar = parser.grammar();
    params.check(grammar)?;
    let tables = Tables::new(params, None);
    let ctx = Contexts::new(grammar);
    let Some(input) = parser.parse_input(&pair.x)? else {
        return Err(Error::UndefinedConditional);
    };
    let marginal = CompiledForest::new(&input, grammar, &ctx).inside(&tables).0;
    let joint = match parser.parse_pair(pair)? {
        Some(f) => CompiledForest::new(&f, grammar, &ctx).inside(&tables).0,
        None => f64::NEG_INFINITY,
    };
    Ok(joint - marginal)
}

pub fn viterbi_parse(
    params: &ModelParams,
    grammar: &Grammar,
    x: &[Token],
    output_cfg: Option<&OutputCfg>,
) -> Result<Option<(Vec<Token>, Derivation)>> {
    Model::new(params.clone(), grammar)?.viterbi_parse(x, output_cfg)
}

#[cfg(test)]
mod tests;
