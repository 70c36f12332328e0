//! Greedy induction of a QCFG from a paired corpus.
//!
//! The grammar starts with one rule per example and is compressed by
//! replacing rules with more general ones found by [`unify`], keeping every
//! example derivable throughout.

mod stats;
mod unify;

use std::collections::{HashMap, HashSet};

use dashmap::DashMap;
use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use stats::{phat, rule_score, OccurrenceStats, PhatSample, Side, AUTO_SAMPLE_SIZE, AUTO_SAMPLE_THRESHOLD};
pub use unify::{unify, unify_bounded, MAX_EXACT_PLACEMENTS};

use crate::chart::{pattern_occurs, rule_output_valid, OutputCfg, Parser};
use crate::corpus::{Corpus, ExamplePair};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, GrammarConfig, RuleId};
use crate::rule::Rule;
use crate::symbol::{Symbol, Token};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InductionConfig {
    pub k_alpha: f64,
    pub k_beta: f64,
    /// Cost of a terminal token relative to a nonterminal.
    pub terminal_weight: f64,
    pub nonterminal_weight: f64,
    pub max_nonterminals: usize,
    pub allow_repeated_indices: bool,
    pub partitions: usize,
    /// Iteration budget per partition.
    pub max_steps: usize,
    /// `None` picks exact counting for small corpora and a sample otherwise.
    pub sample_size_for_phat: Option<PhatSample>,
    pub rng_seed: u64,
    /// Output-CFG check: occurrences of one index share a category.
    pub consistent_output_categories: bool,
    /// Re-parse every active example after each iteration and fail loudly
    /// if one became underivable.
    pub verify_coverage: bool,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig {
            k_alpha: 1.0,
            k_beta: 1.0,
            terminal_weight: 1.0,
            nonterminal_weight: 1.0,
            max_nonterminals: 4,
            allow_repeated_indices: true,
            partitions: 1,
            max_steps: 1000,
            sample_size_for_phat: None,
            rng_seed: 0,
            consistent_output_categories: false,
            verify_coverage: false,
        }
    }
}

impl InductionConfig {
    pub fn scan() -> InductionConfig {
        InductionConfig {
            k_alpha: 0.0,
            k_beta: 100.0,
            terminal_weight: 4.0,
            max_nonterminals: 2,
            partitions: 16,
            ..InductionConfig::default()
        }
    }

    pub fn cogs() -> InductionConfig {
        InductionConfig {
            k_alpha: 1.0,
            k_beta: 5.0,
            terminal_weight: 8.0,
            ..InductionConfig::default()
        }
    }

    pub fn geoquery() -> InductionConfig {
        InductionConfig {
            k_alpha: 4.0,
            k_beta: 16.0,
            terminal_weight: 8.0,
            ..InductionConfig::default()
        }
    }

    pub fn smcalflow() -> InductionConfig {
        InductionConfig::geoquery()
    }

    pub fn grammar_config(&self) -> GrammarConfig {
        GrammarConfig {
            max_nonterminals: self.max_nonterminals,
            allow_repeated_indices: self.allow_repeated_indices,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Precondition(m.into()));
        if self.partitions == 0 {
            return bad("partitions must be at least 1");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if !(self.terminal_weight > 0.0 && self.nonterminal_weight > 0.0) {
            return bad("token weights must be positive");
        }
        if !(self.k_alpha >= 0.0 && self.k_beta >= 0.0) {
            return bad("k_alpha and k_beta must be non-negative");
        }
        if self.max_nonterminals == 0 || self.max_nonterminals > crate::chart::MAX_ARITY {
            return bad("max_nonterminals must be between 1 and 8");
        }
        Ok(())
    }
}

/// Add `rule_to_add`, drop `rules_to_remove`; `objective_delta` is the
/// resulting change of the objective (negative is better).
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub rule_to_add: Rule,
    pub rules_to_remove: Vec<Rule>,
    pub objective_delta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterationLog {
    pub partition: usize,
    pub step: usize,
    pub objective: f64,
    pub grammar_size: usize,
    pub removals: usize,
    pub actions: usize,
    pub active_examples: usize,
}

#[derive(Clone, Debug)]
pub struct Induction {
    pub grammar: Grammar,
    pub log: Vec<IterationLog>,
    /// Some partition ran out of steps before converging.
    pub exhausted: bool,
}

/// Identity rules for every token seen on both sides of one example.
pub fn seed_rules_shared_tokens(corpus: &Corpus) -> Vec<Rule> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for ex in corpus.iter() {
        let ys: HashSet<Token> = ex.y.iter().copied().collect();
        for &t in &ex.x {
            if ys.contains(&t) && seen.insert(t) {
                out.push(Rule::new(vec![Symbol::T(t)], vec![Symbol::T(t)]));
            }
        }
    }
    out
}

fn whole_example_rule(ex: &ExamplePair) -> Rule {
    Rule::new(
        ex.x.iter().map(|&t| Symbol::T(t)).collect(),
        ex.y.iter().map(|&t| Symbol::T(t)).collect(),
    )
}

/// Distinct examples sorted by length and cut into `partitions` chunks of
/// near-equal size; empty chunks are dropped.
pub fn partition_examples(corpus: &Corpus, partitions: usize) -> Vec<Vec<ExamplePair>> {
    let mut seen = HashSet::new();
    let mut distinct: Vec<ExamplePair> = corpus.iter().filter(|e| seen.insert(*e)).cloned().collect();
    distinct.sort_by_key(|e| e.len());
    let n = distinct.len();
    let parts = partitions.max(1);
    let mut out = Vec::new();
    let mut start = 0;
    for p in 0..parts {
        let end = (p + 1) * n / parts;
        if end > start {
            out.push(distinct[start..end].to_vec());
        }
        start = end;
    }
    out
}

/// Whole-example rules for the first (shortest) partition plus the seeds.
pub fn init_grammar(corpus: &Corpus, seeds: &[Rule], cfg: &InductionConfig) -> Result<Grammar> {
    let mut g = Grammar::new(cfg.grammar_config());
    if let Some(first) = partition_examples(corpus, cfg.partitions).first() {
        for ex in first {
            g.insert(whole_example_rule(ex))?;
        }
    }
    for s in seeds {
        g.insert(s.canonical())?;
    }
    Ok(g)
}

/// Sum of rule scores.
pub fn objective(grammar: &Grammar, stats: &OccurrenceStats, cfg: &InductionConfig) -> f64 {
    grammar.rules().map(|r| rule_score(r, stats, cfg)).sum()
}

/// True iff every example stays derivable without `rule`.
pub fn removal_check(grammar: &Grammar, rule: &Rule, examples: &[ExamplePair]) -> Result<bool> {
    let id = grammar.id_of(rule).ok_or_else(|| Error::UnknownRule(rule.to_string()))?;
    let parser = Parser::new(grammar);
    let active = ActiveSet::new(examples.to_vec());
    removable(&parser, id, &[], &active)
}

/// Candidate actions that would let `r_c` be dropped.
pub fn candidate_actions(
    grammar: &Grammar,
    r_c: &Rule,
    output_cfg: Option<&OutputCfg>,
    stats: &OccurrenceStats,
    cfg: &InductionConfig,
) -> Result<Vec<Action>> {
    let id = grammar.id_of(r_c).ok_or_else(|| Error::UnknownRule(r_c.to_string()))?;
    let scores = Scores::new(stats, cfg);
    let snap = Snapshot::new(grammar);
    snap.actions(id, output_cfg, &scores, cfg)
}

/// Examples that must stay derivable, shortest first so that a failing
/// removal is usually detected early.
struct ActiveSet {
    pairs: Vec<ExamplePair>,
    syms: Vec<(Vec<Symbol>, Vec<Symbol>)>,
}

impl ActiveSet {
    fn new(mut pairs: Vec<ExamplePair>) -> ActiveSet {
        pairs.sort_by_key(|e| e.len());
        let syms = pairs
            .iter()
            .map(|e| (e.x.iter().map(|&t| Symbol::T(t)).collect(), e.y.iter().map(|&t| Symbol::T(t)).collect()))
            .collect();
        ActiveSet { pairs, syms }
    }
}

/// Whether the rule with id `id` can go, given the rules in `excluded` are
/// gone already.
fn removable(parser: &Parser<'_>, id: RuleId, excluded: &[RuleId], active: &ActiveSet) -> Result<bool> {
    let rule = parser.grammar().rule(id);
    let mut without: Vec<RuleId> = excluded.to_vec();
    without.push(id);
    // Derivable as a rule: every use can be replaced.
    if parser.derives_rule(rule, &without, &[])? {
        return Ok(true);
    }
    for (x, y) in &active.syms {
        if !pattern_occurs(rule.alpha(), x) || !pattern_occurs(rule.beta(), y) {
            continue;
        }
        if !parser.recognize(x, y, &without, &[])? {
            return Ok(false);
        }
    }
    Ok(true)
}

struct Scores<'a> {
    stats: &'a OccurrenceStats,
    cfg: &'a InductionConfig,
    cache: DashMap<Rule, f64>,
}

impl<'a> Scores<'a> {
    fn new(stats: &'a OccurrenceStats, cfg: &'a InductionConfig) -> Scores<'a> {
        Scores {
            stats,
            cfg,
            cache: DashMap::new(),
        }
    }

    fn get(&self, rule: &Rule) -> f64 {
        if let Some(s) = self.cache.get(rule) {
            return *s;
        }
        let s = rule_score(rule, self.stats, self.cfg);
        self.cache.insert(rule.clone(), s);
        s
    }
}

fn terminal_set(side: &[Symbol]) -> impl Iterator<Item = Token> + '_ {
    side.iter().filter_map(Symbol::token)
}

/// An immutable view of the grammar for one iteration.
struct Snapshot<'g> {
    grammar: &'g Grammar,
    parser: Parser<'g>,
    by_alpha_token: HashMap<Token, Vec<RuleId>>,
    by_beta_token: HashMap<Token, Vec<RuleId>>,
}

impl<'g> Snapshot<'g> {
    fn new(grammar: &'g Grammar) -> Snapshot<'g> {
        let mut by_alpha_token: HashMap<Token, Vec<RuleId>> = HashMap::new();
        let mut by_beta_token: HashMap<Token, Vec<RuleId>> = HashMap::new();
        for (id, r) in grammar.rules().enumerate() {
            let mut a: Vec<Token> = terminal_set(r.alpha()).collect();
            a.sort_unstable_by_key(Token::id);
            a.dedup();
            for t in a {
                by_alpha_token.entry(t).or_default().push(id);
            }
            let mut b: Vec<Token> = terminal_set(r.beta()).collect();
            b.sort_unstable_by_key(Token::id);
            b.dedup();
            for t in b {
                by_beta_token.entry(t).or_default().push(id);
            }
        }
        Snapshot {
            grammar,
            parser: Parser::new(grammar),
            by_alpha_token,
            by_beta_token,
        }
    }

    /// Rules whose sides contain every terminal of `r_add`'s sides, in id order.
    fn related(&self, r_add: &Rule) -> Vec<RuleId> {
        let mut lists: Vec<&Vec<RuleId>> = Vec::new();
        for (side, index) in [(r_add.alpha(), &self.by_alpha_token), (r_add.beta(), &self.by_beta_token)] {
            for t in terminal_set(side) {
                match index.get(&t) {
                    Some(l) => lists.push(l),
                    None => return Vec::new(),
                }
            }
        }
        if lists.is_empty() {
            return (0..self.grammar.len()).collect();
        }
        lists.sort_by_key(|l| l.len());
        let mut out: Vec<RuleId> = lists[0].clone();
        for l in &lists[1..] {
            let set: HashSet<RuleId> = l.iter().copied().collect();
            out.retain(|id| set.contains(id));
        }
        out
    }

    fn actions(&self, c: RuleId, output_cfg: Option<&OutputCfg>, scores: &Scores<'_>, cfg: &InductionConfig) -> Result<Vec<Action>> {
        let r_c = self.grammar.rule(c);
        let c_terms: HashSet<Token> = terminal_set(r_c.alpha()).chain(terminal_set(r_c.beta())).collect();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (other, r_p) in self.grammar.rules().enumerate() {
            if other == c
                || r_p.alpha().len() > r_c.alpha().len()
                || r_p.beta().len() > r_c.beta().len()
                || !terminal_set(r_p.alpha()).chain(terminal_set(r_p.beta())).all(|t| c_terms.contains(&t))
            {
                continue;
            }
            for r_add in unify_bounded(r_c, r_p, cfg.max_nonterminals) {
                if !seen.insert(r_add.clone()) || self.grammar.contains(&r_add) || self.grammar.admits(&r_add).is_err() {
                    continue;
                }
                if let Some(ocfg) = output_cfg {
                    if !rule_output_valid(ocfg, r_add.beta(), cfg.consistent_output_categories) {
                        continue;
                    }
                }
                out.push(self.action_for(c, r_add, scores)?);
            }
        }
        Ok(out)
    }

    /// `r_c` plus every related rule that becomes derivable once `r_add`
    /// is in and the earlier removals are out.
    fn action_for(&self, c: RuleId, r_add: Rule, scores: &Scores<'_>) -> Result<Action> {
        let mut removed = vec![c];
        for o in self.related(&r_add) {
            if o == c {
                continue;
            }
            let r_o = self.grammar.rule(o);
            if !pattern_occurs(r_add.alpha(), r_o.alpha()) || !pattern_occurs(r_add.beta(), r_o.beta()) {
                continue;
            }
            let mut excluded = removed.clone();
            excluded.push(o);
            if self.parser.derives_rule(r_o, &excluded, &[&r_add])? {
                removed.push(o);
            }
        }
        let delta = scores.get(&r_add) - removed.iter().map(|&id| scores.get(self.grammar.rule(id))).sum::<f64>();
        Ok(Action {
            rule_to_add: r_add,
            rules_to_remove: removed.into_iter().map(|id| self.grammar.rule(id).clone()).collect(),
            objective_delta: delta,
        })
    }

    fn propose(&self, c: RuleId, active: &ActiveSet, output_cfg: Option<&OutputCfg>, scores: &Scores<'_>, cfg: &InductionConfig) -> Result<Proposal> {
        if removable(&self.parser, c, &[], active)? {
            return Ok(Proposal::Remove(c));
        }
        let best = self
            .actions(c, output_cfg, scores, cfg)?
            .into_iter()
            .filter(|a| a.objective_delta < 0.0)
            .min_by(|a, b| {
                a.objective_delta
                    .total_cmp(&b.objective_delta)
                    .then_with(|| a.rule_to_add.canonical_cmp(&b.rule_to_add))
            });
        Ok(best.map_or(Proposal::Nothing, Proposal::Act))
    }
}

enum Proposal {
    Nothing,
    Remove(RuleId),
    Act(Action),
}

/// Keeps the best actions such that no two share a removed rule or the
/// added rule; best first.
fn aggregate(mut actions: Vec<Action>) -> Vec<Action> {
    actions.sort_by(|a, b| {
        a.objective_delta
            .total_cmp(&b.objective_delta)
            .then_with(|| a.rule_to_add.canonical_cmp(&b.rule_to_add))
    });
    let mut removed: HashSet<Rule> = HashSet::new();
    let mut added: HashSet<Rule> = HashSet::new();
    let mut out = Vec::new();
    for a in actions {
        if added.contains(&a.rule_to_add) || a.rules_to_remove.iter().any(|r| removed.contains(r)) {
            continue;
        }
        added.insert(a.rule_to_add.clone());
        removed.extend(a.rules_to_remove.iter().cloned());
        out.push(a);
    }
    out
}

/// Re-validates an action against the current grammar and applies it if
/// it still removes its source rule and improves the objective.
fn execute(grammar: &mut Grammar, action: &Action, scores: &Scores<'_>) -> Result<Option<f64>> {
    let source = &action.rules_to_remove[0];
    if !grammar.contains(source) || grammar.contains(&action.rule_to_add) {
        return Ok(None);
    }
    let mut removed_ids = Vec::new();
    {
        let parser = Parser::new(grammar);
        for r in &action.rules_to_remove {
            let Some(id) = grammar.id_of(r) else { continue };
            let mut excluded = removed_ids.clone();
            excluded.push(id);
            if parser.derives_rule(r, &excluded, &[&action.rule_to_add])? {
                removed_ids.push(id);
            } else if r == source {
                return Ok(None);
            }
        }
    }
    let delta = scores.get(&action.rule_to_add) - removed_ids.iter().map(|&id| scores.get(grammar.rule(id))).sum::<f64>();
    if delta >= 0.0 {
        return Ok(None);
    }
    let doomed: Vec<Rule> = removed_ids.iter().map(|&id| grammar.rule(id).clone()).collect();
    grammar.insert(action.rule_to_add.clone())?;
    for r in &doomed {
        grammar.remove(r);
    }
    Ok(Some(delta))
}

fn check_coverage(grammar: &Grammar, active: &ActiveSet) -> Result<()> {
    let parser = Parser::new(grammar);
    for ex in &active.pairs {
        if !parser.can_derive(ex)? {
            return Err(Error::Precondition(format!("example `{ex}` is no longer derivable")));
        }
    }
    Ok(())
}

/// Called after every iteration with the log entry, the grammar and the
/// examples that must be derivable.
pub type Observer<'a> = dyn FnMut(&IterationLog, &Grammar, &[ExamplePair]) + 'a;

pub fn induce(corpus: &Corpus, seeds: &[Rule], output_cfg: Option<&OutputCfg>, cfg: &InductionConfig) -> Result<Induction> {
    induce_with_observer(corpus, seeds, output_cfg, cfg, &mut |_, _, _| {})
}

pub fn induce_with_observer(
    corpus: &Corpus,
    seeds: &[Rule],
    output_cfg: Option<&OutputCfg>,
    cfg: &InductionConfig,
    observer: &mut Observer<'_>,
) -> Result<Induction> {
    cfg.validate()?;
    let stats = OccurrenceStats::for_config(corpus, cfg);
    let scores = Scores::new(&stats, cfg);
    let parts = partition_examples(corpus, cfg.partitions);
    let mut grammar = init_grammar(corpus, seeds, cfg)?;
    let mut log = Vec::new();
    let mut exhausted = false;
    let mut active_pairs: Vec<ExamplePair> = Vec::new();

    for (p, part) in parts.iter().enumerate() {
        if p > 0 {
            for ex in part {
                grammar.insert(whole_example_rule(ex))?;
            }
        }
        active_pairs.extend(part.iter().cloned());
        let active = ActiveSet::new(active_pairs.clone());
        let mut step = 0;
        loop {
            if step == cfg.max_steps {
                warn!("partition {p} stopped after {step} steps without converging");
                exhausted = true;
                break;
            }
            step += 1;
            let proposals: Vec<Proposal> = {
                let snap = Snapshot::new(&grammar);
                (0..grammar.len())
                    .into_par_iter()
                    .map(|c| snap.propose(c, &active, output_cfg, &scores, cfg))
                    .collect::<Result<_>>()?
            };
            let mut removal_ids = Vec::new();
            let mut actions = Vec::new();
            for prop in proposals {
                match prop {
                    Proposal::Nothing => {}
                    Proposal::Remove(id) => removal_ids.push(id),
                    Proposal::Act(a) => actions.push(a),
                }
            }
            if removal_ids.is_empty() && actions.is_empty() {
                break;
            }

            // Removals interact, so each is rechecked with the earlier ones gone.
            let mut gone = Vec::new();
            {
                let parser = Parser::new(&grammar);
                for id in removal_ids {
                    if removable(&parser, id, &gone, &active)? {
                        gone.push(id);
                    }
                }
            }
            let doomed: Vec<Rule> = gone.iter().map(|&id| grammar.rule(id).clone()).collect();
            for r in &doomed {
                grammar.remove(r);
            }

            let mut executed = 0;
            for a in aggregate(actions) {
                if execute(&mut grammar, &a, &scores)?.is_some() {
                    executed += 1;
                }
            }
            if cfg.verify_coverage {
                check_coverage(&grammar, &active)?;
            }
            let entry = IterationLog {
                partition: p,
                step,
                objective: grammar.rules().map(|r| scores.get(r)).sum(),
                grammar_size: grammar.len(),
                removals: doomed.len(),
                actions: executed,
                active_examples: active.pairs.len(),
            };
            debug!(
                "partition {p} step {step}: {} rules, objective {:.3}, {} removals, {} actions",
                entry.grammar_size, entry.objective, entry.removals, entry.actions
            );
            observer(&entry, &grammar, &active.pairs);
            log.push(entry);
            if doomed.is_empty() && executed == 0 {
                break;
            }
        }
        info!("partition {p} converged at {} rules", grammar.len());
    }
    Ok(Induction {
        grammar,
        log,
        exhausted,
    })
}
