//! Packed-forest chart parsing over a single-nonterminal QCFG.
//!
//! Items are keyed by input span and, for bilingual parsing, output span.
//! Rules are matched directly against the chart: the input side fixes the
//! child input spans, then the output side is matched left to right against
//! the output spans available for each child. Every rule either contains a
//! terminal or has at least two nonterminals on its input side, so child
//! input spans are strictly shorter and a bottom-up sweep by span length is a
//! topological order.

mod cfg;
mod forest;
mod pattern;

use std::collections::{HashMap, HashSet};

use smallvec::SmallVec;

pub use cfg::{cfg_accepts, rule_output_valid, OutputCfg, OutputSymbol, RawSymbol};
pub(crate) use cfg::beta_cells;
pub use forest::{Forest, ForestEdge, ForestNode};
pub use pattern::{occurs_in, pattern_occurs};

use crate::corpus::ExamplePair;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, RuleId};
use crate::rule::Rule;
use crate::symbol::{Symbol, Token};

pub(crate) const MAX_ARITY: usize = 8;

pub const DEFAULT_MAX_ITEMS: usize = 10_000_000;

#[derive(Clone, Copy, Debug)]
pub struct ParserConfig {
    /// Upper bound on chart items plus edges for one parse.
    pub max_items: usize,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            max_items: DEFAULT_MAX_ITEMS,
        }
    }
}

struct CompiledRule {
    alpha: Vec<Symbol>,
    beta: Vec<Symbol>,
    arity: usize,
    alpha_terms: Vec<Symbol>,
    beta_terms: Vec<Symbol>,
}

impl CompiledRule {
    fn new(rule: &Rule) -> CompiledRule {
        let distinct = |side: &[Symbol]| {
            let mut v: Vec<Symbol> = side.iter().filter(|s| !s.is_nt()).copied().collect();
            v.sort_by_key(|s| s.token().map(|t| t.id()));
            v.dedup();
            v
        };
        CompiledRule {
            alpha: rule.alpha().to_vec(),
            beta: rule.beta().to_vec(),
            arity: rule.arity(),
            alpha_terms: distinct(rule.alpha()),
            beta_terms: distinct(rule.beta()),
        }
    }
}

/// Rules split into terminal-only input sides (hashed) and the rest.
struct RuleIndex {
    rules: Vec<CompiledRule>,
    lexical: HashMap<Vec<Symbol>, Vec<u32>>,
    phrasal: Vec<u32>,
}

impl RuleIndex {
    fn build<'a>(rules: impl Iterator<Item = &'a Rule>) -> RuleIndex {
        let mut index = RuleIndex {
            rules: Vec::new(),
            lexical: HashMap::new(),
            phrasal: Vec::new(),
        };
        for (id, r) in rules.enumerate() {
            let c = CompiledRule::new(r);
            if c.arity == 0 {
                index.lexical.entry(c.alpha.clone()).or_default().push(id as u32);
            } else {
                index.phrasal.push(id as u32);
            }
            index.rules.push(c);
        }
        index
    }
}

/// A base rule index with some rules masked out and a few extra rules
/// appended (ids continue after the base ids).
struct RuleView<'a> {
    base: &'a RuleIndex,
    excluded: &'a [RuleId],
    extra: Option<&'a RuleIndex>,
}

impl<'a> RuleView<'a> {
    fn rule(&self, id: u32) -> &CompiledRule {
        let id = id as usize;
        if id < self.base.rules.len() {
            &self.base.rules[id]
        } else {
            &self.extra.unwrap().rules[id - self.base.rules.len()]
        }
    }

    fn lexical(&self, alpha: &[Symbol], out: &mut Vec<u32>) {
        out.clear();
        if let Some(ids) = self.base.lexical.get(alpha) {
            out.extend(ids.iter().filter(|&&id| !self.excluded.contains(&(id as usize))));
        }
        if let Some(extra) = self.extra {
            let off = self.base.rules.len() as u32;
            if let Some(ids) = extra.lexical.get(alpha) {
                out.extend(ids.iter().map(|id| id + off));
            }
        }
    }

    /// Rules with nonterminals whose terminals all occur in the strings.
    fn phrasal(&self, x_syms: &HashSet<Symbol>, y_syms: Option<&HashSet<Symbol>>) -> Vec<u32> {
        let keep = |c: &CompiledRule| {
            c.alpha_terms.iter().all(|t| x_syms.contains(t))
                && y_syms.is_none_or(|ys| c.beta_terms.iter().all(|t| ys.contains(t)))
        };
        let mut out: Vec<u32> = self
            .base
            .phrasal
            .iter()
            .copied()
            .filter(|&id| !self.excluded.contains(&(id as usize)) && keep(&self.base.rules[id as usize]))
            .collect();
        if let Some(extra) = self.extra {
            let off = self.base.rules.len() as u32;
            out.extend(
                extra
                    .phrasal
                    .iter()
                    .filter(|&&id| keep(&extra.rules[id as usize]))
                    .map(|id| id + off),
            );
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct ItemKey {
    i: u16,
    j: u16,
    k: u16,
    l: u16,
}

/// An output span available for some input span, with its node.
#[derive(Clone, Copy)]
struct OutItem {
    k: u16,
    l: u16,
    node: u32,
}

struct RawNode {
    key: ItemKey,
    edges: Vec<u32>,
}

struct RawEdge {
    rule: u32,
    children: SmallVec<[u32; 4]>,
}

struct Chart<'a> {
    view: &'a RuleView<'a>,
    x: &'a [Symbol],
    y: Option<&'a [Symbol]>,
    record: bool,
    max_items: usize,
    nodes: Vec<RawNode>,
    edges: Vec<RawEdge>,
    ids: HashMap<ItemKey, u32>,
    by_span: Vec<Vec<OutItem>>,
}

impl<'a> Chart<'a> {
    fn span_id(&self, i: usize, j: usize) -> usize {
        i * (self.x.len() + 1) + j
    }

    fn add(&mut self, key: ItemKey, rule: Option<u32>, children: &[u32]) -> Result<()> {
        let node = match self.ids.get(&key) {
            Some(&n) => {
                if !self.record {
                    return Ok(());
                }
                n
            }
            None => {
                let n = self.nodes.len() as u32;
                self.nodes.push(RawNode { key, edges: Vec::new() });
                self.ids.insert(key, n);
                let sid = self.span_id(key.i as usize, key.j as usize);
                self.by_span[sid].push(OutItem {
                    k: key.k,
                    l: key.l,
                    node: n,
                });
                n
            }
        };
        if self.record {
            if let Some(rule) = rule {
                let e = self.edges.len() as u32;
                self.edges.push(RawEdge {
                    rule,
                    children: SmallVec::from_slice(children),
                });
                self.nodes[node as usize].edges.push(e);
            }
        }
        if self.nodes.len() + self.edges.len() > self.max_items {
            return Err(Error::Capacity { limit: self.max_items });
        }
        Ok(())
    }

    fn root_key(&self) -> ItemKey {
        ItemKey {
            i: 0,
            j: self.x.len() as u16,
            k: 0,
            l: self.y.map_or(0, |y| y.len() as u16),
        }
    }

    fn run(&mut self, stop_at_root: bool) -> Result<()> {
        let n = self.x.len();
        let x_syms: HashSet<Symbol> = self.x.iter().copied().collect();
        let y_syms: Option<HashSet<Symbol>> = self.y.map(|y| y.iter().copied().collect());
        let phrasal = self.view.phrasal(&x_syms, y_syms.as_ref());
        let mut lex = Vec::new();
        let mut matches: Vec<[(u16, u16); MAX_ARITY]> = Vec::new();
        let root = self.root_key();
        for len in 1..=n {
            for i in 0..=n - len {
                let j = i + len;
                if len == 1 {
                    if let (Symbol::Nt(_), Some(y)) = (self.x[i], self.y) {
                        // Variable leaf: an opaque nonterminal in the input
                        // links to the same nonterminal in the output.
                        for q in 0..y.len() {
                            if y[q] == self.x[i] {
                                self.add(ItemKey { i: i as u16, j: j as u16, k: q as u16, l: q as u16 + 1 }, None, &[])?;
                            }
                        }
                    }
                }
                self.view.lexical(&self.x[i..j], &mut lex);
                for &rid in &lex {
                    self.add_lexical(rid, i, j)?;
                }
                for &rid in &phrasal {
                    let rule = self.view.rule(rid);
                    if rule.alpha.len() > len {
                        continue;
                    }
                    matches.clear();
                    let mut spans = [(0u16, 0u16); MAX_ARITY];
                    self.match_alpha(&rule.alpha, i, j, &mut spans, &mut matches);
                    for m in &matches {
                        self.add_phrasal(rid, i, j, m)?;
                    }
                }
                if stop_at_root && len == n && self.ids.contains_key(&root) {
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    fn add_lexical(&mut self, rid: u32, i: usize, j: usize) -> Result<()> {
        match self.y {
            None => self.add(ItemKey { i: i as u16, j: j as u16, k: 0, l: 0 }, Some(rid), &[]),
            Some(y) => {
                let beta_len = self.view.rule(rid).beta.len();
                if beta_len > y.len() {
                    return Ok(());
                }
                for q in 0..=y.len() - beta_len {
                    if y[q..q + beta_len] == self.view.rule(rid).beta[..] {
                        let key = ItemKey { i: i as u16, j: j as u16, k: q as u16, l: (q + beta_len) as u16 };
                        self.add(key, Some(rid), &[])?;
                    }
                }
                Ok(())
            }
        }
    }

    /// Enumerates assignments of input spans to the nonterminals of `alpha`
    /// such that alpha covers exactly `[i, j)` and every child span has items.
    fn match_alpha(
        &self,
        alpha: &[Symbol],
        pos: usize,
        end: usize,
        spans: &mut [(u16, u16); MAX_ARITY],
        out: &mut Vec<[(u16, u16); MAX_ARITY]>,
    ) {
        let Some((first, rest)) = alpha.split_first() else {
            if pos == end {
                out.push(*spans);
            }
            return;
        };
        if end - pos < alpha.len() {
            return;
        }
        match first {
            Symbol::T(_) => {
                if self.x[pos] == *first {
                    self.match_alpha(rest, pos + 1, end, spans, out);
                }
            }
            Symbol::Nt(idx) => {
                let max_len = end - pos - rest.len();
                let lens: Box<dyn Iterator<Item = usize>> = if rest.is_empty() {
                    Box::new(std::iter::once(max_len))
                } else {
                    Box::new(1..=max_len)
                };
                for l in lens {
                    if let Some(Symbol::T(_)) = rest.first() {
                        if self.x[pos + l] != rest[0] {
                            continue;
                        }
                    }
                    if self.by_span[self.span_id(pos, pos + l)].is_empty() {
                        continue;
                    }
                    spans[*idx as usize - 1] = (pos as u16, (pos + l) as u16);
                    self.match_alpha(rest, pos + l, end, spans, out);
                }
            }
        }
    }

    fn add_phrasal(&mut self, rid: u32, i: usize, j: usize, spans: &[(u16, u16); MAX_ARITY]) -> Result<()> {
        let arity = self.view.rule(rid).arity;
        match self.y {
            None => {
                let mut children: SmallVec<[u32; 4]> = SmallVec::new();
                for &(a, b) in &spans[..arity] {
                    children.push(self.by_span[self.span_id(a as usize, b as usize)][0].node);
                }
                self.add(ItemKey { i: i as u16, j: j as u16, k: 0, l: 0 }, Some(rid), &children)
            }
            Some(y) => {
                let mut found: Vec<(usize, [Option<OutItem>; MAX_ARITY])> = Vec::new();
                {
                    let options: SmallVec<[&[OutItem]; 4]> = spans[..arity]
                        .iter()
                        .map(|&(a, b)| &self.by_span[self.span_id(a as usize, b as usize)][..])
                        .collect();
                    let beta = &self.view.rule(rid).beta;
                    for start in 0..y.len() {
                        if let Symbol::T(_) = beta[0] {
                            if y[start] != beta[0] {
                                continue;
                            }
                        }
                        let mut assign = [None; MAX_ARITY];
                        match_beta(beta, y, start, &options, &mut assign, &mut |end, a| {
                            found.push((start * 65536 + end, *a));
                        });
                    }
                }
                for (packed, assign) in found {
                    let (start, end) = (packed / 65536, packed % 65536);
                    let children: SmallVec<[u32; 4]> = assign[..arity].iter().map(|o| o.unwrap().node).collect();
                    let key = ItemKey { i: i as u16, j: j as u16, k: start as u16, l: end as u16 };
                    self.add(key, Some(rid), &children)?;
                }
                Ok(())
            }
        }
    }
}

/// Matches `beta` against `y` from `pos`; each nonterminal takes one of its
/// child's output spans (first occurrence) or must repeat the same tokens.
fn match_beta(
    beta: &[Symbol],
    y: &[Symbol],
    pos: usize,
    options: &[&[OutItem]],
    assign: &mut [Option<OutItem>; MAX_ARITY],
    emit: &mut dyn FnMut(usize, &[Option<OutItem>; MAX_ARITY]),
) {
    let Some((first, rest)) = beta.split_first() else {
        emit(pos, assign);
        return;
    };
    if pos >= y.len() {
        return;
    }
    match first {
        Symbol::T(_) => {
            if y[pos] == *first {
                match_beta(rest, y, pos + 1, options, assign, emit);
            }
        }
        Symbol::Nt(idx) => {
            let slot = *idx as usize - 1;
            if let Some(item) = assign[slot] {
                let (k, l) = (item.k as usize, item.l as usize);
                let len = l - k;
                if pos + len <= y.len() && y[pos..pos + len] == y[k..l] {
                    match_beta(rest, y, pos + len, options, assign, emit);
                }
            } else {
                for item in options[slot] {
                    if item.k as usize == pos {
                        assign[slot] = Some(*item);
                        match_beta(rest, y, item.l as usize, options, assign, emit);
                    }
                }
                assign[slot] = None;
            }
        }
    }
}

/// Grammar preprocessed for repeated parsing.
pub struct Parser<'g> {
    grammar: &'g Grammar,
    index: RuleIndex,
    config: ParserConfig,
}

impl<'g> Parser<'g> {
    pub fn new(grammar: &'g Grammar) -> Parser<'g> {
        Parser::with_config(grammar, ParserConfig::default())
    }

    pub fn with_config(grammar: &'g Grammar, config: ParserConfig) -> Parser<'g> {
        Parser {
            grammar,
            index: RuleIndex::build(grammar.rules()),
            config,
        }
    }

    pub fn grammar(&self) -> &'g Grammar {
        self.grammar
    }

    fn view(&self) -> RuleView<'_> {
        RuleView {
            base: &self.index,
            excluded: &[],
            extra: None,
        }
    }

    fn chart<'a>(&self, view: &'a RuleView<'a>, x: &'a [Symbol], y: Option<&'a [Symbol]>, record: bool) -> Chart<'a> {
        let n = x.len();
        Chart {
            view,
            x,
            y,
            record,
            max_items: self.config.max_items,
            nodes: Vec::new(),
            edges: Vec::new(),
            ids: HashMap::new(),
            by_span: vec![Vec::new(); (n + 1) * (n + 1)],
        }
    }

    fn forest(&self, x: &[Symbol], y: Option<&[Symbol]>) -> Result<Option<Forest>> {
        if x.is_empty() || y.is_some_and(|y| y.is_empty()) {
            return Ok(None);
        }
        if x.len() >= u16::MAX as usize || y.is_some_and(|y| y.len() >= u16::MAX as usize) {
            return Err(Error::Capacity { limit: u16::MAX as usize });
        }
        let view = self.view();
        let mut chart = self.chart(&view, x, y, true);
        chart.run(false)?;
        Ok(Forest::from_chart(&chart))
    }

    /// All derivations of exactly this pair, or `None` when there are none.
    pub fn parse_pair(&self, pair: &ExamplePair) -> Result<Option<Forest>> {
        let x: Vec<Symbol> = pair.x.iter().map(|&t| Symbol::T(t)).collect();
        let y: Vec<Symbol> = pair.y.iter().map(|&t| Symbol::T(t)).collect();
        self.forest(&x, Some(&y))
    }

    /// All derivations whose input side yields `x`, whatever their output.
    pub fn parse_input(&self, x: &[Token]) -> Result<Option<Forest>> {
        let x: Vec<Symbol> = x.iter().map(|&t| Symbol::T(t)).collect();
        self.forest(&x, None)
    }

    /// Recognition only; stops as soon as the full item is found.
    pub fn can_derive(&self, pair: &ExamplePair) -> Result<bool> {
        let x: Vec<Symbol> = pair.x.iter().map(|&t| Symbol::T(t)).collect();
        let y: Vec<Symbol> = pair.y.iter().map(|&t| Symbol::T(t)).collect();
        self.recognize(&x, &y, &[], &[])
    }

    /// Bilingual recognition over symbol strings, with some grammar rules
    /// masked out and some extra rules available. Nonterminals in `x` and
    /// `y` are opaque leaves that link to each other.
    pub fn recognize(&self, x: &[Symbol], y: &[Symbol], excluded: &[RuleId], extra: &[&Rule]) -> Result<bool> {
        if x.is_empty() || y.is_empty() {
            return Ok(false);
        }
        let extra_index;
        let view = RuleView {
            base: &self.index,
            excluded,
            extra: if extra.is_empty() {
                None
            } else {
                extra_index = RuleIndex::build(extra.iter().copied());
                Some(&extra_index)
            },
        };
        let mut chart = self.chart(&view, x, Some(y), false);
        chart.run(true)?;
        Ok(chart.ids.contains_key(&chart.root_key()))
    }

    /// True iff `rule` equals a composition of grammar rules, not using the
    /// rules in `excluded` and possibly using `extra`.
    pub fn derives_rule(&self, rule: &Rule, excluded: &[RuleId], extra: &[&Rule]) -> Result<bool> {
        self.recognize(rule.alpha(), rule.beta(), excluded, extra)
    }
}

pub fn parse_pair(grammar: &Grammar, pair: &ExamplePair) -> Result<Option<Forest>> {
    Parser::new(grammar).parse_pair(pair)
}

pub fn parse_input(grammar: &Grammar, x: &[Token]) -> Result<Option<Forest>> {
    Parser::new(grammar).parse_input(x)
}

pub fn can_derive(grammar: &Grammar, pair: &ExamplePair) -> Result<bool> {
    Parser::new(grammar).can_derive(pair)
}
