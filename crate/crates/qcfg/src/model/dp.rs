//! Dynamic programs over a forest whose items are split by the context
//! they are expanded from, since a node's probability depends on it.

use std::collections::HashMap;

use super::{log_sum_exp, Contexts, Tables};
use crate::chart::Forest;
use crate::derivation::Derivation;
use crate::grammar::{Grammar, RuleId};

/// A forest in `(node, context)` slots, children before parents.
#[derive(Clone, Debug)]
pub struct CompiledForest {
    /// Context of each slot.
    slot_ctx: Vec<usize>,
    /// Range into `edges` for each slot.
    slot_edges: Vec<(usize, usize)>,
    /// `(rule, first child, child count)` into `children`.
    edges: Vec<(RuleId, usize, usize)>,
    children: Vec<usize>,
    rule_ids: Vec<RuleId>,
}

impl CompiledForest {
    pub fn new(forest: &Forest, grammar: &Grammar, contexts: &Contexts) -> CompiledForest {
        let nodes = forest.nodes();
        // Contexts each node is expanded in; the root only at ROOT.
        let mut node_ctx: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        node_ctx[forest.root()].push(Contexts::ROOT);
        for e in forest.edges() {
            for (i, &c) in e.children.iter().enumerate() {
                node_ctx[c].push(contexts.child(e.rule, (i + 1) as u8));
            }
        }
        let mut slot_of: HashMap<(usize, usize), usize> = HashMap::new();
        let mut slot_node = Vec::new();
        let mut slot_ctx = Vec::new();
        for (n, ctxs) in node_ctx.iter_mut().enumerate() {
            ctxs.sort_unstable();
            ctxs.dedup();
            for &c in ctxs.iter() {
                slot_of.insert((n, c), slot_ctx.len());
                slot_node.push(n);
                slot_ctx.push(c);
            }
        }
        let mut slot_edges = Vec::with_capacity(slot_ctx.len());
        let mut edges = Vec::new();
        let mut children = Vec::new();
        for &n in &slot_node {
            let start = edges.len();
            for &e in &nodes[n].edges {
                let edge = forest.edge(e);
                let first = children.len();
                for (i, &c) in edge.children.iter().enumerate() {
                    children.push(slot_of[&(c, contexts.child(edge.rule, (i + 1) as u8))]);
                }
                edges.push((edge.rule, first, edge.children.len()));
            }
            slot_edges.push((start, edges.len()));
        }
        debug_assert!(grammar.len() >= forest.rule_ids().len());
        CompiledForest {
            slot_ctx,
            slot_edges,
            edges,
            children,
            rule_ids: forest.rule_ids(),
        }
    }

    /// Distinct rules used anywhere in the forest.
    pub fn rule_ids(&self) -> &[RuleId] {
        &self.rule_ids
    }

    fn root(&self) -> usize {
        self.slot_ctx.len() - 1
    }

    fn edge_score(&self, tables: &Tables, ctx: usize, e: usize, values: &[f64]) -> f64 {
        let (rule, first, count) = self.edges[e];
        tables.expand(ctx, rule) + self.children[first..first + count].iter().map(|&c| values[c]).sum::<f64>()
    }

    /// Log inside score of every slot; returns the root's and the table.
    pub(crate) fn inside(&self, tables: &Tables) -> (f64, Vec<f64>) {
        let mut inside = vec![f64::NEG_INFINITY; self.slot_ctx.len()];
        for s in 0..self.slot_ctx.len() {
            let (a, b) = self.slot_edges[s];
            let ctx = self.slot_ctx[s];
            inside[s] = log_sum_exp((a..b).map(|e| self.edge_score(tables, ctx, e, &inside)));
        }
        (inside[self.root()], inside)
    }

    /// Adds `d ln Z / d ln p(r | c)` for every `(c, r)` used to `out`,
    /// returning `ln Z`. These are the expected rule-use counts.
    pub(crate) fn expected_counts(&self, tables: &Tables, out: &mut Vec<(usize, RuleId, f64)>) -> f64 {
        let (z, inside) = self.inside(tables);
        if z == f64::NEG_INFINITY {
            return z;
        }
        let mut outer = vec![0.0; inside.len()];
        outer[self.root()] = 1.0;
        for s in (0..inside.len()).rev() {
            let g = outer[s];
            if g == 0.0 {
                continue;
            }
            let (a, b) = self.slot_edges[s];
            let ctx = self.slot_ctx[s];
            for e in a..b {
                let w = g * (self.edge_score(tables, ctx, e, &inside) - inside[s]).exp();
                if w == 0.0 {
                    continue;
                }
                let (rule, first, count) = self.edges[e];
                out.push((ctx, rule, w));
                for &c in &self.children[first..first + count] {
                    outer[c] += w;
                }
            }
        }
        z
    }

    /// Max-product version of [`inside`](Self::inside), unpacked into the
    /// best derivation. Ties go to the earliest edge.
    pub(crate) fn viterbi(&self, tables: &Tables, grammar: &Grammar) -> (f64, Derivation) {
        let mut best = vec![f64::NEG_INFINITY; self.slot_ctx.len()];
        let mut arg = vec![usize::MAX; self.slot_ctx.len()];
        for s in 0..self.slot_ctx.len() {
            let (a, b) = self.slot_edges[s];
            let ctx = self.slot_ctx[s];
            for e in a..b {
                let v = self.edge_score(tables, ctx, e, &best);
                if v > best[s] || arg[s] == usize::MAX {
                    best[s] = v;
                    arg[s] = e;
                }
            }
        }
        fn build(f: &CompiledForest, arg: &[usize], grammar: &Grammar, s: usize) -> Derivation {
            let (rule, first, count) = f.edges[arg[s]];
            Derivation {
                rule: grammar.rule(rule).clone(),
                children: f.children[first..first + count].iter().map(|&c| build(f, arg, grammar, c)).collect(),
            }
        }
        (best[self.root()], build(self, &arg, grammar, self.root()))
    }
}
