use std::collections::HashMap;

use smallvec::SmallVec;

use super::Chart;
use crate::derivation::Derivation;
use crate::grammar::{Grammar, RuleId};

#[derive(Clone, Debug)]
pub struct ForestNode {
    pub input_span: (usize, usize),
    /// `None` for input-only parses.
    pub output_span: Option<(usize, usize)>,
    /// Alternative rule applications producing this item.
    pub edges: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ForestEdge {
    pub rule: RuleId,
    /// `children[i - 1]` is the node expanding `NT_i` of the rule.
    pub children: SmallVec<[usize; 4]>,
}

/// A packed chart of all derivations of one example. Nodes are stored in
/// topological order (children before parents); the root is the last node.
#[derive(Clone, Debug)]
pub struct Forest {
    nodes: Vec<ForestNode>,
    edges: Vec<ForestEdge>,
}

impl Forest {
    /// Keeps only items reachable from the full-span item.
    pub(super) fn from_chart(chart: &Chart<'_>) -> Option<Forest> {
        let root = *chart.ids.get(&chart.root_key())? as usize;
        let mut reachable = vec![false; chart.nodes.len()];
        reachable[root] = true;
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            for &e in &chart.nodes[n].edges {
                for &c in &chart.edges[e as usize].children {
                    if !reachable[c as usize] {
                        reachable[c as usize] = true;
                        stack.push(c as usize);
                    }
                }
            }
        }
        let mut remap = vec![usize::MAX; chart.nodes.len()];
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let pair = chart.y.is_some();
        for (old, raw) in chart.nodes.iter().enumerate() {
            if !reachable[old] {
                continue;
            }
            remap[old] = nodes.len();
            let mut node = ForestNode {
                input_span: (raw.key.i as usize, raw.key.j as usize),
                output_span: pair.then_some((raw.key.k as usize, raw.key.l as usize)),
                edges: Vec::with_capacity(raw.edges.len()),
            };
            for &e in &raw.edges {
                let raw_edge = &chart.edges[e as usize];
                node.edges.push(edges.len());
                edges.push(ForestEdge {
                    rule: raw_edge.rule as RuleId,
                    children: raw_edge.children.iter().map(|&c| remap[c as usize]).collect(),
                });
            }
            nodes.push(node);
        }
        // The root spans everything, so it is created last among reachable items.
        debug_assert_eq!(remap[root], nodes.len() - 1);
        Some(Forest { nodes, edges })
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[ForestNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[ForestEdge] {
        &self.edges
    }

    pub fn node(&self, id: usize) -> &ForestNode {
        &self.nodes[id]
    }

    pub fn edge(&self, id: usize) -> &ForestEdge {
        &self.edges[id]
    }

    /// Distinct rule ids appearing on any edge, ascending.
    pub fn rule_ids(&self) -> Vec<RuleId> {
        let mut ids: Vec<RuleId> = self.edges.iter().map(|e| e.rule).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Number of derivations, as a float since it can be exponential.
    pub fn count_derivations(&self) -> f64 {
        let mut counts = vec![0f64; self.nodes.len()];
        for (n, node) in self.nodes.iter().enumerate() {
            counts[n] = node
                .edges
                .iter()
                .map(|&e| self.edges[e].children.iter().map(|&c| counts[c]).product::<f64>())
                .sum();
        }
        counts[self.root()]
    }

    /// Unpacks up to `limit` derivations (all of them when the forest holds
    /// fewer). Meant for small forests.
    pub fn derivations(&self, grammar: &Grammar, limit: usize) -> Vec<Derivation> {
        let mut memo: HashMap<usize, Vec<Derivation>> = HashMap::new();
        for n in 0..self.nodes.len() {
            let mut out = Vec::new();
            for &e in &self.nodes[n].edges {
                let edge = &self.edges[e];
                let mut partial: Vec<Vec<Derivation>> = vec![Vec::new()];
                for &c in &edge.children {
                    let options = &memo[&c];
                    let mut next = Vec::new();
                    'outer: for p in &partial {
                        for o in options {
                            let mut v = p.clone();
                            v.push(o.clone());
                            next.push(v);
                            if next.len() >= limit {
                                break 'outer;
                            }
                        }
                    }
                    partial = next;
                }
                for children in partial {
                    if out.len() >= limit {
                        break;
                    }
                    out.push(Derivation {
                        rule: grammar.rule(edge.rule).clone(),
                        children,
                    });
                }
            }
            memo.insert(n, out);
        }
        memo.remove(&self.root()).unwrap_or_default()
    }
}
