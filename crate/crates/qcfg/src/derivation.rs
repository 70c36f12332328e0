use std::fmt;

use crate::corpus::ExamplePair;
use crate::error::{Error, Result};
use crate::rule::Rule;
use crate::symbol::{Symbol, Token};

/// A tree of rule applications. `children[i - 1]` expands `NT_i` of `rule`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Derivation {
    pub rule: Rule,
    pub children: Vec<Derivation>,
}

impl Derivation {
    pub fn leaf(rule: Rule) -> Derivation {
        Derivation {
            rule,
            children: Vec::new(),
        }
    }

    /// Checks that every rule gets exactly one child per input-side index.
    pub fn new(rule: Rule, children: Vec<Derivation>) -> Result<Derivation> {
        if rule.arity() != children.len() {
            return Err(Error::Precondition(format!(
                "rule `{rule}` takes {} children, got {}",
                rule.arity(),
                children.len()
            )));
        }
        Ok(Derivation { rule, children })
    }

    /// Height in rule applications; a leaf has depth 1.
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(Derivation::depth).max().unwrap_or(0)
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Derivation::size).sum::<usize>()
    }

    /// Pre-order walk yielding `(rule, parent_rule, index)` per application;
    /// the root has no parent.
    pub fn applications(&self) -> Vec<(&Rule, Option<(&Rule, u8)>)> {
        let mut out = Vec::new();
        fn walk<'a>(d: &'a Derivation, parent: Option<(&'a Rule, u8)>, out: &mut Vec<(&'a Rule, Option<(&'a Rule, u8)>)>) {
            out.push((&d.rule, parent));
            for (n, c) in d.children.iter().enumerate() {
                walk(c, Some((&d.rule, (n + 1) as u8)), out);
            }
        }
        walk(self, None, &mut out);
        out
    }

    fn side(&self, input: bool) -> Vec<Token> {
        let mut out = Vec::new();
        self.write_side(input, &mut out);
        out
    }

    fn write_side(&self, input: bool, out: &mut Vec<Token>) {
        let side = if input { self.rule.alpha() } else { self.rule.beta() };
        for s in side {
            match s {
                Symbol::T(t) => out.push(*t),
                Symbol::Nt(i) => self.children[*i as usize - 1].write_side(input, out),
            }
        }
    }

    pub fn input_yield(&self) -> Vec<Token> {
        self.side(true)
    }

    pub fn output_yield(&self) -> Vec<Token> {
        self.side(false)
    }

    /// The `(x, y)` pair this derivation generates.
    pub fn derivation_yield(&self) -> ExamplePair {
        ExamplePair {
            x: self.input_yield(),
            y: self.output_yield(),
        }
    }
}

impl fmt::Display for Derivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}", self.rule)?;
        for c in &self.children {
            write!(f, " {c}")?;
        }
        write!(f, "]")
    }
}

/// Folds a derivation into the single rule it is equivalent to.
/// Leaves of the result are the unexpanded positions, so a full derivation
/// folds to a rule without nonterminals.
pub fn fold_to_rule(d: &Derivation) -> Rule {
    let mut rule = d.rule.clone();
    // Substitute right-to-left so earlier indices stay valid.
    for (n, c) in d.children.iter().enumerate().rev() {
        let inner = fold_to_rule(c);
        rule = relabel_compose(&rule, &inner, (n + 1) as u8);
    }
    rule
}

fn relabel_compose(outer: &Rule, inner: &Rule, index: u8) -> Rule {
    let sub = |side: &[Symbol], rep: &[Symbol]| {
        let mut out = Vec::new();
        for s in side {
            if *s == Symbol::Nt(index) {
                out.extend_from_slice(rep);
            } else {
                out.push(*s);
            }
        }
        out
    };
    Rule::new(sub(outer.alpha(), inner.alpha()), sub(outer.beta(), inner.beta()))
}
