//! QCFG rules `NT -> <alpha, beta>` and rule composition.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::symbol::{parse_symbols, symbols_to_string, Symbol};

/// Separator between the input and output side in the grammar text format.
pub const SIDE_SEPARATOR: &str = "###";

/// A synchronous production over the single nonterminal `NT`.
///
/// Construction does not enforce the structural invariants; use
/// [`validate_rule`] (a [`crate::Grammar`] does this on insertion).
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Rule {
    alpha: Vec<Symbol>,
    beta: Vec<Symbol>,
}

impl Rule {
    pub fn new(alpha: Vec<Symbol>, beta: Vec<Symbol>) -> Rule {
        Rule { alpha, beta }
    }

    pub fn alpha(&self) -> &[Symbol] {
        &self.alpha
    }

    pub fn beta(&self) -> &[Symbol] {
        &self.beta
    }

    /// Number of distinct nonterminal indices on the input side.
    pub fn arity(&self) -> usize {
        self.alpha.iter().filter(|s| s.is_nt()).count()
    }

    pub fn nt_count(&self) -> usize {
        self.alpha.iter().chain(&self.beta).filter(|s| s.is_nt()).count()
    }

    pub fn terminal_count(&self) -> usize {
        self.alpha.len() + self.beta.len() - self.nt_count()
    }

    /// Input side is exactly one nonterminal (`NT -> <NT_1, ...>`).
    pub fn has_bare_input(&self) -> bool {
        self.alpha.len() == 1 && self.alpha[0].is_nt()
    }

    pub fn is_identity(&self) -> bool {
        self.has_bare_input() && self.beta.len() == 1 && self.beta[0] == self.alpha[0]
    }

    /// Position of `NT_index` in alpha.
    pub fn alpha_position(&self, index: u8) -> Option<usize> {
        self.alpha.iter().position(|s| *s == Symbol::Nt(index))
    }

    /// Renumbers nonterminals 1..k by first occurrence on the input side.
    pub fn canonical(&self) -> Rule {
        let mut map = [0u8; 256];
        let mut next = 0u8;
        for s in &self.alpha {
            if let Symbol::Nt(i) = s {
                if map[*i as usize] == 0 {
                    next += 1;
                    map[*i as usize] = next;
                }
            }
        }
        let remap = |s: &Symbol| match s {
            Symbol::Nt(i) if map[*i as usize] != 0 => Symbol::Nt(map[*i as usize]),
            other => *other,
        };
        Rule {
            alpha: self.alpha.iter().map(remap).collect(),
            beta: self.beta.iter().map(remap).collect(),
        }
    }

    pub fn is_canonical(&self) -> bool {
        let mut expected = 1u8;
        for s in &self.alpha {
            if let Symbol::Nt(i) = s {
                if *i != expected {
                    return false;
                }
                expected += 1;
            }
        }
        true
    }

    /// Total order: symbol by symbol, nonterminals (by index) before
    /// terminals (by text), then by length.
    pub fn canonical_cmp(&self, other: &Rule) -> Ordering {
        cmp_symbols(&self.alpha, &other.alpha).then_with(|| cmp_symbols(&self.beta, &other.beta))
    }
}

fn cmp_symbols(a: &[Symbol], b: &[Symbol]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.text_cmp(y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {SIDE_SEPARATOR} {}",
            symbols_to_string(&self.alpha),
            symbols_to_string(&self.beta)
        )
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Rule> {
        let (a, b) = s.split_once(SIDE_SEPARATOR).ok_or_else(|| Error::InvalidRule {
            rule: s.to_string(),
            reason: format!("missing `{SIDE_SEPARATOR}` separator"),
        })?;
        Ok(Rule::new(parse_symbols(a)?, parse_symbols(b)?))
    }
}

/// Why a rule fails the structural invariants.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EmptyInput,
    EmptyOutput,
    RepeatedInputIndex(u8),
    NonContiguousIndices,
    UnlinkedOutputIndex(u8),
    DroppedIndex(u8),
    RepeatedOutputIndex(u8),
    TooManyNonterminals { found: usize, max: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyInput => write!(f, "input side is empty"),
            Violation::EmptyOutput => write!(f, "output side is empty"),
            Violation::RepeatedInputIndex(i) => write!(f, "NT_{i} repeats on the input side"),
            Violation::NonContiguousIndices => write!(f, "input indices are not 1..k"),
            Violation::UnlinkedOutputIndex(i) => {
                write!(f, "NT_{i} on the output side has no input counterpart")
            }
            Violation::DroppedIndex(i) => write!(f, "NT_{i} never occurs on the output side"),
            Violation::RepeatedOutputIndex(i) => {
                write!(f, "NT_{i} repeats on the output side but repetition is disabled")
            }
            Violation::TooManyNonterminals { found, max } => {
                write!(f, "{found} nonterminals exceed the limit of {max}")
            }
        }
    }
}

/// Checks the rule invariants; with `allow_repeat == false` an output side
/// may mention each index only once.
pub fn validate_rule(rule: &Rule, max_nts: usize, allow_repeat: bool) -> Result<(), Violation> {
    if rule.alpha.is_empty() {
        return Err(Violation::EmptyInput);
    }
    if rule.beta.is_empty() {
        return Err(Violation::EmptyOutput);
    }
    let mut seen = [false; 256];
    let mut k = 0usize;
    for s in &rule.alpha {
        if let Symbol::Nt(i) = s {
            if seen[*i as usize] {
                return Err(Violation::RepeatedInputIndex(*i));
            }
            seen[*i as usize] = true;
            k += 1;
        }
    }
    if (1..=k).any(|i| !seen[i]) {
        return Err(Violation::NonContiguousIndices);
    }
    let mut out_count = [0u16; 256];
    for s in &rule.beta {
        if let Symbol::Nt(i) = s {
            if !seen[*i as usize] {
                return Err(Violation::UnlinkedOutputIndex(*i));
            }
            out_count[*i as usize] += 1;
        }
    }
    for i in 1..=k {
        if out_count[i] == 0 {
            return Err(Violation::DroppedIndex(i as u8));
        }
        if !allow_repeat && out_count[i] > 1 {
            return Err(Violation::RepeatedOutputIndex(i as u8));
        }
    }
    if k > max_nts {
        return Err(Violation::TooManyNonterminals { found: k, max: max_nts });
    }
    Ok(())
}

/// Substitutes `inner` for `NT_index` of `outer` on both sides and renumbers
/// the result canonically. No nonterminal limit is applied.
pub fn compose_unbounded(outer: &Rule, inner: &Rule, index: u8) -> Result<Rule> {
    if outer.alpha_position(index).is_none() {
        return Err(Error::BadIndex(index));
    }
    // Outer indices keep their values; inner indices are shifted above 128
    // so the two never collide before renumbering.
    const SHIFT: u8 = 128;
    let shift = |s: &Symbol| match s {
        Symbol::Nt(i) => Symbol::Nt(i + SHIFT),
        t => *t,
    };
    let substitute = |side: &[Symbol], replacement: &[Symbol]| {
        let mut out = Vec::with_capacity(side.len() + replacement.len());
        for s in side {
            if *s == Symbol::Nt(index) {
                out.extend(replacement.iter().map(shift));
            } else {
                out.push(*s);
            }
        }
        out
    };
    let alpha = substitute(&outer.alpha, &inner.alpha);
    let beta = substitute(&outer.beta, &inner.beta);
    Ok(Rule { alpha, beta }.canonical())
}

/// `compose_unbounded` with the nonterminal limit of the grammar.
pub fn compose(outer: &Rule, inner: &Rule, index: u8, max_nts: usize) -> Result<Rule> {
    let r = compose_unbounded(outer, inner, index)?;
    let k = r.arity();
    if k > max_nts {
        return Err(Error::CompositionOverflow { needed: k, max: max_nts });
    }
    Ok(r)
}
