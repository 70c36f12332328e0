//! Monolingual output CFGs and recognition against them.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::symbol::{Symbol, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OutputSymbol {
    Cat(usize),
    T(Token),
}

/// An ordinary CFG over output tokens. Empty right-hand sides are allowed.
#[derive(Clone, Debug)]
pub struct OutputCfg {
    names: Vec<String>,
    productions: Vec<(usize, Vec<OutputSymbol>)>,
    start: usize,
}

/// One position of a string to recognize: a token, or a slot that stands
/// for a single constituent of any of the given categories.
#[derive(Clone, Debug)]
pub(crate) enum Cell {
    Tok(Token),
    Slot(Vec<bool>),
}

impl OutputCfg {
    /// Builds a CFG from named productions; every category used on a
    /// right-hand side (and the start) needs at least one production.
    pub fn new(productions: Vec<(String, Vec<RawSymbol>)>, start: &str) -> Result<OutputCfg> {
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut names = Vec::new();
        let mut intern = |name: &str, names: &mut Vec<String>| -> usize {
            *ids.entry(name.to_string()).or_insert_with(|| {
                names.push(name.to_string());
                names.len() - 1
            })
        };
        let mut out = Vec::new();
        let mut has_production = Vec::new();
        for (lhs, rhs) in &productions {
            let l = intern(lhs, &mut names);
            let mut syms = Vec::new();
            for s in rhs {
                syms.push(match s {
                    RawSymbol::Cat(c) => OutputSymbol::Cat(intern(c, &mut names)),
                    RawSymbol::T(t) => OutputSymbol::T(*t),
                });
            }
            has_production.resize(names.len(), false);
            has_production[l] = true;
            out.push((l, syms));
        }
        let start = intern(start, &mut names);
        has_production.resize(names.len(), false);
        if let Some(missing) = (0..names.len()).find(|&c| !has_production[c]) {
            return Err(Error::Precondition(format!(
                "output CFG category `{}` has no production",
                names[missing]
            )));
        }
        Ok(OutputCfg {
            names,
            productions: out,
            start,
        })
    }

    /// Parses the text format, naming `origin` in error messages.
    pub fn parse_named(text: &str, origin: &str) -> Result<OutputCfg> {
        let err = |line: usize, message: String| Error::Format {
            path: origin.to_string(),
            line,
            message,
        };
        let mut productions = Vec::new();
        let mut start = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("@start") {
                let name = rest.trim();
                if !is_category(name) {
                    return Err(err(n + 1, format!("bad start category {name:?}")));
                }
                start = Some(name.to_string());
                continue;
            }
            let (lhs, rhs) = line
                .split_once("->")
                .ok_or_else(|| err(n + 1, "expected `LHS -> symbols`".into()))?;
            let lhs = lhs.trim();
            if !is_category(lhs) {
                return Err(err(n + 1, format!("bad category {lhs:?}")));
            }
            for alt in rhs.split(" | ") {
                let mut syms = Vec::new();
                for word in alt.split_whitespace() {
                    let sym = if let Some(q) = word.strip_prefix('\'').and_then(|w| w.strip_suffix('\'')) {
                        if q.is_empty() {
                            return Err(err(n + 1, "empty quoted terminal".into()));
                        }
                        RawSymbol::T(Token::new(q).map_err(|e| err(n + 1, e.to_string()))?)
                    } else if is_category(word) {
                        RawSymbol::Cat(word.to_string())
                    } else {
                        return Err(err(n + 1, format!("bad symbol {word:?}; quote terminals as 'tok'")));
                    };
                    syms.push(sym);
                }
                productions.push((lhs.to_string(), syms));
            }
        }
        let start = match start {
            Some(s) => s,
            None => productions
                .first()
                .map(|(l, _)| l.clone())
                .ok_or_else(|| err(0, "no productions".into()))?,
        };
        OutputCfg::new(productions, &start).map_err(|e| err(0, e.to_string()))
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn num_categories(&self) -> usize {
        self.names.len()
    }

    pub fn category_name(&self, c: usize) -> &str {
        &self.names[c]
    }

    pub fn category(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn productions(&self) -> &[(usize, Vec<OutputSymbol>)] {
        &self.productions
    }

    pub fn accepts(&self, y: &[Token]) -> bool {
        let cells: Vec<Cell> = y.iter().map(|&t| Cell::Tok(t)).collect();
        self.chart(&cells)[0][cells.len()][self.start]
    }

    /// Categories deriving the whole cell string.
    pub(crate) fn categories_of(&self, cells: &[Cell]) -> Vec<bool> {
        self.chart(cells)[0][cells.len()].clone()
    }

    /// `table[i][j][c]`: category `c` derives `cells[i..j]`. Spans are
    /// filled right-to-left by start and by increasing end, iterating each
    /// cell to a fixpoint so unary and empty productions are handled.
    fn chart(&self, cells: &[Cell]) -> Vec<Vec<Vec<bool>>> {
        let n = cells.len();
        let nc = self.names.len();
        let mut table = vec![vec![vec![false; nc]; n + 1]; n + 1];
        for i in (0..=n).rev() {
            for j in i..=n {
                if j == i + 1 {
                    if let Cell::Slot(allowed) = &cells[i] {
                        table[i][j].clone_from(allowed);
                    }
                }
                loop {
                    let mut changed = false;
                    for (lhs, rhs) in &self.productions {
                        if table[i][j][*lhs] {
                            continue;
                        }
                        if self.matches(rhs, cells, &table, i, j) {
                            table[i][j][*lhs] = true;
                            changed = true;
                        }
                    }
                    if !changed {
                        break;
                    }
                }
            }
        }
        table
    }

    fn matches(&self, rhs: &[OutputSymbol], cells: &[Cell], table: &[Vec<Vec<bool>>], i: usize, j: usize) -> bool {
        let width = j - i + 1;
        let mut reach = vec![false; width];
        reach[0] = true;
        for sym in rhs {
            let mut next = vec![false; width];
            for p in (0..width).filter(|&p| reach[p]) {
                let at = i + p;
                match sym {
                    OutputSymbol::T(t) => {
                        if at < j && matches!(cells[at], Cell::Tok(u) if u == *t) {
                            next[p + 1] = true;
                        }
                    }
                    OutputSymbol::Cat(c) => {
                        for q in at..=j {
                            if table[at][q][*c] {
                                next[q - i] = true;
                            }
                        }
                    }
                }
            }
            reach = next;
        }
        reach[width - 1]
    }
}

fn is_category(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-')
        && !s.starts_with('\'')
}

/// Right-hand-side symbol before category names are resolved.
#[derive(Clone, Debug)]
pub enum RawSymbol {
    Cat(String),
    T(Token),
}

impl FromStr for OutputCfg {
    type Err = Error;

    fn from_str(s: &str) -> Result<OutputCfg> {
        OutputCfg::parse_named(s, "<cfg>")
    }
}

impl fmt::Display for OutputCfg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "@start {}", self.names[self.start])?;
        for (lhs, rhs) in &self.productions {
            write!(f, "{} ->", self.names[*lhs])?;
            for s in rhs {
                match s {
                    OutputSymbol::Cat(c) => write!(f, " {}", self.names[*c])?,
                    OutputSymbol::T(t) => write!(f, " '{t}'")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn cfg_accepts(cfg: &OutputCfg, y: &[Token]) -> bool {
    cfg.accepts(y)
}

/// Whether some assignment of categories to the nonterminal occurrences of
/// `beta` lets some category derive it. With `consistent`, occurrences
/// sharing an index must take the same category.
pub fn rule_output_valid(cfg: &OutputCfg, beta: &[Symbol], consistent: bool) -> bool {
    let nc = cfg.num_categories();
    let all = vec![true; nc];
    if !consistent {
        let cells = beta_cells(beta, |_| all.clone());
        return cfg.categories_of(&cells).iter().any(|&b| b);
    }
    let mut indices: Vec<u8> = beta.iter().filter_map(Symbol::nt_index).collect();
    indices.sort_unstable();
    indices.dedup();
    // Try every joint assignment; rules have few nonterminals.
    let mut assign = vec![0usize; indices.len()];
    loop {
        let cells = beta_cells(beta, |i| {
            let slot = indices.iter().position(|&x| x == i).unwrap();
            let mut v = vec![false; nc];
            v[assign[slot]] = true;
            v
        });
        if cfg.categories_of(&cells).iter().any(|&b| b) {
            return true;
        }
        let mut k = 0;
        loop {
            if k == assign.len() {
                return false;
            }
            assign[k] += 1;
            if assign[k] < nc {
                break;
            }
            assign[k] = 0;
            k += 1;
        }
    }
}

pub(crate) fn beta_cells(beta: &[Symbol], mut slot: impl FnMut(u8) -> Vec<bool>) -> Vec<Cell> {
    beta.iter()
        .map(|s| match s {
            Symbol::T(t) => Cell::Tok(*t),
            Symbol::Nt(i) => Cell::Slot(slot(*i)),
        })
        .collect()
}
