//! Decomposing a rule into two rules that compose back into it.

use crate::rule::{compose_unbounded, validate_rule, Rule};
use crate::symbol::Symbol;

/// Above this many output-side placements of the inner rule, only the
/// all-occurrences placement is tried (otherwise the number of candidate
/// outer rules grows exponentially).
pub const MAX_EXACT_PLACEMENTS: usize = 6;

/// `{r3 | r2 ∘ r3 ⇒ r1 or r3 ∘ r2 ⇒ r1}`, each canonical, valid and with at
/// most `max_nts` nonterminals, sorted by [`Rule::canonical_cmp`].
pub fn unify(r1: &Rule, r2: &Rule, max_nts: usize) -> Vec<Rule> {
    unify_impl(r1, r2, max_nts, usize::MAX)
}

/// [`unify`] with output-side placement enumeration capped at
/// [`MAX_EXACT_PLACEMENTS`]; used by the induction search.
pub fn unify_bounded(r1: &Rule, r2: &Rule, max_nts: usize) -> Vec<Rule> {
    unify_impl(r1, r2, max_nts, MAX_EXACT_PLACEMENTS)
}

fn unify_impl(r1: &Rule, r2: &Rule, max_nts: usize, max_placements: usize) -> Vec<Rule> {
    let r1 = r1.canonical();
    let r2 = r2.canonical();
    let mut out = Vec::new();
    as_inner(&r1, &r2, max_nts, &mut out);
    as_outer(&r1, &r2, max_nts, max_placements, &mut out);
    out.sort_by(|a, b| a.canonical_cmp(b));
    out.dedup();
    out
}

fn keep(r3: Rule, max_nts: usize, out: &mut Vec<Rule>) {
    let r3 = r3.canonical();
    if validate_rule(&r3, max_nts, true).is_ok() {
        out.push(r3);
    }
}

/// Finds `r3` with `r2 ∘ r3 ⇒ r1`: some `NT_i` of `r2` covers a span of
/// `r1`, every other nonterminal of `r2` maps to a single one of `r1`.
fn as_inner(r1: &Rule, r2: &Rule, max_nts: usize, out: &mut Vec<Rule>) {
    for i in 1..=r2.arity() as u8 {
        let mut map = [None; 256];
        let mut span = None;
        match_alpha_outer(r2.alpha(), r1.alpha(), 0, i, &mut map, &mut span, &mut |map, span| {
            let (a, b) = span;
            let inner_alpha = &r1.alpha()[a..b];
            let mut bound: Option<(usize, usize)> = None;
            match_beta_outer(r2.beta(), r1.beta(), 0, i, map, &mut bound, &mut |bound| {
                let Some((c, d)) = bound else { return };
                let r3 = Rule::new(inner_alpha.to_vec(), r1.beta()[c..d].to_vec());
                if !output_links_ok(&r3) {
                    return;
                }
                if compose_unbounded(r2, &r3.canonical(), i).ok().as_ref() == Some(r1) {
                    keep(r3, max_nts, out);
                }
            });
        });
    }
}

/// Every output nonterminal of a candidate links into its input side.
fn output_links_ok(r: &Rule) -> bool {
    r.beta()
        .iter()
        .filter_map(Symbol::nt_index)
        .all(|i| r.alpha().contains(&Symbol::Nt(i)))
}

/// Matches the outer rule's input side against `text` from `pos`. `NT_hole`
/// takes a non-empty span; other indices take one nonterminal each.
#[allow(clippy::too_many_arguments)]
fn match_alpha_outer(
    pattern: &[Symbol],
    text: &[Symbol],
    pos: usize,
    hole: u8,
    map: &mut [Option<Symbol>; 256],
    span: &mut Option<(usize, usize)>,
    emit: &mut dyn FnMut(&[Option<Symbol>; 256], (usize, usize)),
) {
    let Some((first, rest)) = pattern.split_first() else {
        if pos == text.len() {
            emit(map, span.unwrap());
        }
        return;
    };
    if pos >= text.len() {
        return;
    }
    match first {
        Symbol::T(_) => {
            if text[pos] == *first {
                match_alpha_outer(rest, text, pos + 1, hole, map, span, emit);
            }
        }
        Symbol::Nt(j) if *j == hole => {
            for end in pos + 1..=text.len().saturating_sub(rest.len()) {
                *span = Some((pos, end));
                match_alpha_outer(rest, text, end, hole, map, span, emit);
            }
            *span = None;
        }
        Symbol::Nt(j) => {
            if text[pos].is_nt() {
                map[*j as usize] = Some(text[pos]);
                match_alpha_outer(rest, text, pos + 1, hole, map, span, emit);
                map[*j as usize] = None;
            }
        }
    }
}

/// Matches the outer rule's output side in full; the hole binds one
/// non-empty span and repeats must copy it.
fn match_beta_outer(
    pattern: &[Symbol],
    text: &[Symbol],
    pos: usize,
    hole: u8,
    map: &[Option<Symbol>; 256],
    bound: &mut Option<(usize, usize)>,
    emit: &mut dyn FnMut(Option<(usize, usize)>),
) {
    let Some((first, rest)) = pattern.split_first() else {
        if pos == text.len() {
            emit(*bound);
        }
        return;
    };
    if pos >= text.len() {
        return;
    }
    match first {
        Symbol::T(_) => {
            if text[pos] == *first {
                match_beta_outer(rest, text, pos + 1, hole, map, bound, emit);
            }
        }
        Symbol::Nt(j) if *j == hole => match *bound {
            Some((c, d)) => {
                let len = d - c;
                if pos + len <= text.len() && text[pos..pos + len] == text[c..d] {
                    match_beta_outer(rest, text, pos + len, hole, map, bound, emit);
                }
            }
            None => {
                for end in pos + 1..=text.len() {
                    *bound = Some((pos, end));
                    match_beta_outer(rest, text, end, hole, map, bound, emit);
                }
                *bound = None;
            }
        },
        Symbol::Nt(j) => {
            if Some(text[pos]) == map[*j as usize] {
                match_beta_outer(rest, text, pos + 1, hole, map, bound, emit);
            }
        }
    }
}

/// Finds `r3` with `r3 ∘ r2 ⇒ r1`: the input side of `r2` is a contiguous
/// span of `r1`'s, replaced by a fresh nonterminal, and some non-empty set
/// of non-overlapping copies of `r2`'s output side is replaced likewise.
fn as_outer(r1: &Rule, r2: &Rule, max_nts: usize, max_placements: usize, out: &mut Vec<Rule>) {
    let (a1, b1) = (r1.alpha(), r1.beta());
    let a2 = r2.alpha();
    if a2.len() > a1.len() {
        return;
    }
    const FRESH: Symbol = Symbol::Nt(255);
    for start in 0..=a1.len() - a2.len() {
        // r2's nonterminals must land on r1 nonterminals one-to-one.
        let mut map = [None; 256];
        let ok = a2.iter().zip(&a1[start..]).all(|(p, t)| match p {
            Symbol::T(_) => p == t,
            Symbol::Nt(j) => {
                if t.is_nt() {
                    map[*j as usize] = Some(*t);
                    true
                } else {
                    false
                }
            }
        });
        if !ok {
            continue;
        }
        let image: Vec<Symbol> = r2
            .beta()
            .iter()
            .map(|s| match s {
                Symbol::Nt(j) => map[*j as usize].unwrap(),
                t => *t,
            })
            .collect();
        let moved: Vec<Symbol> = a1[start..start + a2.len()].iter().filter(|s| s.is_nt()).copied().collect();
        let mut alpha = a1[..start].to_vec();
        alpha.push(FRESH);
        alpha.extend_from_slice(&a1[start + a2.len()..]);

        let positions: Vec<usize> = (0..=b1.len().saturating_sub(image.len()))
            .filter(|&p| p + image.len() <= b1.len() && b1[p..p + image.len()] == image[..])
            .collect();
        if positions.is_empty() {
            continue;
        }
        let mut betas = Vec::new();
        if positions.len() <= max_placements {
            let mut cur = Vec::new();
            placements(b1, &image, 0, false, &mut cur, &mut betas);
        } else {
            let mut beta = Vec::new();
            let mut p = 0;
            while p < b1.len() {
                if p + image.len() <= b1.len() && b1[p..p + image.len()] == image[..] {
                    beta.push(FRESH);
                    p += image.len();
                } else {
                    beta.push(b1[p]);
                    p += 1;
                }
            }
            betas.push(beta);
        }
        for beta in betas {
            // Nonterminals moved into r2 must not remain outside it.
            if beta.iter().any(|s| moved.contains(s)) {
                continue;
            }
            let r3 = Rule::new(alpha.clone(), beta);
            let canon = r3.canonical();
            let Some(idx) = canon_index_of_fresh(&alpha) else { continue };
            if compose_unbounded(&canon, r2, idx).ok().as_ref() == Some(r1) {
                keep(r3, max_nts, out);
            }
        }
    }
}

/// Index the fresh nonterminal receives after canonical renumbering.
fn canon_index_of_fresh(alpha: &[Symbol]) -> Option<u8> {
    let mut n = 0u8;
    for s in alpha {
        if let Symbol::Nt(i) = s {
            n += 1;
            if *i == 255 {
                return Some(n);
            }
        }
    }
    None
}

/// All ways to replace a non-empty set of non-overlapping copies of `image`
/// in `text` with the fresh nonterminal.
fn placements(text: &[Symbol], image: &[Symbol], pos: usize, used: bool, cur: &mut Vec<Symbol>, out: &mut Vec<Vec<Symbol>>) {
    if pos == text.len() {
        if used {
            out.push(cur.clone());
        }
        return;
    }
    if pos + image.len() <= text.len() && text[pos..pos + image.len()] == *image {
        cur.push(Symbol::Nt(255));
        placements(text, image, pos + image.len(), true, cur, out);
        cur.pop();
    }
    cur.push(text[pos]);
    placements(text, image, pos + 1, used, cur, out);
    cur.pop();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Rule {
        s.parse().unwrap()
    }

    fn set(rules: &[Rule]) -> Vec<String> {
        rules.iter().map(|r| r.to_string()).collect()
    }

    #[test]
    fn abstracts_primitive_from_conjunction() {
        let got = unify(&r("jump and NT_1 ### JUMP NT_1"), &r("NT_1 and NT_2 ### NT_1 NT_2"), 4);
        assert!(got.contains(&r("jump ### JUMP")), "{:?}", set(&got));
        let got = unify(&r("jump and NT_1 ### JUMP NT_1"), &r("jump ### JUMP"), 4);
        assert!(got.contains(&r("NT_1 and NT_2 ### NT_1 NT_2")), "{:?}", set(&got));
    }

    #[test]
    fn identity_from_equal_rules() {
        let got = unify(&r("jump ### JUMP"), &r("jump ### JUMP"), 4);
        assert_eq!(set(&got), ["NT_1 ### NT_1"]);
    }

    #[test]
    fn repeated_copies_give_every_placement() {
        let got = unify(&r("jump twice ### JUMP JUMP"), &r("jump ### JUMP"), 4);
        assert_eq!(
            set(&got),
            ["NT_1 twice ### NT_1 NT_1", "NT_1 twice ### NT_1 JUMP", "NT_1 twice ### JUMP NT_1"]
        );
        let bounded = unify_bounded(&r("jump twice ### JUMP JUMP JUMP JUMP JUMP JUMP JUMP"), &r("jump ### JUMP"), 4);
        assert_eq!(set(&bounded), ["NT_1 twice ### NT_1 NT_1 NT_1 NT_1 NT_1 NT_1 NT_1"]);
    }

    #[test]
    fn every_result_composes_back() {
        let r1 = r("NT_1 after jump twice ### JUMP JUMP NT_1");
        for r2 in [r("NT_1 twice ### NT_1 NT_1"), r("jump ### JUMP"), r("NT_1 after NT_2 ### NT_2 NT_1")] {
            for r3 in unify(&r1, &r2, 4) {
                let ok = (1..=r2.arity() as u8).any(|i| compose_unbounded(&r2, &r3, i).ok().as_ref() == Some(&r1))
                    || (1..=r3.arity() as u8).any(|i| compose_unbounded(&r3, &r2, i).ok().as_ref() == Some(&r1));
                assert!(ok, "{r3}");
            }
        }
    }

    #[test]
    fn respects_limit() {
        let r1 = r("a NT_1 b NT_2 ### A NT_1 NT_2");
        assert!(unify(&r1, &r("a ### A"), 2).is_empty());
        assert_eq!(set(&unify(&r1, &r("a ### A"), 3)), ["NT_1 NT_2 b NT_3 ### NT_1 NT_2 NT_3"]);
    }
}
