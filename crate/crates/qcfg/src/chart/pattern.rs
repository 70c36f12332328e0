//! Matching of rule sides against token strings with nonterminals as gaps.

use crate::error::{Error, Result};
use crate::symbol::{Symbol, Token};

/// True iff some substitution of each nonterminal in `alpha` by a non-empty
/// token sequence makes `alpha` a contiguous substring of `s`.
///
/// Input sides never repeat an index, so a repeated index is an error.
pub fn occurs_in(alpha: &[Symbol], s: &[Token]) -> Result<bool> {
    if alpha.is_empty() {
        return Err(Error::Precondition("pattern must be non-empty".into()));
    }
    if has_repeated_index(alpha) {
        return Err(Error::Precondition(
            "input-side patterns cannot repeat a nonterminal index".into(),
        ));
    }
    let text: Vec<Symbol> = s.iter().map(|&t| Symbol::T(t)).collect();
    Ok(gapped_occurs(alpha, &text))
}

pub(crate) fn has_repeated_index(pattern: &[Symbol]) -> bool {
    let mut seen = [false; 256];
    for s in pattern {
        if let Symbol::Nt(i) = s {
            if seen[*i as usize] {
                return true;
            }
            seen[*i as usize] = true;
        }
    }
    false
}

/// General occurrence test over symbol strings. Pattern nonterminals match
/// non-empty runs of text symbols; text nonterminals are opaque symbols.
/// Repeated pattern indices must bind to identical runs.
pub fn pattern_occurs(pattern: &[Symbol], text: &[Symbol]) -> bool {
    if pattern.is_empty() {
        return true;
    }
    if has_repeated_index(pattern) {
        bound_occurs(pattern, text)
    } else {
        gapped_occurs(pattern, text)
    }
}

/// Leftmost greedy placement of the literal chunks; optimal because gaps
/// only impose minimum lengths.
fn gapped_occurs(pattern: &[Symbol], text: &[Symbol]) -> bool {
    let n = text.len();
    let mut pos = 0usize;
    let mut p = 0usize;
    // Leading gap: the chunk can start anywhere after `gap` symbols.
    while p < pattern.len() {
        let mut gap = 0usize;
        while p < pattern.len() && pattern[p].is_nt() {
            gap += 1;
            p += 1;
        }
        pos += gap;
        if p == pattern.len() {
            return pos <= n;
        }
        let start = p;
        while p < pattern.len() && !pattern[p].is_nt() {
            p += 1;
        }
        let chunk = &pattern[start..p];
        match find_from(text, chunk, pos) {
            Some(at) => pos = at + chunk.len(),
            None => return false,
        }
    }
    pos <= n
}

fn find_from(text: &[Symbol], chunk: &[Symbol], from: usize) -> Option<usize> {
    if chunk.len() > text.len() {
        return None;
    }
    (from..=text.len() - chunk.len()).find(|&i| text[i..i + chunk.len()] == *chunk)
}

fn bound_occurs(pattern: &[Symbol], text: &[Symbol]) -> bool {
    let mut binding: [Option<(usize, usize)>; 256] = [None; 256];
    (0..text.len()).any(|start| bind_from(pattern, text, start, &mut binding))
}

fn bind_from(pattern: &[Symbol], text: &[Symbol], pos: usize, binding: &mut [Option<(usize, usize)>; 256]) -> bool {
    let Some((first, rest)) = pattern.split_first() else {
        return true;
    };
    match first {
        Symbol::T(_) => pos < text.len() && text[pos] == *first && bind_from(rest, text, pos + 1, binding),
        Symbol::Nt(i) => {
            let i = *i as usize;
            if let Some((a, b)) = binding[i] {
                let len = b - a;
                pos + len <= text.len()
                    && text[pos..pos + len] == text[a..b]
                    && bind_from(rest, text, pos + len, binding)
            } else {
                for end in pos + 1..=text.len() {
                    binding[i] = Some((pos, end));
                    if bind_from(rest, text, end, binding) {
                        binding[i] = None;
                        return true;
                    }
                }
                binding[i] = None;
                false
            }
        }
    }
}
