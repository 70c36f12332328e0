//! Brute-force oracles and random instance generators shared by the
//! property tests and the acceptance suite. Nothing here calls the parser,
//! the forest dynamic programs or the unifier.

#![allow(dead_code)]

pub mod checks;

use std::collections::{BTreeSet, HashMap};

use qcfg::model::ModelParams;
use qcfg::rule::compose_unbounded;
use qcfg::{validate_rule, Corpus, Derivation, ExamplePair, Grammar, GrammarConfig, Rule, Symbol, Token};
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn tok(s: &str) -> Token {
    Token::new(s).unwrap()
}

pub fn rule(s: &str) -> Rule {
    s.parse().unwrap()
}

pub fn grammar(rules: &[&str]) -> Grammar {
    Grammar::from_rules(GrammarConfig::default(), rules.iter().map(|r| rule(r))).unwrap()
}

pub fn pair(x: &str, y: &str) -> ExamplePair {
    ExamplePair::parse(x, y).unwrap()
}

pub fn three_example_corpus() -> Corpus {
    Corpus::from_pairs("three", [("jump", "JUMP"), ("walk", "WALK"), ("jump and walk", "JUMP WALK")]).unwrap()
}

// ---- probabilities straight from the parameter layout ----

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `p(r | c)` for every context and rule, computed from the raw tables.
pub struct ProbTable {
    pub probs: Vec<Vec<f64>>,
    /// Context of `(rule id, index)`.
    pub child_ctx: HashMap<(usize, u8), usize>,
}

impl ProbTable {
    pub fn new(params: &ModelParams, g: &Grammar) -> ProbTable {
        let (ns, nr) = (params.num_states, params.num_rules);
        let mut child_ctx = HashMap::new();
        let mut next = 1;
        for (id, r) in g.rules().enumerate() {
            for i in 1..=r.arity() as u8 {
                child_ctx.insert((id, i), next);
                next += 1;
            }
        }
        assert_eq!(next, params.num_contexts);
        let emit: Vec<Vec<f64>> = (0..ns).map(|s| softmax(&params.theta_emit[s * nr..(s + 1) * nr])).collect();
        let probs = (0..next)
            .map(|c| {
                let w = softmax(&params.theta_ctx[c * ns..(c + 1) * ns]);
                (0..nr).map(|r| (0..ns).map(|s| w[s] * emit[s][r]).sum()).collect()
            })
            .collect();
        ProbTable { probs, child_ctx }
    }

    pub fn logprob(&self, g: &Grammar, z: &Derivation) -> f64 {
        fn walk(t: &ProbTable, g: &Grammar, z: &Derivation, ctx: usize) -> f64 {
            let id = g.id_of(&z.rule).expect("rule in grammar");
            let mut lp = t.probs[ctx][id].ln();
            for (i, c) in z.children.iter().enumerate() {
                lp += walk(t, g, c, t.child_ctx[&(id, (i + 1) as u8)]);
            }
            lp
        }
        walk(self, g, z, 0)
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

// ---- derivation enumeration ----

/// Every derivation of `(x, y)`, by trying each rule against every split of
/// both strings.
pub fn enumerate_derivations(g: &Grammar, x: &[Token], y: &[Token]) -> Vec<Derivation> {
    let mut memo = HashMap::new();
    enum_rec(g, x, y, &mut memo)
}

type Memo = HashMap<(Vec<Token>, Vec<Token>), Vec<Derivation>>;

fn enum_rec(g: &Grammar, x: &[Token], y: &[Token], memo: &mut Memo) -> Vec<Derivation> {
    let key = (x.to_vec(), y.to_vec());
    if let Some(v) = memo.get(&key) {
        return v.clone();
    }
    let mut out = Vec::new();
    for r in g.rules() {
        let k = r.arity();
        let mut xs = Vec::new();
        split_side(r.alpha(), x, &mut vec![None; k + 1], &mut xs);
        for xspans in xs {
            let mut ys = Vec::new();
            split_side(r.beta(), y, &mut vec![None; k + 1], &mut ys);
            for yspans in ys {
                let mut combos: Vec<Vec<Derivation>> = vec![Vec::new()];
                for i in 1..=k {
                    let (xa, xb) = xspans[i].unwrap();
                    let (ya, yb) = yspans[i].unwrap();
                    let subs = enum_rec(g, &x[xa..xb], &y[ya..yb], memo);
                    combos = combos
                        .into_iter()
                        .flat_map(|c| {
                            subs.iter().map(move |s| {
                                let mut c = c.clone();
                                c.push(s.clone());
                                c
                            })
                        })
                        .collect();
                }
                out.extend(combos.into_iter().map(|children| Derivation::new(r.clone(), children).unwrap()));
            }
        }
    }
    memo.insert(key, out.clone());
    out
}

/// Assignments of non-empty spans of `s` to the nonterminals of `side` such
/// that terminals match; repeated indices must cover equal strings.
fn split_side(side: &[Symbol], s: &[Token], spans: &mut Vec<Option<(usize, usize)>>, out: &mut Vec<Vec<Option<(usize, usize)>>>) {
    fn go(
        side: &[Symbol],
        s: &[Token],
        pos: usize,
        spans: &mut Vec<Option<(usize, usize)>>,
        out: &mut Vec<Vec<Option<(usize, usize)>>>,
    ) {
        let Some((first, rest)) = side.split_first() else {
            if pos == s.len() {
                out.push(spans.clone());
            }
            return;
        };
        match first {
            Symbol::T(t) => {
                if s.get(pos) == Some(t) {
                    go(rest, s, pos + 1, spans, out);
                }
            }
            Symbol::Nt(i) => {
                let i = *i as usize;
                if let Some((a, b)) = spans[i] {
                    let len = b - a;
                    if pos + len <= s.len() && s[a..b] == s[pos..pos + len] {
                        go(rest, s, pos + len, spans, out);
                    }
                    return;
                }
                for end in pos + 1..=s.len() {
                    spans[i] = Some((pos, end));
                    go(rest, s, end, spans, out);
                }
                spans[i] = None;
            }
        }
    }
    go(side, s, 0, spans, out)
}

// ---- random instances ----

const IN_TOKENS: [&str; 3] = ["a", "b", "c"];
const OUT_TOKENS: [&str; 3] = ["A", "B", "C"];

/// A valid canonical rule with up to `max_nts` nonterminals and at most
/// `max_len` symbols per side.
pub fn random_rule<R: Rng>(rng: &mut R, max_nts: usize, max_len: usize, vocab: usize) -> Rule {
    loop {
        let k = rng.random_range(0..=max_nts);
        let alen = rng.random_range(k.max(1)..=max_len);
        let blen = rng.random_range(k.max(1)..=max_len);
        let mut alpha: Vec<Symbol> = (0..alen).map(|_| Symbol::T(tok(IN_TOKENS[rng.random_range(0..vocab)]))).collect();
        let mut beta: Vec<Symbol> = (0..blen).map(|_| Symbol::T(tok(OUT_TOKENS[rng.random_range(0..vocab)]))).collect();
        let apos = rand::seq::index::sample(rng, alen, k).into_vec();
        for (n, p) in apos.into_iter().enumerate() {
            alpha[p] = Symbol::Nt(n as u8 + 1);
        }
        let bpos = rand::seq::index::sample(rng, blen, k).into_vec();
        for (n, p) in bpos.into_iter().enumerate() {
            beta[p] = Symbol::Nt(n as u8 + 1);
        }
        // Occasionally copy a nonterminal onto an output terminal.
        if k > 0 && rng.random_bool(0.2) {
            let p = rng.random_range(0..blen);
            if !beta[p].is_nt() {
                beta[p] = Symbol::Nt(rng.random_range(1..=k as u8));
            }
        }
        let r = Rule::new(alpha, beta).canonical();
        if validate_rule(&r, max_nts, true).is_ok() && !(r.alpha().len() == 1 && r.arity() == 1) {
            return r;
        }
    }
}

/// A random small grammar (at most `max_rules` rules) and a pair it derives,
/// produced by a random top-down expansion.
pub fn random_instance<R: Rng>(rng: &mut R, max_rules: usize, max_tokens: usize) -> Option<(Grammar, ExamplePair)> {
    let mut g = Grammar::new(GrammarConfig::default());
    let n = rng.random_range(2..=max_rules);
    // At least one leaf so derivations can terminate.
    g.insert(random_rule(rng, 0, 2, 2)).ok()?;
    // Bare concatenations make many derivations share one string.
    if rng.random_bool(0.5) {
        let cat = ["NT_1 NT_2 ### NT_1 NT_2", "NT_1 NT_2 ### NT_2 NT_1", "NT_1 NT_2 ### NT_1 NT_2 NT_1"];
        let _ = g.insert(rule(cat[rng.random_range(0..cat.len())]));
    }
    while g.len() < n {
        let r = random_rule(rng, 2, 3, 2);
        if r.arity() > 0 || rng.random_bool(0.3) {
            let _ = g.insert(r);
        }
    }
    let rules: Vec<Rule> = g.rules().cloned().collect();
    for attempt in 0..40 {
        if let Some(z) = grow(rng, &rules, 3) {
            let p = z.derivation_yield();
            let fits = p.x.len() <= max_tokens && p.y.len() <= 3 * max_tokens;
            // Prefer derivations with structure; settle for a leaf late.
            if fits && (!z.children.is_empty() || attempt >= 30) {
                return Some((g, p));
            }
        }
    }
    None
}

fn grow<R: Rng>(rng: &mut R, rules: &[Rule], depth: usize) -> Option<Derivation> {
    let leaves = depth <= 1 || rng.random_bool(0.3);
    let mut choices: Vec<&Rule> = rules.iter().filter(|r| (r.arity() == 0) == leaves).collect();
    if choices.is_empty() {
        choices = rules.iter().filter(|r| r.arity() == 0).collect();
    }
    let r = (*choices.choose(rng)?).clone();
    let children = (0..r.arity()).map(|_| grow(rng, rules, depth - 1)).collect::<Option<Vec<_>>>()?;
    Some(Derivation::new(r, children).unwrap())
}

/// Random parameters with sizeable logits.
pub fn random_params<R: Rng>(rng: &mut R, g: &Grammar, states: usize) -> ModelParams {
    let mut p = ModelParams::zeros(g, states).unwrap();
    for v in p.theta_ctx.iter_mut().chain(p.theta_emit.iter_mut()) {
        *v = rng.random_range(-2.0..2.0);
    }
    p
}

/// A toy corpus generated by a hidden grammar over a small command language.
pub fn random_corpus<R: Rng>(rng: &mut R, size: usize) -> Corpus {
    let prims = ["jump", "walk", "run", "look"];
    let mods = [("twice", 2), ("thrice", 3)];
    let phrase = |rng: &mut R| -> (Vec<String>, Vec<String>) {
        let p = prims[rng.random_range(0..prims.len())];
        let mut x = vec![p.to_string()];
        let mut y = vec![p.to_uppercase()];
        if rng.random_bool(0.4) {
            let (m, n) = mods[rng.random_range(0..2)];
            x.push(m.to_string());
            y = std::iter::repeat_n(y[0].clone(), n).collect();
        }
        (x, y)
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < size {
        let (mut x, mut y) = phrase(rng);
        if rng.random_bool(0.4) {
            let (x2, y2) = phrase(rng);
            x.push("and".into());
            x.extend(x2);
            y.extend(y2);
        }
        let (x, y) = (x.join(" "), y.join(" "));
        if seen.insert((x.clone(), y.clone())) {
            out.push(ExamplePair::parse(&x, &y).unwrap());
        }
    }
    Corpus::new("toy", out)
}

// ---- unify by exhaustive decomposition ----

/// All canonical valid `r3` with `r2 ∘ r3 = r1` or `r3 ∘ r2 = r1`, found by
/// trying every sub-span pair of `r1` as the inner rule and every way to
/// carve a span out of `r1` as the outer rule.
pub fn unify_oracle(r1: &Rule, r2: &Rule, max_nts: usize) -> BTreeSet<String> {
    let r1 = r1.canonical();
    let r2 = r2.canonical();
    let mut out = BTreeSet::new();
    let mut keep = |r3: Rule| {
        let r3 = r3.canonical();
        if validate_rule(&r3, max_nts, true).is_ok() {
            out.insert(r3.to_string());
        }
    };
    let (a, b) = (r1.alpha(), r1.beta());
    // r3 inside r2.
    for i in 0..a.len() {
        for j in i + 1..=a.len() {
            for k in 0..b.len() {
                for l in k + 1..=b.len() {
                    let r3 = Rule::new(a[i..j].to_vec(), b[k..l].to_vec());
                    let c = r3.canonical();
                    if validate_rule(&c, usize::MAX >> 1, true).is_err() {
                        continue;
                    }
                    if (1..=r2.arity() as u8).any(|n| compose_unbounded(&r2, &c, n).ok().as_ref() == Some(&r1)) {
                        keep(r3);
                    }
                }
            }
        }
    }
    // r2 inside r3: replace one input span and any set of output spans by
    // a fresh nonterminal.
    let fresh = Symbol::Nt(200);
    let mut outputs = Vec::new();
    carve(b, 0, &mut Vec::new(), fresh, &mut outputs);
    for i in 0..a.len() {
        for j in i + 1..=a.len() {
            let mut alpha = a[..i].to_vec();
            alpha.push(fresh);
            alpha.extend_from_slice(&a[j..]);
            for beta in &outputs {
                if !beta.contains(&fresh) {
                    continue;
                }
                let r3 = Rule::new(alpha.clone(), beta.clone()).canonical();
                if validate_rule(&r3, usize::MAX >> 1, true).is_err() {
                    continue;
                }
                if (1..=r3.arity() as u8).any(|n| compose_unbounded(&r3, &r2, n).ok().as_ref() == Some(&r1)) {
                    keep(r3);
                }
            }
        }
    }
    out
}

fn carve(b: &[Symbol], pos: usize, cur: &mut Vec<Symbol>, fresh: Symbol, out: &mut Vec<Vec<Symbol>>) {
    if pos == b.len() {
        out.push(cur.clone());
        return;
    }
    cur.push(b[pos]);
    carve(b, pos + 1, cur, fresh, out);
    cur.pop();
    for end in pos + 1..=b.len() {
        cur.push(fresh);
        carve(b, end, cur, fresh, out);
        cur.pop();
    }
}

/// A pair `(r1, r2)` where `r2` is often one half of a decomposition of `r1`.
pub fn random_unify_pair<R: Rng>(rng: &mut R) -> (Rule, Rule) {
    loop {
        let outer = random_rule(rng, 2, 4, 2);
        let inner = random_rule(rng, 2, 3, 2);
        let r2_random = random_rule(rng, 2, 4, 2);
        if outer.arity() == 0 || rng.random_bool(0.2) {
            return (random_rule(rng, 3, 6, 2), r2_random);
        }
        let n = rng.random_range(1..=outer.arity() as u8);
        let Ok(r1) = compose_unbounded(&outer, &inner, n) else { continue };
        if r1.alpha().len() > 6 || r1.beta().len() > 6 || r1.arity() > 3 {
            continue;
        }
        let r2 = match rng.random_range(0..3) {
            0 => outer,
            1 => inner,
            _ => r2_random,
        };
        return (r1, r2);
    }
}
