use super::*;
use crate::corpus::Corpus;
use crate::grammar::GrammarConfig;
use crate::symbol::tokenize;

fn grammar(rules: &[&str]) -> Grammar {
    Grammar::from_rules(GrammarConfig::default(), rules.iter().map(|r| r.parse().unwrap())).unwrap()
}

fn rule(s: &str) -> Rule {
    s.parse().unwrap()
}

fn twice_grammar() -> Grammar {
    grammar(&["NT_1 and NT_2 ### NT_1 NT_2", "NT_1 twice ### NT_1 NT_1", "jump ### JUMP", "walk ### WALK"])
}

#[test]
fn zero_parameters_are_uniform() {
    let g = twice_grammar();
    let m = Model::new(ModelParams::zeros(&g, 3).unwrap(), &g).unwrap();
    for r in g.rules() {
        assert!((m.expansion_prob(r, None).unwrap() - 0.25).abs() < 1e-15);
        assert!((m.expansion_prob(r, Some((&rule("NT_1 and NT_2 ### NT_1 NT_2"), 2))).unwrap() - 0.25).abs() < 1e-15);
    }
}

#[test]
fn parameter_count() {
    let g = twice_grammar();
    let p = init_params(&g, 4, 1).unwrap();
    // ROOT + 2 slots of the and-rule + 1 of the twice-rule.
    assert_eq!(p.num_contexts, 4);
    assert_eq!(p.num_parameters(), 4 * 4 + 4 * 4);
    assert_eq!(p, init_params(&g, 4, 1).unwrap());
    assert_ne!(p, init_params(&g, 4, 2).unwrap());
    assert!(init_params(&g, 0, 1).is_err());
}

#[test]
fn single_state_ignores_context() {
    let g = twice_grammar();
    let m = Model::new(init_params(&g, 1, 7).unwrap(), &g).unwrap();
    for c in 1..m.contexts().len() {
        assert_eq!(m.context_distribution(c).unwrap(), m.context_distribution(Contexts::ROOT).unwrap());
    }
}

#[test]
fn distributions_normalize() {
    let g = twice_grammar();
    let m = Model::new(init_params(&g, 3, 5).unwrap(), &g).unwrap();
    for c in 0..m.contexts().len() {
        let total: f64 = m.context_distribution(c).unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    assert!(matches!(m.context_distribution(99), Err(Error::UnknownContext)));
    assert!(matches!(m.expansion_prob(&rule("run ### RUN"), None), Err(Error::UnknownRule(_))));
    assert!(matches!(
        m.expansion_prob(&rule("walk ### WALK"), Some((&rule("jump ### JUMP"), 1))),
        Err(Error::UnknownContext)
    ));
}

#[test]
fn conjunction_derivation_factors() {
    let g = twice_grammar();
    let m = Model::new(init_params(&g, 2, 3).unwrap(), &g).unwrap();
    let and = rule("NT_1 and NT_2 ### NT_1 NT_2");
    let twice = rule("NT_1 twice ### NT_1 NT_1");
    let z = Derivation::new(
        and.clone(),
        vec![
            Derivation::new(twice.clone(), vec![Derivation::leaf(rule("jump ### JUMP"))]).unwrap(),
            Derivation::leaf(rule("walk ### WALK")),
        ],
    )
    .unwrap();
    let expected = m.expansion_prob(&and, None).unwrap().ln()
        + m.expansion_prob(&twice, Some((&and, 1))).unwrap().ln()
        + m.expansion_prob(&rule("jump ### JUMP"), Some((&twice, 1))).unwrap().ln()
        + m.expansion_prob(&rule("walk ### WALK"), Some((&and, 2))).unwrap().ln();
    assert!((m.derivation_logprob(&z).unwrap() - expected).abs() < 1e-12);
    let pair = z.derivation_yield();
    // A single derivation: the forest sum is that derivation.
    assert!((m.joint_loglik(&pair).unwrap() - expected).abs() < 1e-12);
    assert!((m.conditional_loglik(&pair).unwrap()).abs() < 1e-12);
}

#[test]
fn two_derivation_forest() {
    let g = grammar(&["a NT_1 ### A NT_1", "a NT_1 ### B NT_1", "a ### A", "NT_1 a ### A NT_1"]);
    let m = Model::new(init_params(&g, 2, 11).unwrap(), &g).unwrap();
    let pair = ExamplePair::parse("a a", "A A").unwrap();
    let forest = m.parser().parse_pair(&pair).unwrap().unwrap();
    let ds = forest.derivations(&g, 100);
    assert_eq!(ds.len(), 2);
    let brute: f64 = ds.iter().map(|d| m.derivation_logprob(d).unwrap().exp()).sum();
    assert!((m.joint_loglik(&pair).unwrap() - brute.ln()).abs() < 1e-12);
    let all = m.parser().parse_input(&tokenize("a a")).unwrap().unwrap();
    let marginal: f64 = all.derivations(&g, 100).iter().map(|d| m.derivation_logprob(d).unwrap().exp()).sum();
    assert!((m.conditional_loglik(&pair).unwrap() - (brute / marginal).ln()).abs() < 1e-12);
    let (best, z) = m.forest_viterbi(&all);
    for d in all.derivations(&g, 100) {
        assert!(best >= m.derivation_logprob(&d).unwrap() - 1e-12);
    }
    assert!((m.derivation_logprob(&z).unwrap() - best).abs() < 1e-12);
}

#[test]
fn underivable_cases() {
    let g = twice_grammar();
    let m = Model::new(init_params(&g, 2, 3).unwrap(), &g).unwrap();
    assert_eq!(m.joint_loglik(&ExamplePair::parse("jump", "WALK").unwrap()).unwrap(), f64::NEG_INFINITY);
    assert!(matches!(
        m.conditional_loglik(&ExamplePair::parse("run", "RUN").unwrap()),
        Err(Error::UndefinedConditional)
    ));
    assert!(m.viterbi_parse(&tokenize("run twice"), None).unwrap().is_none());
    let (y, _) = m.viterbi_parse(&tokenize("jump twice and walk"), None).unwrap().unwrap();
    assert_eq!(y, tokenize("JUMP JUMP WALK"));
}

#[test]
fn mismatched_grammar_is_rejected() {
    let g = twice_grammar();
    let p = init_params(&g, 2, 3).unwrap();
    let other = grammar(&["jump ### JUMP"]);
    assert!(matches!(Model::new(p.clone(), &other), Err(Error::GrammarMismatch)));
    let back = ModelParams::from_json(&p.to_json()).unwrap();
    assert_eq!(back, p);
}

#[test]
fn gradient_matches_finite_differences() {
    let g = grammar(&["a NT_1 ### A NT_1", "a NT_1 ### B NT_1", "a ### A", "NT_1 a ### A NT_1", "b ### B"]);
    let parser = Parser::new(&g);
    let pairs = vec![ExamplePair::parse("a a", "A A").unwrap(), ExamplePair::parse("a b", "B B").unwrap()];
    let p = init_params(&g, 2, 4).unwrap();
    let (_, grad) = loglik_gradient(&p, &parser, &pairs).unwrap();
    let total = |q: &ModelParams| -> f64 { pairs.iter().map(|x| joint_loglik(q, &parser, x).unwrap()).sum() };
    let h = 1e-5;
    for (k, &an) in grad.theta_ctx.iter().chain(&grad.theta_emit).enumerate() {
        let mut hi = p.clone();
        let mut lo = p.clone();
        let nctx = p.theta_ctx.len();
        if k < nctx {
            hi.theta_ctx[k] += h;
            lo.theta_ctx[k] -= h;
        } else {
            hi.theta_emit[k - nctx] += h;
            lo.theta_emit[k - nctx] -= h;
        }
        let fd = (total(&hi) - total(&lo)) / (2.0 * h);
        assert!((fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()), "param {k}: {fd} vs {an}");
    }
}

#[test]
fn training_improves_likelihood() {
    let g = twice_grammar();
    let parser = Parser::new(&g);
    let corpus = Corpus::from_pairs(
        "toy",
        [("jump twice and walk", "JUMP JUMP WALK"), ("walk and jump", "WALK JUMP"), ("jump", "JUMP"), ("run", "RUN")],
    )
    .unwrap();
    let zero = TrainConfig {
        steps: 0,
        rng_seed: 9,
        ..TrainConfig::default()
    };
    let untrained = fit(&parser, &corpus, 2, &zero).unwrap();
    assert_eq!(untrained.params, init_params(&g, 2, 9).unwrap());
    assert_eq!(untrained.skipped, 1);
    let cfg = TrainConfig {
        steps: 50,
        batch_size: 8,
        rng_seed: 9,
        ..TrainConfig::default()
    };
    let report = fit(&parser, &corpus, 2, &cfg).unwrap();
    assert!(report.trace.last().unwrap() > &report.trace[0]);
    for w in report.trace.windows(2).take(10) {
        assert!(w[1] >= w[0] - 1e-9);
    }
}
