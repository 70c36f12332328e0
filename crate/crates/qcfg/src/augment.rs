//! Building augmented training sets, hard-EM relabeling and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{OutputCfg, Parser};
use crate::corpus::{Corpus, ExamplePair};
use crate::error::{Error, Result};
use crate::model::{fit, Model, ModelParams, TrainConfig};
use crate::symbol::Token;

/// Equal parts original and synthetic data. The smaller side is repeated
/// `ceil(larger / smaller)` times and cut to the larger side's size; the
/// union is shuffled with `seed`.
pub fn mix_balanced(original: &Corpus, synthetic: &Corpus, seed: u64) -> Result<Corpus> {
    if original.is_empty() || synthetic.is_empty() {
        return Err(Error::Precondition("both corpora must be non-empty to mix".into()));
    }
    let target = original.len().max(synthetic.len());
    let grow = |c: &Corpus| -> Vec<ExamplePair> { c.examples.iter().cycle().take(target).cloned().collect() };
    let mut examples = grow(original);
    examples.extend(grow(synthetic));
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(Corpus::new(format!("{}+{}", original.name, synthetic.name), examples))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RelabelStats {
    pub kept: usize,
    /// Inputs with no derivation.
    pub underivable: usize,
    /// Best outputs rejected by the output grammar.
    pub rejected_by_cfg: usize,
}

/// Labels each input with its Viterbi output, dropping inputs the model
/// cannot parse.
pub fn hard_em_relabel(model: &Model<'_>, inputs: &[Vec<Token>], output_cfg: Option<&OutputCfg>) -> Result<(Corpus, RelabelStats)> {
    let labels: Vec<(Option<Vec<Token>>, bool)> = inputs
        .par_iter()
        .map(|x| {
            Ok(match model.viterbi_parse(x, None)? {
                None => (None, false),
                Some((y, _)) => {
                    let ok = output_cfg.is_none_or(|c| c.accepts(&y));
                    (ok.then_some(y), true)
                }
            })
        })
        .collect::<Result<_>>()?;
    let mut stats = RelabelStats::default();
    let mut examples = Vec::new();
    for (x, (y, derivable)) in inputs.iter().zip(labels) {
        match (y, derivable) {
            (Some(y), _) => {
                stats.kept += 1;
                examples.push(ExamplePair::new(x.clone(), y)?);
            }
            (None, true) => stats.rejected_by_cfg += 1,
            (None, false) => stats.underivable += 1,
        }
    }
    Ok((Corpus::new("pseudo-labeled", examples), stats))
}

#[derive(Clone, Debug)]
pub struct SemiSupervised {
    pub params: ModelParams,
    pub pseudo_labeled: Corpus,
    pub stats: RelabelStats,
}

/// Fit on `labeled`, pseudo-label `unlabeled`, then refit on `labeled`
/// plus `dup_factor` copies of the pseudo-labeled data.
pub fn semi_supervised_fit(
    parser: &Parser<'_>,
    labeled: &Corpus,
    unlabeled: &[Vec<Token>],
    dup_factor: usize,
    num_states: usize,
    train_cfg: &TrainConfig,
    output_cfg: Option<&OutputCfg>,
) -> Result<SemiSupervised> {
    if dup_factor == 0 {
        return Err(Error::Precondition("dup_factor must be at least 1".into()));
    }
    let first = fit(parser, labeled, num_states, train_cfg)?;
    let model = Model::with_parser(first.params.clone(), Parser::new(parser.grammar()))?;
    let (pseudo, stats) = hard_em_relabel(&model, unlabeled, output_cfg)?;
    if pseudo.is_empty() {
        return Ok(SemiSupervised {
            params: first.params,
            pseudo_labeled: pseudo,
            stats,
        });
    }
    let mut combined = labeled.examples.clone();
    for _ in 0..dup_factor {
        combined.extend(pseudo.examples.iter().cloned());
    }
    let second = fit(parser, &Corpus::new(format!("{}+pseudo", labeled.name), combined), num_states, train_cfg)?;
    Ok(SemiSupervised {
        params: second.params,
        pseudo_labeled: pseudo,
        stats,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Breakdown {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl Breakdown {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += ok as usize;
    }

    fn finish(mut self) -> Breakdown {
        self.accuracy = if self.total == 0 { 0.0 } else { self.correct as f64 / self.total as f64 };
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub overall: Breakdown,
    pub abstained: usize,
    /// Inputs the grammar derives, then the rest; present when coverage
    /// was supplied.
    pub covered: Option<Breakdown>,
    pub not_covered: Option<Breakdown>,
}

/// Exact-match accuracy; `None` predictions (abstentions) count as wrong.
pub fn exact_match_eval(predictions: &[Option<Vec<Token>>], gold: &Corpus, coverage: Option<&[bool]>) -> Result<EvalReport> {
    if predictions.len() != gold.len() || coverage.is_some_and(|c| c.len() != gold.len()) {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let mut overall = Breakdown::default();
    let mut covered = Breakdown::default();
    let mut not_covered = Breakdown::default();
    let mut abstained = 0;
    for (k, (p, g)) in predictions.iter().zip(gold.iter()).enumerate() {
        let ok = p.as_ref().is_some_and(|y| *y == g.y);
        abstained += p.is_none() as usize;
        overall.add(ok);
        if let Some(c) = coverage {
            if c[k] {
                covered.add(ok);
            } else {
                not_covered.add(ok);
            }
        }
    }
    Ok(EvalReport {
        overall: overall.finish(),
        abstained,
        covered: coverage.map(|_| covered.finish()),
        not_covered: coverage.map(|_| not_covered.finish()),
    })
}

/// Parses every test input with the model and scores the predictions,
/// split by whether the grammar derives the input.
pub fn evaluate(model: &Model<'_>, test: &Corpus, output_cfg: Option<&OutputCfg>) -> Result<(Vec<Option<Vec<Token>>>, EvalReport)> {
    let results: Vec<(Option<Vec<Token>>, bool)> = test
        .examples
        .par_iter()
        .map(|e| {
            let Some(forest) = model.parser().parse_input(&e.x)? else {
                return Ok((None, false));
            };
            let (_, z) = model.forest_viterbi(&forest);
            let y = z.output_yield();
            Ok((output_cfg.is_none_or(|c| c.accepts(&y)).then_some(y), true))
        })
        .collect::<Result<_>>()?;
    let (predictions, coverage): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = exact_match_eval(&predictions, test, Some(&coverage))?;
    Ok((predictions, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{Grammar, GrammarConfig};
    use crate::symbol::tokenize;

    fn corpus(n: usize, tag: &str) -> Corpus {
        let pairs: Vec<(String, String)> = (0..n).map(|i| (format!("{tag}{i}"), format!("Y{i}"))).collect();
        Corpus::from_pairs(tag, pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap()
    }

    #[test]
    fn balanced_mixing() {
        let same = mix_balanced(&corpus(5, "o"), &corpus(5, "s"), 0).unwrap();
        assert_eq!(same.len(), 10);
        let mixed = mix_balanced(&corpus(440, "o"), &corpus(100_000, "s"), 1).unwrap();
        assert_eq!(mixed.len(), 200_000);
        let originals = mixed.iter().filter(|e| e.x[0].as_str().starts_with('o')).count();
        assert_eq!(originals, 100_000);
        // 100000 = 227 * 440 + 120: the first 120 examples appear 228 times.
        let first = mixed.iter().filter(|e| e.x[0].as_str() == "o0").count();
        let last = mixed.iter().filter(|e| e.x[0].as_str() == "o439").count();
        assert_eq!((first, last), (228, 227));
        assert!(mix_balanced(&corpus(3, "o"), &Corpus::default(), 0).is_err());
    }

    #[test]
    fn exact_match_counts() {
        let gold = Corpus::from_pairs("g", [("a", "A"), ("b", "B"), ("c", "C"), ("d", "D")]).unwrap();
        let preds = vec![Some(tokenize("A")), Some(tokenize("B")), Some(tokenize("C")), Some(tokenize("X"))];
        let r = exact_match_eval(&preds, &gold, Some(&[true, true, false, false])).unwrap();
        assert_eq!(r.overall.accuracy, 0.75);
        assert_eq!(r.covered.as_ref().unwrap().accuracy, 1.0);
        assert_eq!(r.not_covered.as_ref().unwrap().total, 2);
        let none = exact_match_eval(&[None, None, None, None], &gold, None).unwrap();
        assert_eq!((none.overall.accuracy, none.abstained), (0.0, 4));
        assert!(matches!(exact_match_eval(&preds[..2], &gold, None), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn relabel_discards_unknown_inputs() {
        let g = Grammar::from_rules(
            GrammarConfig::default(),
            ["NT_1 and NT_2 ### NT_1 NT_2", "jump ### JUMP", "walk ### WALK"].iter().map(|r| r.parse().unwrap()),
        )
        .unwrap();
        let model = Model::new(crate::model::init_params(&g, 2, 0).unwrap(), &g).unwrap();
        let inputs = vec![tokenize("walk and jump"), tokenize("run")];
        let (c, stats) = hard_em_relabel(&model, &inputs, None).unwrap();
        assert_eq!(c.examples, vec![ExamplePair::parse("walk and jump", "WALK JUMP").unwrap()]);
        assert_eq!((stats.kept, stats.underivable), (1, 1));
        let cfg: OutputCfg = "@start S\nS -> 'JUMP'".parse().unwrap();
        let (c, stats) = hard_em_relabel(&model, &inputs, Some(&cfg)).unwrap();
        assert!(c.is_empty());
        assert_eq!(stats.rejected_by_cfg, 1);
    }

    #[test]
    fn semi_supervised_without_unlabeled_is_plain_fit() {
        let g = Grammar::from_rules(
            GrammarConfig::default(),
            ["NT_1 and NT_2 ### NT_1 NT_2", "jump ### JUMP", "walk ### WALK"].iter().map(|r| r.parse().unwrap()),
        )
        .unwrap();
        let parser = Parser::new(&g);
        let labeled = Corpus::from_pairs("l", [("walk and jump", "WALK JUMP"), ("jump", "JUMP")]).unwrap();
        let cfg = TrainConfig {
            steps: 20,
            ..TrainConfig::default()
        };
        let plain = fit(&parser, &labeled, 2, &cfg).unwrap().params;
        let semi = semi_supervised_fit(&parser, &labeled, &[], 1, 2, &cfg, None).unwrap();
        assert_eq!(semi.params, plain);
        assert!(semi_supervised_fit(&parser, &labeled, &[], 0, 2, &cfg, None).is_err());
        let more = semi_supervised_fit(&parser, &labeled, &[tokenize("jump and walk")], 2, 2, &cfg, None).unwrap();
        assert_eq!(more.stats.kept, 1);
        assert_ne!(more.params, plain);
    }
}
