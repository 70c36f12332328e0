//! Induce, fit and evaluate on a SCAN split.
//!
//! `cargo run --release -p qcfg --example scan_fit -- mcd1 2 [steps] [lr] [batch]`

use std::time::Instant;

use qcfg::induction::{induce, InductionConfig};
use qcfg::model::{fit, Model, TrainConfig};
use qcfg::{Corpus, Parser};

fn mean(model: &Model<'_>, corpus: &Corpus) -> (f64, f64) {
    let mut joint = 0.0;
    let mut cond = 0.0;
    for p in corpus.iter() {
        joint += model.joint_loglik(p).unwrap();
        cond += model.conditional_loglik(p).unwrap();
    }
    (joint / corpus.len() as f64, cond / corpus.len() as f64)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let split = match args.get(1).map(String::as_str).unwrap_or("mcd1") {
        "jump" => scan::jump_split(),
        "turn_left" => scan::turn_left_split(),
        "length" => scan::length_split(),
        "mcd1" => scan::mcd_split(1),
        "mcd2" => scan::mcd_split(2),
        "mcd3" => scan::mcd_split(3),
        other => panic!("unknown split {other}"),
    };
    let states: usize = args.get(2).map_or(2, |s| s.parse().unwrap());
    let mut cfg = TrainConfig::default();
    if let Some(s) = args.get(3) {
        cfg.steps = s.parse().unwrap();
    }
    if let Some(s) = args.get(4) {
        cfg.learning_rate = s.parse().unwrap();
    }
    if let Some(s) = args.get(5) {
        cfg.batch_size = s.parse().unwrap();
    }
    if let Some(s) = args.get(6) {
        cfg.rng_seed = s.parse().unwrap();
    }
    if let Some(s) = args.get(7) {
        cfg.restarts = s.parse().unwrap();
    }
    let t = Instant::now();
    let g = induce(&split.train, &[], None, &InductionConfig::scan()).unwrap().grammar;
    eprintln!("induced {} rules in {:.1}s", g.len(), t.elapsed().as_secs_f64());
    let parser = Parser::new(&g);
    let report = fit(&parser, &split.train, states, &cfg).unwrap();
    eprintln!("fit in {:.1}s, skipped {}", t.elapsed().as_secs_f64(), report.skipped);
    let model = Model::new(report.params, &g).unwrap();
    let (tj, tc) = mean(&model, &split.train);
    println!("train joint {tj:.2} cond {tc:.3}");
    if let Some(dev) = &split.dev {
        let (dj, dc) = mean(&model, dev);
        println!("dev joint {dj:.2} cond {dc:.3}");
    }
    let correct = split
        .test
        .iter()
        .filter(|p| model.viterbi_parse(&p.x, None).unwrap().is_some_and(|(y, _)| y == p.y))
        .count();
    println!("test exact match {:.2}% ({:.1}s)", 100.0 * correct as f64 / split.test.len() as f64, t.elapsed().as_secs_f64());
}
