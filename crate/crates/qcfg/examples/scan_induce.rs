//! Induce a grammar on a SCAN split and report size and timing.
//!
//! `cargo run --release -p qcfg --example scan_induce -- jump`

use std::time::Instant;

use qcfg::induction::{induce_with_observer, InductionConfig};

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "jump".into());
    let split = match which.as_str() {
        "jump" => scan::jump_split(),
        "turn_left" => scan::turn_left_split(),
        "length" => scan::length_split(),
        "mcd1" => scan::mcd_split(1),
        "mcd2" => scan::mcd_split(2),
        "mcd3" => scan::mcd_split(3),
        other => panic!("unknown split {other}"),
    };
    let start = Instant::now();
    let mut observer = |log: &qcfg::induction::IterationLog, _: &qcfg::Grammar, _: &[qcfg::ExamplePair]| {
        eprintln!(
            "[{:>7.1}s] partition {} step {} objective {:.1} rules {} removals {} actions {}",
            start.elapsed().as_secs_f64(),
            log.partition,
            log.step,
            log.objective,
            log.grammar_size,
            log.removals,
            log.actions
        );
    };
    let out = induce_with_observer(&split.train, &[], None, &InductionConfig::scan(), &mut observer).unwrap();
    println!("{} rules in {:.1}s", out.grammar.len(), start.elapsed().as_secs_f64());
    for r in out.grammar.rules() {
        println!("  {r}");
    }
}
