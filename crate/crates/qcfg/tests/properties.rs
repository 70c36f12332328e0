mod common;

use common::checks::*;
use proptest::prelude::*;

fn ok(c: Check) -> Result<(), TestCaseError> {
    c.map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn forest_sums_and_maxima_match_enumeration(seed in any::<u64>()) {
        ok(forest_matches_enumeration(seed))?;
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>()) {
        ok(gradient_matches_differences(seed))?;
    }

    #[test]
    fn unify_matches_exhaustive_search(seed in any::<u64>()) {
        ok(unify_matches_oracle(seed))?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn induction_keeps_coverage_and_descends(seed in any::<u64>()) {
        ok(induction_invariants(seed))?;
    }
}

#[test]
fn fitted_distributions_normalize() {
    fitted_model_normalizes().unwrap();
}

#[test]
fn sampled_pairs_are_derivable() {
    samples_are_sound(2_000).unwrap();
}

#[test]
fn sampled_outputs_pass_the_output_grammar() {
    samples_respect_output_cfg(2_000).unwrap();
}

#[test]
fn infinite_temperature_is_uniform_at_the_root() {
    uniform_temperature_root(10_000).unwrap();
}

#[test]
fn root_frequencies_follow_the_model() {
    root_frequencies_match_model(50_000).unwrap();
}

#[test]
fn nonterminal_bias_deepens_samples() {
    bias_increases_depth(5_000).unwrap();
}
