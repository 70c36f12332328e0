//! Quasi-synchronous context-free grammars: induction from paired corpora,
//! chart parsing, a latent-state model over derivations, and sampling of
//! recombined examples for data augmentation.

pub mod augment;
pub mod chart;
pub mod corpus;
pub mod derivation;
pub mod error;
pub mod grammar;
pub mod induction;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod rule;
pub mod sampler;
pub mod symbol;

pub use chart::{can_derive, cfg_accepts, occurs_in, parse_input, parse_pair, rule_output_valid, Forest, OutputCfg, Parser};
pub use corpus::{Corpus, ExamplePair};
pub use derivation::Derivation;
pub use error::{Error, Result};
pub use grammar::{Grammar, GrammarConfig, RuleId};
pub use rule::{compose, validate_rule, Rule};
pub use symbol::{Symbol, Token};
