use indexmap::IndexSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rule::{validate_rule, Rule};

/// Index of a rule inside one grammar snapshot.
pub type RuleId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub max_nonterminals: usize,
    pub allow_repeated_indices: bool,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            max_nonterminals: 4,
            allow_repeated_indices: true,
        }
    }
}

/// An insertion-ordered, duplicate-free set of rules.
///
/// Rules whose input side is a lone nonterminal are refused: they would make
/// the set of derivations of an input infinite.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar {
    rules: IndexSet<Rule>,
    config: GrammarConfig,
}

impl Grammar {
    pub fn new(config: GrammarConfig) -> Grammar {
        Grammar {
            rules: IndexSet::new(),
            config,
        }
    }

    pub fn from_rules(config: GrammarConfig, rules: impl IntoIterator<Item = Rule>) -> Result<Grammar> {
        let mut g = Grammar::new(config);
        for r in rules {
            g.insert(r)?;
        }
        Ok(g)
    }

    pub fn config(&self) -> GrammarConfig {
        self.config
    }

    pub fn max_nonterminals(&self) -> usize {
        self.config.max_nonterminals
    }

    /// Checks whether `rule` could be inserted.
    pub fn admits(&self, rule: &Rule) -> Result<()> {
        validate_rule(rule, self.config.max_nonterminals, self.config.allow_repeated_indices)
            .map_err(|v| Error::InvalidRule {
                rule: rule.to_string(),
                reason: v.to_string(),
            })?;
        if rule.has_bare_input() {
            return Err(Error::InvalidRule {
                rule: rule.to_string(),
                reason: "input side is a lone nonterminal".into(),
            });
        }
        Ok(())
    }

    /// Inserts a rule; returns false if it was already present.
    pub fn insert(&mut self, rule: Rule) -> Result<bool> {
        self.admits(&rule)?;
        Ok(self.rules.insert(rule))
    }

    /// Removes a rule, preserving the order of the rest.
    pub fn remove(&mut self, rule: &Rule) -> bool {
        self.rules.shift_remove(rule)
    }

    pub fn contains(&self, rule: &Rule) -> bool {
        self.rules.contains(rule)
    }

    pub fn id_of(&self, rule: &Rule) -> Option<RuleId> {
        self.rules.get_index_of(rule)
    }

    pub fn rule(&self, id: RuleId) -> &Rule {
        &self.rules[id]
    }

    pub fn rules(&self) -> impl ExactSizeIterator<Item = &Rule> + '_ {
        self.rules.iter()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// SHA-256 over the rendered rules, in order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.rules {
            h.update(r.to_string().as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
