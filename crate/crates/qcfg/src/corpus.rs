use std::fmt;

use crate::error::{Error, Result};
use crate::symbol::{join_tokens, tokenize, Token};

/// An input/output pair; both sides non-empty.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ExamplePair {
    pub x: Vec<Token>,
    pub y: Vec<Token>,
}

impl ExamplePair {
    pub fn new(x: Vec<Token>, y: Vec<Token>) -> Result<ExamplePair> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::Precondition("example sides must be non-empty".into()));
        }
        Ok(ExamplePair { x, y })
    }

    /// Builds a pair from space-separated text.
    pub fn parse(x: &str, y: &str) -> Result<ExamplePair> {
        ExamplePair::new(tokenize(x), tokenize(y))
    }

    pub fn len(&self) -> usize {
        self.x.len() + self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl fmt::Display for ExamplePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", join_tokens(&self.x), join_tokens(&self.y))
    }
}

/// A named list of examples in file order; repeats are kept.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub examples: Vec<ExamplePair>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, examples: Vec<ExamplePair>) -> Corpus {
        Corpus {
            name: name.into(),
            examples,
        }
    }

    /// Convenience constructor from `(input, output)` text pairs.
    pub fn from_pairs<'a>(name: &str, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Corpus> {
        let examples = pairs
            .into_iter()
            .map(|(x, y)| ExamplePair::parse(x, y))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus::new(name, examples))
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ExamplePair> {
        self.examples.iter()
    }
}
