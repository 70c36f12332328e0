//! Terminal tokens and grammar symbols.
//!
//! Tokens are interned process-wide so that the parser and the induction
//! search compare `u32`s instead of strings. Interned text is never freed.

use std::collections::HashMap;
use std::fmt;
use std::sync::RwLock;

use once_cell::sync::Lazy;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

struct Interner {
    ids: HashMap<&'static str, u32>,
    texts: Vec<&'static str>,
}

static INTERNER: Lazy<RwLock<Interner>> = Lazy::new(|| {
    RwLock::new(Interner {
        ids: HashMap::new(),
        texts: Vec::new(),
    })
});

/// A terminal token: non-empty text without whitespace.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Token(u32);

impl Token {
    pub fn new(text: &str) -> Result<Token, Error> {
        if text.is_empty() {
            return Err(Error::InvalidToken(text.to_string()));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(Error::InvalidToken(text.to_string()));
        }
        Ok(Self::intern(text))
    }

    fn intern(text: &str) -> Token {
        if let Some(&id) = INTERNER.read().unwrap().ids.get(text) {
            return Token(id);
        }
        let mut interner = INTERNER.write().unwrap();
        if let Some(&id) = interner.ids.get(text) {
            return Token(id);
        }
        let leaked: &'static str = Box::leak(text.to_string().into_boxed_str());
        let id = interner.texts.len() as u32;
        interner.texts.push(leaked);
        interner.ids.insert(leaked, id);
        Token(id)
    }

    pub fn as_str(&self) -> &'static str {
        INTERNER.read().unwrap().texts[self.0 as usize]
    }

    pub fn id(&self) -> u32 {
        self.0
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_str())
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Token {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Token::new(&text).map_err(serde::de::Error::custom)
    }
}

/// Splits whitespace-separated text into tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace().map(Token::intern).collect()
}

pub fn join_tokens(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (n, t) in tokens.iter().enumerate() {
        if n > 0 {
            out.push(' ');
        }
        out.push_str(t.as_str());
    }
    out
}

/// One symbol on either side of a rule. The grammar has a single
/// nonterminal category, so a nonterminal is identified by its link index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Symbol {
    T(Token),
    Nt(u8),
}

impl Symbol {
    pub fn nt_index(&self) -> Option<u8> {
        match self {
            Symbol::Nt(i) => Some(*i),
            Symbol::T(_) => None,
        }
    }

    pub fn is_nt(&self) -> bool {
        matches!(self, Symbol::Nt(_))
    }

    pub fn token(&self) -> Option<Token> {
        match self {
            Symbol::T(t) => Some(*t),
            Symbol::Nt(_) => None,
        }
    }

    /// Parses `NT_3` as a nonterminal and anything else as a token.
    pub fn parse(text: &str) -> Result<Symbol, Error> {
        if let Some(rest) = text.strip_prefix("NT_") {
            if let Ok(i) = rest.parse::<u8>() {
                if i == 0 {
                    return Err(Error::InvalidSymbol(text.to_string()));
                }
                return Ok(Symbol::Nt(i));
            }
        }
        Ok(Symbol::T(Token::new(text)?))
    }

    /// Ordering by rendered text, stable across processes.
    pub fn text_cmp(&self, other: &Symbol) -> std::cmp::Ordering {
        use std::cmp::Ordering;
        match (self, other) {
            (Symbol::Nt(a), Symbol::Nt(b)) => a.cmp(b),
            (Symbol::Nt(_), Symbol::T(_)) => Ordering::Less,
            (Symbol::T(_), Symbol::Nt(_)) => Ordering::Greater,
            (Symbol::T(a), Symbol::T(b)) => {
                if a == b {
                    Ordering::Equal
                } else {
                    a.as_str().cmp(b.as_str())
                }
            }
        }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::T(t) => write!(f, "{t}"),
            Symbol::Nt(i) => write!(f, "NT_{i}"),
        }
    }
}

impl From<Token> for Symbol {
    fn from(t: Token) -> Self {
        Symbol::T(t)
    }
}

pub fn symbols_to_string(symbols: &[Symbol]) -> String {
    symbols
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_symbols(text: &str) -> Result<Vec<Symbol>, Error> {
    text.split_whitespace().map(Symbol::parse).collect()
}

pub fn terminals(tokens: &[Token]) -> Vec<Symbol> {
    tokens.iter().map(|&t| Symbol::T(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_stable() {
        let a = Token::new("jump").unwrap();
        let b = Token::new("jump").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_str(), "jump");
    }

    #[test]
    fn rejects_bad_tokens() {
        assert!(Token::new("").is_err());
        assert!(Token::new("a b").is_err());
        assert!(Token::new("a\tb").is_err());
    }

    #[test]
    fn parses_nonterminals() {
        assert_eq!(Symbol::parse("NT_2").unwrap(), Symbol::Nt(2));
        assert!(Symbol::parse("NT_0").is_err());
        assert!(matches!(Symbol::parse("NT_x").unwrap(), Symbol::T(_)));
    }

    #[test]
    fn token_round_trip() {
        let text = "walk around right and jump thrice";
        assert_eq!(join_tokens(&tokenize(text)), text);
    }
}
