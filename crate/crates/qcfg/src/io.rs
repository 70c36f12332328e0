//! File formats: TSV corpora, plain-text grammars and output CFGs, JSON
//! parameters and configs.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::chart::OutputCfg;
use crate::corpus::{Corpus, ExamplePair};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, GrammarConfig};
use crate::model::ModelParams;
use crate::rule::Rule;
use crate::symbol::{join_tokens, tokenize, Token};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn format_err(origin: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: origin.to_string(),
        line,
        message: message.into(),
    }
}

/// One `input<TAB>output` example per line.
pub fn parse_corpus(text: &str, origin: &str) -> Result<Corpus> {
    let mut examples = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(format_err(
                origin,
                n + 1,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let (x, y) = (tokenize(fields[0]), tokenize(fields[1]));
        if x.is_empty() || y.is_empty() {
            return Err(format_err(origin, n + 1, "empty input or output field"));
        }
        examples.push(ExamplePair { x, y });
    }
    let name = Path::new(origin)
        .file_stem()
        .map_or_else(|| origin.to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Corpus::new(name, examples))
}

pub fn corpus_to_tsv(corpus: &Corpus) -> String {
    corpus.iter().map(|e| format!("{e}\n")).collect()
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    parse_corpus(&read(path)?, &path.display().to_string())
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write(path, &corpus_to_tsv(corpus))
}

/// Inputs, one per line; a TSV file contributes its first column. Blank
/// lines are skipped.
pub fn parse_inputs(text: &str) -> Vec<Vec<Token>> {
    text.lines()
        .map(|l| tokenize(l.split('\t').next().unwrap_or("")))
        .filter(|x| !x.is_empty())
        .collect()
}

pub fn load_inputs(path: &Path) -> Result<Vec<Vec<Token>>> {
    Ok(parse_inputs(&read(path)?))
}

/// Header lines `@max_nonterminals N` and `@allow_repeated_indices B`,
/// then one `alpha ### beta` rule per line. Lines starting with `#` that
/// hold no `###` separator are comments.
pub fn grammar_to_text(grammar: &Grammar) -> String {
    let cfg = grammar.config();
    let mut out = format!(
        "@max_nonterminals {}\n@allow_repeated_indices {}\n",
        cfg.max_nonterminals, cfg.allow_repeated_indices
    );
    for r in grammar.rules() {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_grammar(text: &str, origin: &str) -> Result<Grammar> {
    let mut config = GrammarConfig::default();
    let mut rules: Vec<(usize, Rule)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let is_rule = line.split_whitespace().any(|w| w == "###");
        if line.is_empty() || (line.starts_with('#') && !is_rule) {
            continue;
        }
        if let Some(rest) = line.strip_prefix('@') {
            let (key, value) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let value = value.trim();
            match key {
                "max_nonterminals" => {
                    config.max_nonterminals = value
                        .parse()
                        .map_err(|_| format_err(origin, n + 1, format!("bad max_nonterminals {value:?}")))?
                }
                "allow_repeated_indices" => {
                    config.allow_repeated_indices = value
                        .parse()
                        .map_err(|_| format_err(origin, n + 1, format!("bad allow_repeated_indices {value:?}")))?
                }
                other => return Err(format_err(origin, n + 1, format!("unknown header @{other}"))),
            }
            continue;
        }
        let rule: Rule = line.parse().map_err(|e: Error| format_err(origin, n + 1, e.to_string()))?;
        rules.push((n + 1, rule));
    }
    let mut g = Grammar::new(config);
    for (line, r) in rules {
        g.insert(r).map_err(|e| format_err(origin, line, e.to_string()))?;
    }
    Ok(g)
}

pub fn load_grammar(path: &Path) -> Result<Grammar> {
    parse_grammar(&read(path)?, &path.display().to_string())
}

pub fn save_grammar(path: &Path, grammar: &Grammar) -> Result<()> {
    write(path, &grammar_to_text(grammar))
}

pub fn load_output_cfg(path: &Path) -> Result<OutputCfg> {
    OutputCfg::parse_named(&read(path)?, &path.display().to_string())
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    serde_json::from_str(&read(path)?).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    write(path, &params.to_json())
}

/// Any JSON document; unknown keys are rejected where the type says so.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

pub fn save_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })?;
    write(path, &(text + "\n"))
}

/// Writes one prediction per line, `ABSTAIN` for none.
pub fn predictions_to_text(predictions: &[Option<Vec<Token>>]) -> String {
    predictions
        .iter()
        .map(|p| match p {
            Some(y) => join_tokens(y) + "\n",
            None => "ABSTAIN\n".to_string(),
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write(path, text)
}
