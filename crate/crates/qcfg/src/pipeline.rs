//! End-to-end run: induce, fit, sample, mix and optionally evaluate.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::augment::{evaluate, mix_balanced, EvalReport};
use crate::chart::Parser;
use crate::error::{Error, Result};
use crate::induction::{induce_with_observer, seed_rules_shared_tokens, InductionConfig};
use crate::io;
use crate::model::{Model, TrainConfig};
use crate::rule::Rule;
use crate::sampler::{sample_dataset, SamplerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub output_cfg: Option<PathBuf>,
    /// Grammar file whose rules seed induction.
    #[serde(default)]
    pub seed_rules: Option<PathBuf>,
    /// Add identity rules for tokens shared by both sides of an example.
    #[serde(default)]
    pub shared_token_seeds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub num_states: usize,
    pub train: TrainConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_states: 2,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub mix_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub induction: InductionConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl RunConfig {
    /// Resolves relative paths against `base`, usually the config's folder.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.train);
        fix(&mut self.out_dir);
        for p in [&mut self.data.test, &mut self.data.output_cfg, &mut self.data.seed_rules].into_iter().flatten() {
            fix(p);
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = io::load_json(path)?;
        cfg.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct Artifacts {
    pub grammar: PathBuf,
    pub params: PathBuf,
    pub synthetic: PathBuf,
    pub augmented: PathBuf,
    pub log: PathBuf,
    pub eval: Option<(PathBuf, EvalReport)>,
}

/// Number of fit steps between likelihood-trace entries in the log.
const TRACE_EVERY: usize = 50;

pub fn run_pipeline(cfg: &RunConfig) -> Result<Artifacts> {
    cfg.induction.validate()?;
    cfg.model.train.validate()?;
    cfg.sampler.validate()?;
    let mut log = String::new();
    let mut emit = |v: serde_json::Value| {
        writeln!(log, "{v}").expect("string write");
    };
    let out = |name: &str| cfg.out_dir.join(name);

    let train = io::load_corpus(&cfg.data.train)?;
    let output_cfg = cfg.data.output_cfg.as_deref().map(io::load_output_cfg).transpose()?;
    let mut seeds: Vec<Rule> = match &cfg.data.seed_rules {
        Some(p) => io::load_grammar(p)?.rules().cloned().collect(),
        None => Vec::new(),
    };
    if cfg.data.shared_token_seeds {
        seeds.extend(seed_rules_shared_tokens(&train));
    }
    emit(json!({"event": "start", "train_examples": train.len(), "seed_rules": seeds.len()}));

    let mut observer = |entry: &crate::induction::IterationLog, _: &crate::grammar::Grammar, _: &[crate::corpus::ExamplePair]| {
        let mut v = serde_json::to_value(entry).expect("log entry serializes");
        v["event"] = json!("induction_step");
        emit(v);
    };
    let induced = induce_with_observer(&train, &seeds, output_cfg.as_ref(), &cfg.induction, &mut observer)?;
    let grammar = induced.grammar;
    emit(json!({"event": "induction_done", "rules": grammar.len(), "exhausted": induced.exhausted}));
    info!("induced {} rules", grammar.len());
    let grammar_path = out("grammar.txt");
    io::save_grammar(&grammar_path, &grammar)?;

    let parser = Parser::new(&grammar);
    let fitted = crate::model::fit(&parser, &train, cfg.model.num_states, &cfg.model.train)?;
    for (step, ll) in fitted.trace.iter().enumerate() {
        if step % TRACE_EVERY == 0 || step + 1 == fitted.trace.len() {
            emit(json!({"event": "fit_step", "step": step, "mean_batch_loglik": ll}));
        }
    }
    let params_path = out("params.json");
    io::save_params(&params_path, &fitted.params)?;
    let model = Model::with_parser(fitted.params.clone(), parser)?;
    let mut joint = 0.0;
    let mut derivable = 0usize;
    for e in train.iter() {
        let ll = model.joint_loglik(e)?;
        if ll.is_finite() {
            joint += ll;
            derivable += 1;
        }
    }
    emit(json!({
        "event": "fit_done",
        "skipped": fitted.skipped,
        "mean_train_joint_loglik": if derivable > 0 { joint / derivable as f64 } else { f64::NAN },
    }));

    let (synthetic, stats) = sample_dataset(&fitted.params, &grammar, output_cfg.as_ref(), &cfg.sampler)?;
    let mut v = serde_json::to_value(&stats).expect("stats serialize");
    v["event"] = json!("sample");
    v["acceptance_rate"] = json!(stats.acceptance_rate());
    v["examples"] = json!(synthetic.len());
    emit(v);
    let synthetic_path = out("synthetic.tsv");
    io::save_corpus(&synthetic_path, &synthetic)?;

    let augmented_path = out("augmented.tsv");
    if synthetic.is_empty() {
        return Err(Error::Precondition("the sampler produced no examples to mix".into()));
    }
    let augmented = mix_balanced(&train, &synthetic, cfg.augment.mix_seed)?;
    emit(json!({"event": "augment", "examples": augmented.len()}));
    io::save_corpus(&augmented_path, &augmented)?;

    let eval = match &cfg.data.test {
        Some(p) => {
            let test = io::load_corpus(p)?;
            let (predictions, report) = evaluate(&model, &test, output_cfg.as_ref())?;
            io::write_text(&out("predictions.txt"), &io::predictions_to_text(&predictions))?;
            let mut v = serde_json::to_value(&report).expect("report serializes");
            v["event"] = json!("eval");
            emit(v);
            let path = out("eval.json");
            io::save_json(&path, &report)?;
            Some((path, report))
        }
        None => None,
    };

    let log_path = out("run_log.jsonl");
    io::write_text(&log_path, &log)?;
    Ok(Artifacts {
        grammar: grammar_path,
        params: params_path,
        synthetic: synthetic_path,
        augmented: augmented_path,
        log: log_path,
        eval,
    })
}
