use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser as ClapParser, Subcommand, ValueEnum};
use log::info;

use qcfg::augment::{evaluate, hard_em_relabel, mix_balanced};
use qcfg::induction::{induce_with_observer, seed_rules_shared_tokens, InductionConfig, IterationLog};
use qcfg::io;
use qcfg::model::{fit, Model, TrainConfig};
use qcfg::pipeline::{run_pipeline, RunConfig};
use qcfg::sampler::{sample_dataset, SamplerConfig, Temperature};
use qcfg::{Corpus, ExamplePair, Grammar, OutputCfg, Parser, Rule};

#[derive(ClapParser)]
#[command(name = "qcfg", version, about = "Induce QCFGs, fit latent-state models, parse and sample synthetic data")]
struct Cli {
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Induce a grammar from a TSV corpus.
    Induce(InduceArgs),
    /// Fit model parameters for a grammar.
    Fit(FitArgs),
    /// Predict outputs for inputs, one per line (ABSTAIN when none).
    Parse(ParseArgs),
    /// Sample synthetic examples.
    Sample(SampleArgs),
    /// Mix original and synthetic examples in equal parts.
    Augment(AugmentArgs),
    /// Pseudo-label unlabeled inputs with the model's best parse.
    Relabel(RelabelArgs),
    /// Exact-match evaluation on a labeled test set.
    Eval(EvalArgs),
    /// Run induce, fit, sample and augment from one JSON config.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Scan,
    Cogs,
    Geoquery,
    Smcalflow,
}

#[derive(Args)]
struct InductionArgs {
    /// Hyperparameter preset.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// JSON induction config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k_alpha: Option<f64>,
    #[arg(long)]
    k_beta: Option<f64>,
    #[arg(long)]
    terminal_weight: Option<f64>,
    #[arg(long)]
    max_nonterminals: Option<usize>,
    #[arg(long)]
    partitions: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Seed for sampled co-occurrence statistics.
    #[arg(long)]
    induction_seed: Option<u64>,
}

impl InductionArgs {
    fn build(&self) -> Result<InductionConfig> {
        if self.preset.is_some() && self.config.is_some() {
            bail!(Usage("--preset and --config are mutually exclusive".into()));
        }
        let mut cfg = match (&self.config, self.preset) {
            (Some(p), _) => io::load_json(p)?,
            (None, Some(Preset::Scan)) => InductionConfig::scan(),
            (None, Some(Preset::Cogs)) => InductionConfig::cogs(),
            (None, Some(Preset::Geoquery)) => InductionConfig::geoquery(),
            (None, Some(Preset::Smcalflow)) => InductionConfig::smcalflow(),
            (None, None) => InductionConfig::default(),
        };
        if let Some(v) = self.k_alpha {
            cfg.k_alpha = v;
        }
        if let Some(v) = self.k_beta {
            cfg.k_beta = v;
        }
        if let Some(v) = self.terminal_weight {
            cfg.terminal_weight = v;
        }
        if let Some(v) = self.max_nonterminals {
            cfg.max_nonterminals = v;
        }
        if let Some(v) = self.partitions {
            cfg.partitions = v;
        }
        if let Some(v) = self.max_steps {
            cfg.max_steps = v;
        }
        if let Some(v) = self.induction_seed {
            cfg.rng_seed = v;
        }
        cfg.validate().map_err(|e| Usage(format!("induction settings: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct InduceArgs {
    #[arg(long)]
    train: PathBuf,
    /// Where to write the grammar.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    output_cfg: Option<PathBuf>,
    /// Grammar file whose rules seed induction.
    #[arg(long)]
    seed_rules: Option<PathBuf>,
    /// Seed identity rules for tokens shared by input and output.
    #[arg(long)]
    shared_token_seeds: bool,
    /// JSONL file for the per-iteration trace.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    induction: InductionArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Number of latent states.
    #[arg(long, default_value_t = 2)]
    states: usize,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Normalize over the rules in each batch only (on|off; default by grammar size).
    #[arg(long)]
    batch_restricted: Option<bool>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn build(&self) -> Result<TrainConfig> {
        if self.states == 0 {
            bail!(Usage("--states must be at least 1".into()));
        }
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            steps: self.steps.unwrap_or(d.steps),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            batch_restricted_normalization: self.batch_restricted,
            rng_seed: self.seed,
            restarts: self.restarts.unwrap_or(d.restarts),
        };
        cfg.validate()
            .map_err(|e| Usage(format!("--lr/--batch-size/--restarts: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    train: PathBuf,
    /// Where to write the parameters (JSON).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train_args: TrainArgs,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Inputs, one per line or as the first TSV column; stdin when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output_cfg: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    count: usize,
    /// Positive number, or `inf` for uniform rule choice.
    #[arg(long, default_value = "1")]
    temperature: String,
    /// Logit bias for rules with more nonterminals than --delta-threshold.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    delta_threshold: usize,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    #[arg(long)]
    output_cfg: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Drop exact duplicate pairs.
    #[arg(long)]
    dedup: bool,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    synthetic: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RelabelArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    params: PathBuf,
    /// Inputs, one per line.
    #[arg(long)]
    unlabeled: PathBuf,
    /// Pseudo-labeled examples, each repeated --dup times.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    dup: usize,
    #[arg(long)]
    output_cfg: Option<PathBuf>,
    /// Labeled data; with --params-out, refit on it plus the pseudo-labels.
    #[arg(long, requires = "params_out")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    params_out: Option<PathBuf>,
    /// Re-induce the grammar before refitting (writes --grammar-out).
    #[arg(long, requires_all = ["train", "grammar_out"])]
    reinduce: bool,
    #[arg(long)]
    grammar_out: Option<PathBuf>,
    #[command(flatten)]
    train_args: TrainArgs,
    #[command(flatten)]
    induction: InductionArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// JSON report with the covered / not-covered breakdown.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    output_cfg: Option<PathBuf>,
    /// Also write one prediction per line here.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (JSON); relative paths are taken from its folder.
    #[arg(long)]
    config: PathBuf,
}

/// A problem with how the command was invoked.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<qcfg::Error>() {
            return match e {
                e if e.is_capacity() => 3,
                qcfg::Error::Precondition(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn load_cfg(path: Option<&Path>) -> Result<Option<OutputCfg>> {
    Ok(path.map(io::load_output_cfg).transpose()?)
}

fn load_model<'g>(grammar: &'g Grammar, params: &Path) -> Result<Model<'g>> {
    let p = io::load_params(params)?;
    Model::new(p, grammar).with_context(|| format!("{} does not match the grammar", params.display()))
}

fn induce_cmd(args: &InduceArgs) -> Result<()> {
    let cfg = args.induction.build()?;
    let train = io::load_corpus(&args.train)?;
    let output_cfg = load_cfg(args.output_cfg.as_deref())?;
    let mut seeds: Vec<Rule> = match &args.seed_rules {
        Some(p) => io::load_grammar(p)?.rules().cloned().collect(),
        None => Vec::new(),
    };
    if args.shared_token_seeds {
        seeds.extend(seed_rules_shared_tokens(&train));
    }
    let mut trace = String::new();
    let mut observer = |entry: &IterationLog, _: &Grammar, _: &[ExamplePair]| {
        info!(
            "partition {} step {}: objective {:.2}, {} rules",
            entry.partition, entry.step, entry.objective, entry.grammar_size
        );
        trace.push_str(&serde_json::to_string(entry).expect("log entry serializes"));
        trace.push('\n');
    };
    let out = induce_with_observer(&train, &seeds, output_cfg.as_ref(), &cfg, &mut observer)?;
    io::save_grammar(&args.out, &out.grammar)?;
    if let Some(p) = &args.log {
        io::write_text(p, &trace)?;
    }
    eprintln!(
        "{} rules written to {}{}",
        out.grammar.len(),
        args.out.display(),
        if out.exhausted { " (step budget exhausted)" } else { "" }
    );
    Ok(())
}

fn fit_cmd(args: &FitArgs) -> Result<()> {
    let cfg = args.train_args.build()?;
    let grammar = io::load_grammar(&args.grammar)?;
    let train = io::load_corpus(&args.train)?;
    let parser = Parser::new(&grammar);
    let report = fit(&parser, &train, args.train_args.states, &cfg)?;
    io::save_params(&args.out, &report.params)?;
    eprintln!(
        "fitted {} parameters on {} examples ({} underivable skipped)",
        report.params.num_parameters(),
        train.len() - report.skipped,
        report.skipped
    );
    Ok(())
}

fn parse_cmd(args: &ParseArgs) -> Result<()> {
    let grammar = io::load_grammar(&args.grammar)?;
    let model = load_model(&grammar, &args.params)?;
    let output_cfg = load_cfg(args.output_cfg.as_deref())?;
    let inputs = match &args.input {
        Some(p) => io::load_inputs(p)?,
        None => {
            let mut text = String::new();
            std::io::stdin().read_to_string(&mut text).context("reading stdin")?;
            io::parse_inputs(&text)
        }
    };
    let mut predictions = Vec::with_capacity(inputs.len());
    for x in &inputs {
        predictions.push(model.viterbi_parse(x, output_cfg.as_ref())?.map(|(y, _)| y));
    }
    print!("{}", io::predictions_to_text(&predictions));
    Ok(())
}

fn sample_cmd(args: &SampleArgs) -> Result<()> {
    let temperature: Temperature = args
        .temperature
        .parse()
        .map_err(|e| Usage(format!("--temperature: {e}")))?;
    let cfg = SamplerConfig {
        count: args.count,
        temperature,
        nt_bias: args.delta,
        nt_bias_threshold: args.delta_threshold,
        max_depth: args.max_depth,
        rng_seed: args.seed,
        dedup: args.dedup,
    };
    cfg.validate()
        .map_err(|e| Usage(format!("--delta/--max-depth: {e}")))?;
    let grammar = io::load_grammar(&args.grammar)?;
    let params = io::load_params(&args.params)?;
    let output_cfg = load_cfg(args.output_cfg.as_deref())?;
    let (corpus, stats) = sample_dataset(&params, &grammar, output_cfg.as_ref(), &cfg)?;
    io::save_corpus(&args.out, &corpus)?;
    eprintln!(
        "{} examples written to {} (acceptance rate {:.4}, {} depth rejects, {} dead ends)",
        corpus.len(),
        args.out.display(),
        stats.acceptance_rate(),
        stats.depth_rejects,
        stats.dead_ends
    );
    Ok(())
}

fn augment_cmd(args: &AugmentArgs) -> Result<()> {
    let train = io::load_corpus(&args.train)?;
    let synthetic = io::load_corpus(&args.synthetic)?;
    if train.is_empty() {
        bail!(Usage(format!("--train {} is empty", args.train.display())));
    }
    if synthetic.is_empty() {
        bail!(Usage(format!("--synthetic {} is empty", args.synthetic.display())));
    }
    let mixed = mix_balanced(&train, &synthetic, args.seed)?;
    io::save_corpus(&args.out, &mixed)?;
    eprintln!("{} examples written to {}", mixed.len(), args.out.display());
    Ok(())
}

fn relabel_cmd(args: &RelabelArgs) -> Result<()> {
    if args.dup == 0 {
        bail!(Usage("--dup must be at least 1".into()));
    }
    let grammar = io::load_grammar(&args.grammar)?;
    let model = load_model(&grammar, &args.params)?;
    let output_cfg = load_cfg(args.output_cfg.as_deref())?;
    let inputs = io::load_inputs(&args.unlabeled)?;
    let (pseudo, stats) = hard_em_relabel(&model, &inputs, output_cfg.as_ref())?;
    let repeated: Vec<ExamplePair> = (0..args.dup).flat_map(|_| pseudo.examples.iter().cloned()).collect();
    io::save_corpus(&args.out, &Corpus::new("pseudo", repeated.clone()))?;
    eprintln!(
        "{} of {} inputs labeled ({} underivable, {} rejected by the output CFG)",
        stats.kept,
        inputs.len(),
        stats.underivable,
        stats.rejected_by_cfg
    );
    let (Some(train), Some(params_out)) = (&args.train, &args.params_out) else {
        return Ok(());
    };
    let mut combined = io::load_corpus(train)?;
    combined.examples.extend(repeated);
    let cfg = args.train_args.build()?;
    let new_grammar;
    let grammar = if args.reinduce {
        let icfg = args.induction.build()?;
        new_grammar = qcfg::induction::induce(&combined, &[], output_cfg.as_ref(), &icfg)?.grammar;
        let path = args.grammar_out.as_ref().expect("clap enforces --grammar-out");
        io::save_grammar(path, &new_grammar)?;
        &new_grammar
    } else {
        &grammar
    };
    let report = fit(&Parser::new(grammar), &combined, args.train_args.states, &cfg)?;
    io::save_params(params_out, &report.params)?;
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<()> {
    let grammar = io::load_grammar(&args.grammar)?;
    let model = load_model(&grammar, &args.params)?;
    let output_cfg = load_cfg(args.output_cfg.as_deref())?;
    let test = io::load_corpus(&args.test)?;
    let (predictions, report) = evaluate(&model, &test, output_cfg.as_ref())?;
    io::save_json(&args.report, &report)?;
    if let Some(p) = &args.predictions {
        io::write_text(p, &io::predictions_to_text(&predictions))?;
    }
    eprintln!(
        "exact match {:.2}% on {} examples",
        100.0 * report.overall.accuracy,
        report.overall.total
    );
    Ok(())
}

fn run_cmd(args: &RunArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config).map_err(|e| match e {
        qcfg::Error::Json { context, source } => anyhow!(Usage(format!("{context}: {source}"))),
        other => anyhow!(other),
    })?;
    let artifacts = run_pipeline(&cfg)?;
    eprintln!("artifacts written to {}", cfg.out_dir.display());
    if let Some((path, report)) = &artifacts.eval {
        eprintln!("exact match {:.2}% ({})", 100.0 * report.overall.accuracy, path.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!(Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::Induce(a) => induce_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Parse(a) => parse_cmd(a),
        Command::Sample(a) => sample_cmd(a),
        Command::Augment(a) => augment_cmd(a),
        Command::Relabel(a) => relabel_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Run(a) => run_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
