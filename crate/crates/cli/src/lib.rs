//! Commands behind the `macrogram` binary.

mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use macrogram::dataset::{escape, Dataset};
use macrogram::kb::{load_table, TableFormat};
use macrogram::learner::{TrainingConfig, MACROS_FILE};
use macrogram::macros::MacroStore;
use macrogram::synthetic::SyntheticCorpus;
use macrogram::Learner;

use report::{EvalJson, TrainJson};

const REPORT_FILE: &str = "report.json";

#[derive(Parser)]
#[command(name = "macrogram", version, about = "Semantic parsing over tables with macro grammars")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a parser and write its artifacts.
    Train(TrainArgs),
    /// Predict a dataset and report accuracy.
    Eval(EvalArgs),
    /// Answer one question about one table.
    Predict(PredictArgs),
    /// List induced macros by frequency.
    InspectMacros(InspectArgs),
    /// Write a synthetic dataset.
    GenSynthetic(GenArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Examples TSV (id, utterance, context, targetValue).
    #[arg(long)]
    examples: PathBuf,
    /// Directory that table paths are relative to.
    #[arg(long)]
    tables: PathBuf,
    /// Output directory for the trained artifacts.
    #[arg(long)]
    out: PathBuf,
    /// `key=value` settings file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Beam size B.
    #[arg(long)]
    beam: Option<String>,
    /// Neighbors K whose macros are triggered.
    #[arg(long)]
    neighbors: Option<String>,
    #[arg(long)]
    passes: Option<String>,
    /// Fallback caps T, comma separated, one per pass.
    #[arg(long)]
    fallback_caps: Option<String>,
    #[arg(long)]
    k_max: Option<String>,
    /// L1 strength.
    #[arg(long)]
    l1: Option<String>,
    /// AdaGrad step size.
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    max_size: Option<String>,
    /// Fallback budget m: a count, or `inf`.
    #[arg(long = "m")]
    fallback_limit: Option<String>,
    /// `pairwise` or `marginal`.
    #[arg(long)]
    objective: Option<String>,
    /// `macro` or `base-only`.
    #[arg(long)]
    grammar: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    examples: PathBuf,
    #[arg(long)]
    tables: PathBuf,
    /// Per-example predictions TSV.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Aggregate JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Table file (CSV or TSV).
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    utterance: String,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Show only the most frequent N macros.
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    size: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Errors sorted by exit status.
enum Failure {
    Data(anyhow::Error),
    Config(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

/// Runs one command line (program name first) and returns the exit status:
/// 0 on success, 1 for data errors, 2 for configuration and usage errors.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::InspectMacros(a) => inspect(a),
        Command::GenSynthetic(a) => generate(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            1
        }
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            2
        }
    }
}

fn training_config(a: &TrainArgs) -> Result<TrainingConfig> {
    let mut config = TrainingConfig::default();
    let mut caps_given = a.fallback_caps.is_some();
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        caps_given |= text.lines().any(|l| l.trim_start().starts_with("fallback_caps"));
        config.apply_text(&text)?;
    }
    let flags = [
        ("beam", &a.beam),
        ("neighbors", &a.neighbors),
        ("passes", &a.passes),
        ("fallback_caps", &a.fallback_caps),
        ("k_max", &a.k_max),
        ("l1", &a.l1),
        ("eta", &a.eta),
        ("max_size", &a.max_size),
        ("fallback_limit", &a.fallback_limit),
        ("objective", &a.objective),
        ("grammar", &a.grammar),
        ("seed", &a.seed),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    // Without an explicit schedule, only the first pass falls back.
    if !caps_given {
        let first = config.fallback_caps.first().copied().unwrap_or(5000);
        config.fallback_caps = (0..config.passes).map(|p| if p == 0 { first } else { 0 }).collect();
    }
    config.validate()?;
    Ok(config)
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let config = training_config(&a).map_err(Failure::Config)?;
    let dataset = Dataset::load(&a.examples, &a.tables).map_err(anyhow::Error::from)?;
    let out = Learner::train(&dataset, config.clone()).map_err(|e| Failure::Config(e.into()))?;
    out.learner.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let json = TrainJson::new(&config, &out.report, &out.timing);
    fs::write(a.out.join(REPORT_FILE), serde_json::to_string_pretty(&json).map_err(anyhow::Error::from)? + "\n")
        .context("writing report")?;
    println!(
        "trained on {} examples: coverage {:.3}, {:.1} forms/example, {} macros ({} rules), {} fallback calls",
        out.report.examples,
        out.report.coverage,
        out.report.mean_generated,
        out.report.macros,
        out.report.macro_rules,
        out.report.fallback_calls
    );
    Ok(())
}

fn load_model(dir: &Path) -> Result<Learner> {
    if !dir.join(MACROS_FILE).exists() {
        return Err(anyhow!("no trained model in {}", dir.display()));
    }
    Learner::load(dir).with_context(|| format!("loading model from {}", dir.display()))
}

fn train_report(dir: &Path) -> Option<TrainJson> {
    let text = fs::read_to_string(dir.join(REPORT_FILE)).ok()?;
    report::validate(&text).ok()?;
    serde_json::from_str(&text).ok()
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let learner = load_model(&a.model)?;
    let dataset = Dataset::load(&a.examples, &a.tables).map_err(anyhow::Error::from)?;
    if let Some(first) = dataset.examples.first() {
        learner.predict(&first.utterance, &first.table);
    }
    let started = Instant::now();
    let summary = learner.evaluate(&dataset);
    let ms_per_example = started.elapsed().as_secs_f64() * 1e3 / summary.total.max(1) as f64;

    if let Some(path) = &a.predictions {
        let mut tsv = String::from("id\tpredicted\tgold\tcorrect\n");
        for r in &summary.records {
            let join = |v: &[String]| v.iter().map(|s| escape(s)).collect::<Vec<_>>().join("|");
            tsv.push_str(&format!("{}\t{}\t{}\t{}\n", r.id, join(&r.predicted), join(&r.gold), r.correct));
        }
        fs::write(path, tsv).with_context(|| format!("writing {}", path.display()))?;
    }
    let train = train_report(&a.model);
    let freqs = report::frequencies(
        &learner.store.ranked().iter().map(|e| (e.template.clone(), e.frequency)).collect::<Vec<_>>(),
    );
    let json = EvalJson::new(&summary, train.as_ref(), ms_per_example, freqs);
    let text = serde_json::to_string_pretty(&json).map_err(anyhow::Error::from)? + "\n";
    if let Some(path) = &a.report {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "accuracy {:.3} ({}/{}), {:.1} forms/example, {} base and {} macro rule applications, {:.2} ms/example",
        summary.accuracy,
        summary.correct,
        summary.total,
        summary.mean_generated,
        summary.base_applications,
        summary.macro_applications,
        ms_per_example
    );
    Ok(())
}

fn predict(a: PredictArgs) -> Result<(), Failure> {
    let learner = load_model(&a.model)?;
    let text = fs::read_to_string(&a.table).with_context(|| format!("reading {}", a.table.display()))?;
    let kb = load_table(&text, TableFormat::from_path(&a.table.to_string_lossy()))
        .with_context(|| format!("loading {}", a.table.display()))?;
    let p = learner.predict(&a.utterance, &kb);
    match &p.derivation {
        Some(d) => {
            let answers: Vec<String> = p.denotation().into_iter().flatten().map(|v| v.display_text()).collect();
            println!("form\t{}", d.canonical);
            println!("answer\t{}", answers.join("|"));
        }
        None => {
            println!("form\t-");
            println!("answer\t");
        }
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<(), Failure> {
    let path = a.model.join(MACROS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("no macro store at {}", path.display()))?;
    let store = MacroStore::from_text(&text).with_context(|| format!("reading {}", path.display()))?;
    let ranked = store.ranked();
    let total: u64 = ranked.iter().map(|e| e.frequency).sum();
    println!("rank\tfrequency\tcoverage\ttemplate");
    let mut cumulative = 0;
    for (i, e) in ranked.iter().take(a.top.unwrap_or(usize::MAX)).enumerate() {
        cumulative += e.frequency;
        let coverage = if total == 0 { 0.0 } else { 100.0 * cumulative as f64 / total as f64 };
        println!("{}\t{}\t{coverage:.1}%\t{}", i + 1, e.frequency, e.template);
    }
    Ok(())
}

fn generate(a: GenArgs) -> Result<(), Failure> {
    let corpus = SyntheticCorpus::generate(a.size, a.seed);
    corpus.write(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("{} examples on {} tables in {}", corpus.examples.len(), corpus.tables.len(), a.out.display());
    Ok(())
}
