//! Online training with macro grammars: trigger macro rules from solved
//! neighbors, parse with them, update on success, and otherwise fall back
//! to the base grammar to induce a new macro.

pub mod features;
pub mod model;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use features::{featurize, FeatureContext, FeatureVector, ModelScorer};
pub use model::{log_probabilities, marginal, pairwise, probabilities, EmptyCandidates, Gradient, Model, ModelError};

use crate::dataset::{Dataset, Example};
use crate::grammar::{base_rules, Rule};
use crate::kb::{answer_keys, match_tokens, KnowledgeBase, ValueSet};
use crate::macros::{extract_macro, MacroStore, StoreError};
use crate::parser::{parse, Derivation, ParseConfig, ParseStats};
use crate::trigger::{lemmas, nearest, preprocess, trigger_rules, KnnIndex, NounFilter};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Pairwise,
    Marginal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrammarMode {
    Macro,
    BaseOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub beam: usize,
    /// Neighbors whose macros are triggered.
    pub neighbors: usize,
    pub passes: usize,
    /// Fallback cap on generated forms, one entry per pass.
    pub fallback_caps: Vec<usize>,
    /// Length of the precomputed neighbor lists.
    pub k_max: usize,
    pub l1: f64,
    pub eta: f64,
    pub max_size: usize,
    /// Total number of fallback parses allowed; `None` is unlimited.
    pub fallback_limit: Option<usize>,
    pub objective: Objective,
    pub grammar: GrammarMode,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            beam: 100,
            neighbors: 40,
            passes: 3,
            fallback_caps: vec![5000, 0, 0],
            k_max: 100,
            l1: 1e-5,
            eta: 0.1,
            max_size: 8,
            fallback_limit: None,
            objective: Objective::Pairwise,
            grammar: GrammarMode::Macro,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{caps} fallback caps given for {passes} passes")]
    ScheduleLength { passes: usize, caps: usize },
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("neighbors ({neighbors}) exceeds k_max ({k_max})")]
    NeighborsAboveMax { neighbors: usize, k_max: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("beam", self.beam), ("passes", self.passes), ("max_size", self.max_size)] {
            if v == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if self.fallback_caps.len() != self.passes {
            return Err(ConfigError::ScheduleLength { passes: self.passes, caps: self.fallback_caps.len() });
        }
        if self.neighbors > self.k_max {
            return Err(ConfigError::NeighborsAboveMax { neighbors: self.neighbors, k_max: self.k_max });
        }
        Ok(())
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let caps: Vec<String> = self.fallback_caps.iter().map(|c| c.to_string()).collect();
        let mut s = String::new();
        let _ = writeln!(s, "beam={}", self.beam);
        let _ = writeln!(s, "neighbors={}", self.neighbors);
        let _ = writeln!(s, "passes={}", self.passes);
        let _ = writeln!(s, "fallback_caps={}", caps.join(","));
        let _ = writeln!(s, "k_max={}", self.k_max);
        let _ = writeln!(s, "l1={:e}", self.l1);
        let _ = writeln!(s, "eta={:e}", self.eta);
        let _ = writeln!(s, "max_size={}", self.max_size);
        let limit = self.fallback_limit.map_or("none".to_string(), |m| m.to_string());
        let _ = writeln!(s, "fallback_limit={limit}");
        let objective = match self.objective {
            Objective::Pairwise => "pairwise",
            Objective::Marginal => "marginal",
        };
        let _ = writeln!(s, "objective={objective}");
        let grammar = match self.grammar {
            GrammarMode::Macro => "macro",
            GrammarMode::BaseOnly => "base-only",
        };
        let _ = writeln!(s, "grammar={grammar}");
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line.split_once('=').map(|(k, v)| (k.trim(), v.trim())).unwrap_or((line, ""));
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue { key: key.to_string(), value: value.to_string() };
        fn num<T: std::str::FromStr>(v: &str, bad: impl Fn() -> ConfigError) -> Result<T, ConfigError> {
            v.parse().map_err(|_| bad())
        }
        match key {
            "beam" => self.beam = num(value, bad)?,
            "neighbors" => self.neighbors = num(value, bad)?,
            "passes" => self.passes = num(value, bad)?,
            "fallback_caps" => {
                self.fallback_caps = value
                    .split(',')
                    .filter(|c| !c.trim().is_empty())
                    .map(|c| num(c.trim(), bad))
                    .collect::<Result<_, _>>()?
            }
            "k_max" => self.k_max = num(value, bad)?,
            "l1" => self.l1 = num(value, bad)?,
            "eta" => self.eta = num(value, bad)?,
            "max_size" => self.max_size = num(value, bad)?,
            "fallback_limit" => {
                self.fallback_limit = match value {
                    "none" | "inf" => None,
                    v => Some(num(v, bad)?),
                }
            }
            "objective" => {
                self.objective = match value {
                    "pairwise" => Objective::Pairwise,
                    "marginal" => Objective::Marginal,
                    _ => return Err(bad()),
                }
            }
            "grammar" => {
                self.grammar = match value {
                    "macro" => GrammarMode::Macro,
                    "base-only" => GrammarMode::BaseOnly,
                    _ => return Err(bad()),
                }
            }
            "seed" => self.seed = num(value, bad)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}

/// Which branch of the training step ran for one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// A consistent form was found with the triggered grammar (or, in
    /// base-only mode, the base grammar) and the parameters were updated.
    Update,
    /// The fallback parse found a consistent form and a macro was induced.
    Fallback,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExampleTrace {
    pub example: usize,
    pub pass: usize,
    pub branch: Branch,
    pub triggered_rules: usize,
    pub candidates: usize,
    /// Forms generated by all parses of this step, fallback included.
    pub generated: usize,
    pub fallback_called: bool,
    pub fallback_generated: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PassReport {
    pub updates: usize,
    pub fallbacks: usize,
    pub skips: usize,
    pub generated: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub examples: usize,
    pub passes: Vec<PassReport>,
    /// Examples with a consistent form found in the last pass.
    pub covered: usize,
    pub coverage: f64,
    /// Generated forms per example per pass, fallback parses included.
    pub mean_generated: f64,
    pub fallback_calls: usize,
    pub macros: usize,
    pub macro_rules: usize,
    /// (template, frequency) by decreasing frequency.
    pub frequencies: Vec<(String, u64)>,
}

/// Wall-clock measurements, kept apart from the deterministic report.
#[derive(Clone, Debug, Default)]
pub struct Timing {
    pub total_ms: f64,
    pub ms_per_example: f64,
}

#[derive(Clone, Debug)]
struct Prepared {
    tokens: Vec<String>,
    ctx: FeatureContext,
}

fn prepare(utterance: &str) -> Prepared {
    Prepared { tokens: match_tokens(utterance), ctx: FeatureContext::new(lemmas(utterance)) }
}

/// Trained state: parameters, macro grammar, and the solved utterances
/// used for triggering.
#[derive(Clone, Debug)]
pub struct Learner<F> {
    pub config: TrainingConfig,
    pub model: Model<F>,
    pub store: MacroStore,
    pub nouns: NounFilter,
    /// Preprocessed training utterances, indexed like the training set.
    pub corpus: Vec<Vec<String>>,
    pub index: KnnIndex,
    pub fallback_calls: usize,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub derivation: Option<Arc<Derivation>>,
    pub stats: ParseStats,
    pub triggered_rules: usize,
}

impl Prediction {
    pub fn denotation(&self) -> Option<&ValueSet> {
        self.derivation.as_ref().and_then(|d| d.denotation.as_ref())
    }
}

pub struct TrainOutcome<F> {
    pub learner: Learner<F>,
    pub report: TrainReport,
    pub traces: Vec<ExampleTrace>,
    pub timing: Timing,
}

fn cast<F: Float>(x: f64) -> F {
    F::from(x).expect("finite f64 converts to any float type")
}

impl<F: Float> Learner<F> {
    /// Fresh state for a training set: noun statistics, preprocessed
    /// utterances and the neighbor index.
    pub fn new(utterances: &[&str], config: TrainingConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let nouns = NounFilter::build(utterances);
        let corpus: Vec<Vec<String>> = utterances.iter().map(|u| preprocess(u, &nouns)).collect();
        let index = KnnIndex::build(&corpus, config.k_max);
        Ok(Learner {
            model: Model::new(cast(config.eta), cast(config.l1)),
            config,
            store: MacroStore::new(),
            nouns,
            corpus,
            index,
            fallback_calls: 0,
        })
    }

    fn parse_config(&self, lf_cap: Option<usize>) -> ParseConfig {
        ParseConfig { beam: Some(self.config.beam), max_size: self.config.max_size, lf_cap, ..ParseConfig::default() }
    }

    fn fallback_allowed(&self, pass: usize) -> bool {
        self.config.fallback_caps[pass] > 0 && self.config.fallback_limit.is_none_or(|m| self.fallback_calls < m)
    }

    /// Gradient step on a candidate list. Returns false when the objective
    /// has nothing to compare.
    fn update(&mut self, candidates: &[Arc<Derivation>], ex: &Example, ctx: &FeatureContext) -> bool {
        let consistent: Vec<bool> = candidates.iter().map(|d| d.is_consistent_with(&ex.target_keys)).collect();
        let grad = match self.config.objective {
            Objective::Pairwise => {
                let pos = consistent.iter().position(|c| *c);
                let neg = consistent.iter().position(|c| !*c);
                let (Some(p), Some(n)) = (pos, neg) else { return false };
                pairwise(&self.model, &featurize(&candidates[p], ctx), &featurize(&candidates[n], ctx)).1
            }
            Objective::Marginal => {
                let fvs: Vec<FeatureVector> = candidates.iter().map(|d| featurize(d, ctx)).collect();
                match marginal(&self.model, &fvs, &consistent) {
                    Some((_, g)) => g,
                    None => return false,
                }
            }
        };
        self.model.step(&grad);
        true
    }

    /// One step of the training loop for training example `i`.
    pub fn train_example(&mut self, i: usize, ex: &Example, pass: usize) -> ExampleTrace {
        let prepared = prepare(&ex.utterance);
        self.step(i, ex, &prepared, pass)
    }

    fn step(&mut self, i: usize, ex: &Example, prepared: &Prepared, pass: usize) -> ExampleTrace {
        let mut trace = ExampleTrace {
            example: i,
            pass,
            branch: Branch::Skip,
            triggered_rules: 0,
            candidates: 0,
            generated: 0,
            fallback_called: false,
            fallback_generated: 0,
        };
        let kb = &*ex.table;
        let rules: Vec<Arc<Rule>> = match self.config.grammar {
            GrammarMode::Macro => trigger_rules(&self.index.neighbors[i], &self.store, self.config.neighbors),
            GrammarMode::BaseOnly => base_rules().to_vec(),
        };
        trace.triggered_rules = rules.len();
        let result = {
            let scorer = ModelScorer::new(&self.model, &prepared.ctx);
            parse(&prepared.tokens, kb, &rules, &scorer, &self.parse_config(None), None).expect("beam is positive")
        };
        trace.generated += result.stats.generated;
        trace.candidates = result.candidates.len();
        let best = result.candidates.iter().find(|d| d.is_consistent_with(&ex.target_keys)).cloned();
        if let Some(best) = best {
            trace.branch = Branch::Update;
            self.update(&result.candidates, ex, &prepared.ctx);
            if self.config.grammar == GrammarMode::Macro {
                if let Some(id) = self.store.macro_for_root_rule(&best.rule.id).map(str::to_string) {
                    self.store.associate(i, best.canonical.to_string(), id);
                }
            }
            return trace;
        }
        if self.config.grammar == GrammarMode::BaseOnly || !self.fallback_allowed(pass) {
            return trace;
        }
        self.fallback_calls += 1;
        trace.fallback_called = true;
        let targets = &ex.target_keys;
        let stop = |d: &Derivation| d.is_consistent_with(targets);
        let fallback = {
            let scorer = ModelScorer::new(&self.model, &prepared.ctx);
            let cfg = self.parse_config(Some(self.config.fallback_caps[pass]));
            parse(&prepared.tokens, kb, base_rules(), &scorer, &cfg, Some(&stop)).expect("beam is positive")
        };
        trace.generated += fallback.stats.generated;
        trace.fallback_generated = fallback.stats.generated;
        if let Some(found) = fallback.candidates.iter().find(|d| d.is_consistent_with(targets)) {
            let id = self.store.insert(&extract_macro(found));
            self.store.associate(i, found.canonical.to_string(), id);
            trace.branch = Branch::Fallback;
        }
        trace
    }

    /// Runs all passes over `dataset`, whose examples must be the ones the
    /// learner was built from.
    pub fn train(dataset: &Dataset, config: TrainingConfig) -> Result<TrainOutcome<F>, ConfigError> {
        let utterances: Vec<&str> = dataset.examples.iter().map(|e| e.utterance.as_str()).collect();
        let mut learner = Learner::new(&utterances, config)?;
        let prepared: Vec<Prepared> = utterances.iter().map(|u| prepare(u)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(learner.config.seed);
        let mut traces = Vec::new();
        let mut passes = Vec::new();
        let started = Instant::now();
        for pass in 0..learner.config.passes {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(&mut rng);
            let mut report = PassReport::default();
            for i in order {
                let t = learner.step(i, &dataset.examples[i], &prepared[i], pass);
                match t.branch {
                    Branch::Update => report.updates += 1,
                    Branch::Fallback => report.fallbacks += 1,
                    Branch::Skip => report.skips += 1,
                }
                report.generated += t.generated;
                traces.push(t);
            }
            passes.push(report);
        }
        let total_ms = started.elapsed().as_secs_f64() * 1e3;
        let n = dataset.len();
        let last = passes.last().cloned().unwrap_or_default();
        let covered = last.updates + last.fallbacks;
        let generated: usize = passes.iter().map(|p| p.generated).sum();
        let report = TrainReport {
            examples: n,
            covered,
            coverage: if n == 0 { 0.0 } else { covered as f64 / n as f64 },
            mean_generated: if n == 0 { 0.0 } else { generated as f64 / (n * passes.len()) as f64 },
            passes,
            fallback_calls: learner.fallback_calls,
            macros: learner.store.len(),
            macro_rules: learner.store.rule_count(),
            frequencies: learner.store.ranked().iter().map(|e| (e.template.clone(), e.frequency)).collect(),
        };
        let timing = Timing {
            total_ms,
            ms_per_example: if n == 0 { 0.0 } else { total_ms / (n * learner.config.passes) as f64 },
        };
        Ok(TrainOutcome { learner, report, traces, timing })
    }

    /// Rules used to parse a new utterance: the macro rules triggered by its
    /// nearest solved training utterances, or the base grammar in base-only
    /// mode.
    pub fn rules_for(&self, utterance: &str) -> Vec<Arc<Rule>> {
        match self.config.grammar {
            GrammarMode::BaseOnly => base_rules().to_vec(),
            GrammarMode::Macro => {
                let query = preprocess(utterance, &self.nouns);
                let neighbors = nearest(&query, &self.corpus, self.config.k_max, None);
                trigger_rules(&neighbors, &self.store, self.config.neighbors)
            }
        }
    }

    /// Highest-scoring root derivation of `utterance` on `kb`.
    pub fn predict(&self, utterance: &str, kb: &KnowledgeBase) -> Prediction {
        let rules = self.rules_for(utterance);
        let prepared = prepare(utterance);
        let scorer = ModelScorer::new(&self.model, &prepared.ctx);
        let result =
            parse(&prepared.tokens, kb, &rules, &scorer, &self.parse_config(None), None).expect("beam is positive");
        Prediction { derivation: result.candidates.first().cloned(), stats: result.stats, triggered_rules: rules.len() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub predicted: Vec<String>,
    pub gold: Vec<String>,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Generated forms per example while predicting.
    pub mean_generated: f64,
    pub base_applications: usize,
    pub macro_applications: usize,
    pub records: Vec<PredictionRecord>,
}

impl<F: Float> Learner<F> {
    /// Predicts every example; an empty prediction counts as incorrect.
    pub fn evaluate(&self, dataset: &Dataset) -> EvalSummary {
        let mut records = Vec::with_capacity(dataset.len());
        let (mut generated, mut base, mut macros) = (0, 0, 0);
        for ex in &dataset.examples {
            let p = self.predict(&ex.utterance, &ex.table);
            generated += p.stats.generated;
            base += p.stats.base_applications;
            macros += p.stats.macro_applications;
            let predicted: Vec<String> =
                p.denotation().map(|d| d.iter().map(|v| v.display_text()).collect()).unwrap_or_default();
            let correct = p.denotation().is_some_and(|d| !d.is_empty() && answer_keys(d) == ex.target_keys);
            records.push(PredictionRecord { id: ex.id.clone(), predicted, gold: ex.targets.clone(), correct });
        }
        let total = records.len();
        let correct = records.iter().filter(|r| r.correct).count();
        EvalSummary {
            total,
            correct,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            mean_generated: if total == 0 { 0.0 } else { generated as f64 / total as f64 },
            base_applications: base,
            macro_applications: macros,
            records,
        }
    }
}

pub const CONFIG_FILE: &str = "config.txt";
pub const MODEL_FILE: &str = "model.txt";
pub const MACROS_FILE: &str = "macros.txt";
pub const ASSOCIATIONS_FILE: &str = "associations.txt";
pub const NOUNS_FILE: &str = "nouns.txt";
pub const CORPUS_FILE: &str = "corpus.txt";
pub const KNN_FILE: &str = "knn.txt";

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{file}: {source}")]
    Io { file: String, source: std::io::Error },
    #[error("{file}: {message}")]
    Format { file: String, message: String },
}

impl<F: Float> Learner<F> {
    /// Artifact files as (name, contents), in a fixed order.
    pub fn artifacts(&self) -> Vec<(&'static str, String)> {
        let corpus: String = self.corpus.iter().map(|toks| toks.join(" ") + "\n").collect();
        vec![
            (CONFIG_FILE, self.config.to_text()),
            (MODEL_FILE, self.model.to_text()),
            (MACROS_FILE, self.store.to_text()),
            (ASSOCIATIONS_FILE, self.store.associations_text()),
            (NOUNS_FILE, self.nouns.to_text()),
            (CORPUS_FILE, corpus),
            (KNN_FILE, self.index.to_text()),
        ]
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, text) in self.artifacts() {
            std::fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, LoadError> {
        let read = |file: &str| {
            std::fs::read_to_string(dir.join(file)).map_err(|source| LoadError::Io { file: file.to_string(), source })
        };
        let format = |file: &str, message: String| LoadError::Format { file: file.to_string(), message };
        let mut config = TrainingConfig::default();
        config.apply_text(&read(CONFIG_FILE)?).map_err(|e| format(CONFIG_FILE, e.to_string()))?;
        let model = Model::from_text(&read(MODEL_FILE)?, cast(config.eta), cast(config.l1))
            .map_err(|e| format(MODEL_FILE, e.to_string()))?;
        let mut store =
            MacroStore::from_text(&read(MACROS_FILE)?).map_err(|e: StoreError| format(MACROS_FILE, e.to_string()))?;
        store.load_associations(&read(ASSOCIATIONS_FILE)?).map_err(|e| format(ASSOCIATIONS_FILE, e.to_string()))?;
        let nouns = NounFilter::from_text(&read(NOUNS_FILE)?).ok_or_else(|| format(NOUNS_FILE, "malformed".into()))?;
        let corpus = read(CORPUS_FILE)?.lines().map(|l| l.split(' ').map(str::to_string).collect()).collect();
        let index = KnnIndex::from_text(&read(KNN_FILE)?).map_err(|e| format(KNN_FILE, e.to_string()))?;
        Ok(Learner { config, model, store, nouns, corpus, index, fallback_calls: 0 })
    }
}

/// Count of examples per branch in each pass, for reporting.
pub fn branch_counts(traces: &[ExampleTrace]) -> BTreeMap<(usize, Branch), usize> {
    let mut out = BTreeMap::new();
    for t in traces {
        *out.entry((t.pass, t.branch)).or_insert(0) += 1;
    }
    out
}
