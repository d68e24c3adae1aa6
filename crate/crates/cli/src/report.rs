//! JSON reports written by `train` and `eval`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use macrogram::learner::{EvalSummary, PassReport, Timing, TrainReport, TrainingConfig};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct MacroFrequency {
    pub template: String,
    pub frequency: u64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PassSummary {
    pub updates: usize,
    pub fallbacks: usize,
    pub skips: usize,
    pub generated: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainJson {
    pub version: u32,
    pub command: String,
    pub config: serde_json::Map<String, Value>,
    pub examples: usize,
    pub covered: usize,
    pub coverage: f64,
    pub mean_generated: f64,
    pub fallback_calls: usize,
    pub macros: usize,
    pub macro_rules: usize,
    pub passes: Vec<PassSummary>,
    pub total_ms: f64,
    pub ms_per_example: f64,
    pub macro_frequencies: Vec<MacroFrequency>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalJson {
    pub version: u32,
    pub command: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Training coverage, when the model directory has a training report.
    pub coverage: Option<f64>,
    pub train_mean_generated: Option<f64>,
    pub predict_mean_generated: f64,
    pub base_applications: usize,
    pub macro_applications: usize,
    pub ms_per_example: f64,
    pub macro_frequencies: Vec<MacroFrequency>,
}

fn config_map(config: &TrainingConfig) -> serde_json::Map<String, Value> {
    config
        .to_text()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
        .collect()
}

pub fn frequencies(pairs: &[(String, u64)]) -> Vec<MacroFrequency> {
    pairs.iter().map(|(t, f)| MacroFrequency { template: t.clone(), frequency: *f }).collect()
}

fn pass_summary(p: &PassReport) -> PassSummary {
    PassSummary { updates: p.updates, fallbacks: p.fallbacks, skips: p.skips, generated: p.generated }
}

impl TrainJson {
    pub fn new(config: &TrainingConfig, report: &TrainReport, timing: &Timing) -> Self {
        TrainJson {
            version: REPORT_VERSION,
            command: "train".into(),
            config: config_map(config),
            examples: report.examples,
            covered: report.covered,
            coverage: report.coverage,
            mean_generated: report.mean_generated,
            fallback_calls: report.fallback_calls,
            macros: report.macros,
            macro_rules: report.macro_rules,
            passes: report.passes.iter().map(pass_summary).collect(),
            total_ms: timing.total_ms,
            ms_per_example: timing.ms_per_example,
            macro_frequencies: frequencies(&report.frequencies),
        }
    }
}

impl EvalJson {
    pub fn new(
        summary: &EvalSummary,
        train: Option<&TrainJson>,
        ms_per_example: f64,
        freqs: Vec<MacroFrequency>,
    ) -> Self {
        EvalJson {
            version: REPORT_VERSION,
            command: "eval".into(),
            total: summary.total,
            correct: summary.correct,
            accuracy: summary.accuracy,
            coverage: train.map(|t| t.coverage),
            train_mean_generated: train.map(|t| t.mean_generated),
            predict_mean_generated: summary.mean_generated,
            base_applications: summary.base_applications,
            macro_applications: summary.macro_applications,
            ms_per_example,
            macro_frequencies: freqs,
        }
    }
}

/// Checks a report's version, command and value ranges.
pub fn validate(text: &str) -> Result<Value, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let version = v.get("version").and_then(Value::as_u64).ok_or("missing version")?;
    if version != u64::from(REPORT_VERSION) {
        return Err(format!("unsupported report version {version}"));
    }
    let unit = |key: &str| match v.get(key).and_then(Value::as_f64) {
        Some(x) if (0.0..=1.0).contains(&x) => Ok(()),
        _ => Err(format!("`{key}` must be in [0, 1]")),
    };
    match v.get("command").and_then(Value::as_str) {
        Some("train") => {
            serde_json::from_value::<TrainJson>(v.clone()).map_err(|e| e.to_string())?;
            unit("coverage")?;
        }
        Some("eval") => {
            let e: EvalJson = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
            unit("accuracy")?;
            if e.correct > e.total {
                return Err("more correct than total".into());
            }
        }
        _ => return Err("unknown command".into()),
    }
    Ok(v)
}
