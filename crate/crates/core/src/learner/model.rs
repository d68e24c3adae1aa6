//! Linear model over sparse features, trained with AdaGrad and an L1
//! proximal step.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use num_traits::Float;
use thiserror::Error;

use super::features::FeatureVector;

pub type Gradient<F> = BTreeMap<String, F>;

#[derive(Clone, Debug)]
pub struct Model<F> {
    weights: HashMap<String, F>,
    squared: HashMap<String, F>,
    pub eta: F,
    pub l1: F,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no candidates to normalize over")]
pub struct EmptyCandidates;

pub const MODEL_HEADER: &str = "# macrogram-model v1";

fn cast<F: Float>(x: f64) -> F {
    F::from(x).expect("finite f64 converts to any float type")
}

impl<F: Float> Model<F> {
    pub fn new(eta: F, l1: F) -> Self {
        Model { weights: HashMap::new(), squared: HashMap::new(), eta, l1 }
    }

    pub fn weight(&self, name: &str) -> F {
        self.weights.get(name).copied().unwrap_or_else(F::zero)
    }

    pub fn weight_f64(&self, name: &str) -> f64 {
        self.weight(name).to_f64().unwrap_or(0.0)
    }

    pub fn set_weight(&mut self, name: &str, w: F) {
        if w == F::zero() {
            self.weights.remove(name);
        } else {
            self.weights.insert(name.to_string(), w);
        }
    }

    /// Nonzero weights, sorted by name.
    pub fn weights(&self) -> Vec<(&str, F)> {
        let mut out: Vec<(&str, F)> = self.weights.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    pub fn score(&self, fv: &FeatureVector) -> F {
        fv.iter().fold(F::zero(), |acc, (k, v)| acc + cast::<F>(*v) * self.weight(k))
    }

    /// One AdaGrad ascent step on `grad` followed by the L1 proximal step,
    /// applied to the coordinates present in `grad`.
    pub fn step(&mut self, grad: &Gradient<F>) {
        for (name, g) in grad {
            if *g == F::zero() {
                continue;
            }
            let acc = self.squared.entry(name.clone()).or_insert_with(F::zero);
            *acc = *acc + *g * *g;
            let rate = self.eta / acc.sqrt();
            let w = self.weight(name) + rate * *g;
            let shrunk = (w.abs() - rate * self.l1).max(F::zero());
            self.set_weight(name, shrunk.copysign(w));
        }
    }

    pub fn accumulator(&self, name: &str) -> F {
        self.squared.get(name).copied().unwrap_or_else(F::zero)
    }

    /// `feature TAB weight TAB accumulator` per line, sorted by feature,
    /// covering every feature with a weight or an accumulator.
    pub fn to_text(&self) -> String {
        let mut names: Vec<&String> = self.weights.keys().chain(self.squared.keys()).collect();
        names.sort();
        names.dedup();
        let mut out = String::from(MODEL_HEADER);
        out.push('\n');
        for name in names {
            let w = self.weight(name).to_f64().unwrap_or(0.0);
            let g = self.accumulator(name).to_f64().unwrap_or(0.0);
            let _ = writeln!(out, "{name}\t{w:e}\t{g:e}");
        }
        out
    }

    pub fn from_text(text: &str, eta: F, l1: F) -> Result<Self, ModelError> {
        let mut model = Model::new(eta, l1);
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, h)| h.trim_end()) != Some(MODEL_HEADER) {
            return Err(ModelError::Malformed { line: 1, message: format!("expected `{MODEL_HEADER}`") });
        }
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: &str| ModelError::Malformed { line: i + 1, message: message.to_string() };
            let mut fields = line.rsplitn(3, '\t');
            let (Some(g), Some(w), Some(name)) = (fields.next(), fields.next(), fields.next()) else {
                return Err(malformed("expected feature, weight and accumulator"));
            };
            let w: f64 = w.parse().map_err(|_| malformed("bad weight"))?;
            let g: f64 = g.parse().map_err(|_| malformed("bad accumulator"))?;
            if !(g >= 0.0) {
                return Err(malformed("negative accumulator"));
            }
            model.set_weight(name, cast(w));
            if g > 0.0 {
                model.squared.insert(name.to_string(), cast(g));
            }
        }
        Ok(model)
    }
}

/// Softmax of `scores`, computed stably.
pub fn probabilities<F: Float>(scores: &[F]) -> Result<Vec<F>, EmptyCandidates> {
    let logs = log_probabilities(scores)?;
    Ok(logs.into_iter().map(|l| l.exp()).collect())
}

pub fn log_probabilities<F: Float>(scores: &[F]) -> Result<Vec<F>, EmptyCandidates> {
    let max = scores.iter().copied().fold(None, |m: Option<F>, s| Some(m.map_or(s, |m| m.max(s))));
    let max = max.ok_or(EmptyCandidates)?;
    let log_z = max + scores.iter().fold(F::zero(), |acc, s| acc + (*s - max).exp()).ln();
    Ok(scores.iter().map(|s| *s - log_z).collect())
}

fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn add_scaled<F: Float>(grad: &mut Gradient<F>, fv: &FeatureVector, scale: F) {
    for (k, v) in fv {
        let e = grad.entry(k.clone()).or_insert_with(F::zero);
        *e = *e + scale * cast::<F>(*v);
    }
}

/// Objective `log σ(s⁺ - s⁻)` for a consistent candidate with features
/// `pos` against an inconsistent one with features `neg`, and its gradient.
pub fn pairwise<F: Float>(model: &Model<F>, pos: &FeatureVector, neg: &FeatureVector) -> (F, Gradient<F>) {
    let margin = model.score(pos) - model.score(neg);
    let q = sigmoid(margin);
    let objective =
        if margin >= F::zero() { -(F::one() + (-margin).exp()).ln() } else { margin - (F::one() + margin.exp()).ln() };
    let mut grad = Gradient::new();
    add_scaled(&mut grad, pos, F::one() - q);
    add_scaled(&mut grad, neg, q - F::one());
    grad.retain(|_, v| *v != F::zero());
    (objective, grad)
}

/// Objective `log Σ_consistent p(z)` over the candidate list and its
/// gradient `E_consistent[φ] - E_all[φ]`. `None` when no candidate is
/// consistent.
pub fn marginal<F: Float>(
    model: &Model<F>,
    features: &[FeatureVector],
    consistent: &[bool],
) -> Option<(F, Gradient<F>)> {
    let scores: Vec<F> = features.iter().map(|fv| model.score(fv)).collect();
    let logp = log_probabilities(&scores).ok()?;
    let good: Vec<usize> = (0..features.len()).filter(|&i| consistent[i]).collect();
    if good.is_empty() {
        return None;
    }
    let good_scores: Vec<F> = good.iter().map(|&i| logp[i]).collect();
    let good_logp = log_probabilities(&good_scores).ok()?;
    let max = good_scores.iter().copied().fold(F::neg_infinity(), F::max);
    let objective = max + good_scores.iter().fold(F::zero(), |acc, s| acc + (*s - max).exp()).ln();
    let mut grad = Gradient::new();
    for (j, &i) in good.iter().enumerate() {
        add_scaled(&mut grad, &features[i], good_logp[j].exp());
    }
    for (i, fv) in features.iter().enumerate() {
        add_scaled(&mut grad, fv, -logp[i].exp());
    }
    grad.retain(|_, v| *v != F::zero());
    Some((objective, grad))
}
