//! Derivation features. The full list is documented in `FEATURES.md`.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use num_traits::Float;

use super::model::Model;
use crate::kb::Value;
use crate::parser::{Derivation, Scorer};

pub type FeatureVector = BTreeMap<String, f64>;

/// Per-utterance input to featurization: the distinct lemmas of the
/// utterance (determiners removed).
#[derive(Clone, Debug, Default)]
pub struct FeatureContext {
    pub lemmas: Vec<String>,
}

impl FeatureContext {
    pub fn new(lemmas: Vec<String>) -> Self {
        let distinct: BTreeSet<String> = lemmas.into_iter().collect();
        FeatureContext { lemmas: distinct.into_iter().collect() }
    }
}

fn node_predicates(d: &Derivation) -> Vec<String> {
    if d.rule.is_terminal() {
        d.lf.predicates()
    } else {
        d.rule.own_predicates.clone()
    }
}

/// Features of one rule application, excluding its children.
pub fn node_features(d: &Derivation, ctx: &FeatureContext, out: &mut impl FnMut(String, f64)) {
    out(format!("rule:{}", d.rule.id), 1.0);
    for p in node_predicates(d) {
        for l in &ctx.lemmas {
            out(format!("lp:{l}|{p}"), 1.0);
        }
    }
    if let Some(span) = &d.span {
        out(format!("span:{}|{}", span.text, d.canonical), 1.0);
        match &*d.rule.id {
            "ent_exact" => out("anchor:exact".into(), 1.0),
            "ent_approx" => out("anchor:approx".into(), 1.0),
            _ => {}
        }
    }
}

fn denotation_type(d: &Derivation) -> &'static str {
    let Some(values) = &d.denotation else { return "binary" };
    let mut kinds = values.iter().map(|v| match v {
        Value::Row(_) => "rows",
        Value::Cell(_) => "cells",
        Value::Number(_) => "numbers",
        Value::Date(_) => "dates",
        Value::Str(_) => "strings",
    });
    match kinds.next() {
        None => "empty",
        Some(first) if kinds.all(|k| k == first) => first,
        Some(_) => "mixed",
    }
}

/// Features of the derivation as a whole: denotation type and size bucket,
/// and the derivation size.
pub fn root_features(d: &Derivation) -> [String; 2] {
    let n = d.denotation.as_ref().map_or(0, |v| v.len());
    let bucket = if n >= 3 { "3+".to_string() } else { n.to_string() };
    [format!("den:{}|{bucket}", denotation_type(d)), format!("size:{}", d.size)]
}

/// Full feature vector: node features summed over the tree (children
/// weighted by how often their hole occurs) plus whole-derivation features.
pub fn featurize(d: &Derivation, ctx: &FeatureContext) -> FeatureVector {
    let mut fv = FeatureVector::new();
    d.visit(1.0, &mut |node, m| {
        node_features(node, ctx, &mut |name, v| *fv.entry(name).or_insert(0.0) += m * v);
    });
    for name in root_features(d) {
        *fv.entry(name).or_insert(0.0) += 1.0;
    }
    fv.retain(|_, v| *v != 0.0);
    fv
}

/// Scores derivations under a model. Rule-level and whole-derivation
/// scores are cached for the lifetime of one parse.
pub struct ModelScorer<'a, F> {
    model: &'a Model<F>,
    ctx: &'a FeatureContext,
    rule_cache: RefCell<HashMap<Arc<str>, f64>>,
    root_cache: RefCell<HashMap<String, f64>>,
}

impl<'a, F: Float> ModelScorer<'a, F> {
    pub fn new(model: &'a Model<F>, ctx: &'a FeatureContext) -> Self {
        ModelScorer { model, ctx, rule_cache: RefCell::default(), root_cache: RefCell::default() }
    }

    fn sum_node(&self, d: &Derivation) -> f64 {
        let mut s = 0.0;
        node_features(d, self.ctx, &mut |name, v| s += v * self.model.weight_f64(&name));
        s
    }
}

impl<F: Float> Scorer for ModelScorer<'_, F> {
    fn node_score(&self, d: &Derivation) -> f64 {
        if d.rule.is_terminal() {
            return self.sum_node(d);
        }
        if let Some(s) = self.rule_cache.borrow().get(&d.rule.id) {
            return *s;
        }
        let s = self.sum_node(d);
        self.rule_cache.borrow_mut().insert(d.rule.id.clone(), s);
        s
    }

    fn root_score(&self, d: &Derivation) -> f64 {
        root_features(d)
            .into_iter()
            .map(|name| {
                if let Some(s) = self.root_cache.borrow().get(&name) {
                    return *s;
                }
                let s = self.model.weight_f64(&name);
                self.root_cache.borrow_mut().insert(name, s);
                s
            })
            .sum()
    }
}
