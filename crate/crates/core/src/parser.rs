//! Bottom-up beam search over a floating grammar.
//!
//! The chart is indexed by (category, size) where size counts rule
//! applications. Cells of size `s` are filled from cells of smaller size, so
//! one pass over increasing sizes builds everything. Each cell keeps its `B`
//! best derivations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::grammar::{terminal_candidates, Category, Rule, RuleKind, Span, Terminal};
use crate::kb::{KnowledgeBase, ValueSet};
use crate::lf::{canonical_string, Executor, LogicalForm, DEFAULT_EXECUTION_CAP};
use crate::macros::{Macro, MacroNode};

#[derive(Debug)]
pub struct Derivation {
    pub rule: Arc<Rule>,
    pub category: Category,
    pub children: Vec<Arc<Derivation>>,
    pub lf: Arc<LogicalForm>,
    pub canonical: Arc<str>,
    /// `None` for binary forms, which are not executed.
    pub denotation: Option<ValueSet>,
    pub size: usize,
    pub span: Option<Span>,
    /// Score of the per-node features summed over the tree, where a child
    /// counts once per occurrence of its hole in the parent's template.
    pub additive: f64,
    pub score: f64,
}

impl Derivation {
    /// Calls `f(node, multiplicity)` for every node, with multiplicities
    /// following repeated holes in templates.
    pub fn visit(&self, multiplicity: f64, f: &mut impl FnMut(&Derivation, f64)) {
        f(self, multiplicity);
        for (child, uses) in self.children.iter().zip(&self.rule.hole_uses) {
            child.visit(multiplicity * *uses as f64, f);
        }
    }

    pub fn is_consistent_with(&self, target: &std::collections::BTreeSet<String>) -> bool {
        self.denotation.as_ref().is_some_and(|d| !d.is_empty() && crate::kb::answer_keys(d) == *target)
    }
}

/// Scores derivations. `node_score` covers features of a single rule
/// application; `root_score` covers features of the derivation as a whole.
pub trait Scorer {
    fn node_score(&self, d: &Derivation) -> f64;
    fn root_score(&self, d: &Derivation) -> f64;
}

pub struct ZeroScorer;

impl Scorer for ZeroScorer {
    fn node_score(&self, _: &Derivation) -> f64 {
        0.0
    }
    fn root_score(&self, _: &Derivation) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct ParseConfig {
    /// Cell capacity; `None` keeps everything.
    pub beam: Option<usize>,
    pub max_size: usize,
    /// Stop once more than this many derivations were generated.
    pub lf_cap: Option<usize>,
    /// Drop unary derivations with empty denotations.
    pub prune_empty: bool,
    pub exec_cap: usize,
}

impl Default for ParseConfig {
    fn default() -> Self {
        ParseConfig { beam: Some(100), max_size: 8, lf_cap: None, prune_empty: true, exec_cap: DEFAULT_EXECUTION_CAP }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("beam size must be at least 1")]
    InvalidBeam,
    #[error("more than {limit} derivations of category {category} and size {size}")]
    SpaceExplosion { category: String, size: usize, limit: usize },
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParseStats {
    /// Every constructed derivation, terminals included.
    pub generated: usize,
    pub terminals: usize,
    pub base_applications: usize,
    pub macro_applications: usize,
    pub beam_pruned: usize,
}

#[derive(Debug, Default)]
pub struct ParseResult {
    /// Root derivations, best first, one per canonical form.
    pub candidates: Vec<Arc<Derivation>>,
    pub stats: ParseStats,
    pub truncated: bool,
    pub stopped_early: bool,
}

type Chart = HashMap<(Category, usize), Vec<Arc<Derivation>>>;

struct Builder<'a> {
    kb: &'a KnowledgeBase,
    scorer: &'a dyn Scorer,
    prune_empty: bool,
    exec_cap: usize,
}

enum Built {
    Kept(Derivation),
    Pruned,
}

impl Builder<'_> {
    fn finish(&self, mut d: Derivation) -> Derivation {
        let mut additive = self.scorer.node_score(&d);
        for (child, uses) in d.children.iter().zip(&d.rule.hole_uses) {
            additive += *uses as f64 * child.additive;
        }
        d.additive = additive;
        d.score = additive + self.scorer.root_score(&d);
        d
    }

    fn terminal(&self, t: &Terminal) -> Built {
        self.make(t.rule.clone(), t.rule.out.clone(), Vec::new(), t.lf.clone(), t.span.clone())
    }

    fn apply(&self, rule: &Arc<Rule>, children: Vec<Arc<Derivation>>) -> Built {
        if let Some(origin) = &rule.origin {
            return match self.expand(origin, &children) {
                Some((lf, denotation)) => self.assemble(rule.clone(), rule.out.clone(), children, lf, None, denotation),
                None => Built::Pruned,
            };
        }
        let lfs: Vec<Arc<LogicalForm>> = children.iter().map(|c| c.lf.clone()).collect();
        let lf = rule.build(&lfs);
        self.make(rule.clone(), rule.out.clone(), children, lf, None)
    }

    fn execute(&self, lf: &LogicalForm, known: &[(&LogicalForm, &ValueSet)]) -> Option<Option<ValueSet>> {
        if lf.is_binary() {
            return Some(None);
        }
        match Executor::with_cap(self.kb, self.exec_cap).with_known(known).unary(lf) {
            Ok(d) if d.is_empty() && self.prune_empty => None,
            Ok(d) => Some(Some(d)),
            Err(_) => None,
        }
    }

    /// Instantiates a macro rule node by node, pruning exactly where the
    /// base grammar would: on an execution error or an empty unary form at
    /// any inner node.
    fn expand(&self, origin: &Macro, children: &[Arc<Derivation>]) -> Option<(Arc<LogicalForm>, Option<ValueSet>)> {
        type Node = (Arc<LogicalForm>, Option<ValueSet>);
        fn go(b: &Builder<'_>, m: &Macro, v: usize, slots: &HashMap<usize, &Arc<Derivation>>) -> Option<Node> {
            match &m.nodes[v] {
                MacroNode::Leaf { .. } => {
                    let d = slots[&v];
                    Some((d.lf.clone(), d.denotation.clone()))
                }
                MacroNode::Apply { rule, children } => {
                    let parts: Vec<Node> = children.iter().map(|&c| go(b, m, c, slots)).collect::<Option<_>>()?;
                    let lfs: Vec<Arc<LogicalForm>> = parts.iter().map(|(lf, _)| lf.clone()).collect();
                    let lf = rule.build(&lfs);
                    let known: Vec<(&LogicalForm, &ValueSet)> =
                        parts.iter().filter_map(|(lf, d)| d.as_ref().map(|d| (&**lf, d))).collect();
                    let den = b.execute(&lf, &known)?;
                    Some((lf, den))
                }
            }
        }
        let slots: HashMap<usize, &Arc<Derivation>> = origin.leaves().into_iter().zip(children).collect();
        go(self, origin, origin.root, &slots)
    }

    fn make(
        &self,
        rule: Arc<Rule>,
        category: Category,
        children: Vec<Arc<Derivation>>,
        lf: Arc<LogicalForm>,
        span: Option<Span>,
    ) -> Built {
        let known: Vec<(&LogicalForm, &ValueSet)> =
            children.iter().filter_map(|c| c.denotation.as_ref().map(|d| (&*c.lf, d))).collect();
        let Some(denotation) = self.execute(&lf, &known) else { return Built::Pruned };
        self.assemble(rule, category, children, lf, span, denotation)
    }

    fn assemble(
        &self,
        rule: Arc<Rule>,
        category: Category,
        children: Vec<Arc<Derivation>>,
        lf: Arc<LogicalForm>,
        span: Option<Span>,
        denotation: Option<ValueSet>,
    ) -> Built {
        let size = 1 + children.iter().map(|c| c.size).sum::<usize>();
        let canonical: Arc<str> = Arc::from(canonical_string(&lf));
        Built::Kept(self.finish(Derivation {
            rule,
            category,
            children,
            lf,
            canonical,
            denotation,
            size,
            span,
            additive: 0.0,
            score: 0.0,
        }))
    }
}

fn rank(a: &Derivation, b: &Derivation) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.canonical.cmp(&b.canonical))
}

/// Sorts best first, drops duplicate forms, and truncates to the beam.
/// Returns how many derivations the beam removed.
fn finalize(cell: &mut Vec<Arc<Derivation>>, beam: Option<usize>) -> usize {
    cell.sort_by(|a, b| rank(a, b));
    let mut seen = HashSet::new();
    cell.retain(|d| seen.insert(d.canonical.clone()));
    match beam {
        Some(b) if cell.len() > b => {
            let dropped = cell.len() - b;
            cell.truncate(b);
            dropped
        }
        _ => 0,
    }
}

/// All ways to split `total` into `parts` positive sizes.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 1..=total.saturating_sub(parts - 1) {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Calls `f` with every combination of one derivation per argument cell.
fn for_each_combination(cells: &[&[Arc<Derivation>]], f: &mut impl FnMut(&[&Arc<Derivation>]) -> bool) -> bool {
    fn go<'c>(
        cells: &[&'c [Arc<Derivation>]],
        acc: &mut Vec<&'c Arc<Derivation>>,
        f: &mut impl FnMut(&[&Arc<Derivation>]) -> bool,
    ) -> bool {
        match cells.split_first() {
            None => f(acc),
            Some((first, rest)) => {
                for d in first.iter() {
                    acc.push(d);
                    let go_on = go(rest, acc, f);
                    acc.pop();
                    if !go_on {
                        return false;
                    }
                }
                true
            }
        }
    }
    go(cells, &mut Vec::with_capacity(cells.len()), f)
}

fn guard_passes(rule: &Rule, children: &[&Arc<Derivation>], kb: &KnowledgeBase) -> bool {
    let refs: Vec<&Derivation> = children.iter().map(|c| &***c).collect();
    (rule.guard)(&refs, kb)
}

/// Parses with the given compositional (base or macro) rules plus the
/// terminal candidates of the utterance. `stop` is checked on each finished
/// cell of `Root` derivations; when it accepts one, the parse ends there.
pub fn parse(
    tokens: &[String],
    kb: &KnowledgeBase,
    rules: &[Arc<Rule>],
    scorer: &dyn Scorer,
    cfg: &ParseConfig,
    stop: Option<&dyn Fn(&Derivation) -> bool>,
) -> Result<ParseResult, ParseError> {
    if cfg.beam == Some(0) {
        return Err(ParseError::InvalidBeam);
    }
    let builder = Builder { kb, scorer, prune_empty: cfg.prune_empty, exec_cap: cfg.exec_cap };
    let mut stats = ParseStats::default();
    let mut chart: Chart = HashMap::new();
    let over_cap = |stats: &ParseStats| cfg.lf_cap.is_some_and(|t| stats.generated > t);
    let mut truncated = false;
    let mut stopped_early = false;

    let mut level: BTreeMap<Category, Vec<Arc<Derivation>>> = BTreeMap::new();
    for t in terminal_candidates(tokens, kb) {
        stats.generated += 1;
        stats.terminals += 1;
        if let Built::Kept(d) = builder.terminal(&t) {
            level.entry(d.category.clone()).or_default().push(Arc::new(d));
        }
        if over_cap(&stats) {
            truncated = true;
            break;
        }
    }
    let mut size = 1;
    loop {
        for (cat, mut cell) in std::mem::take(&mut level) {
            stats.beam_pruned += finalize(&mut cell, cfg.beam);
            if cat == Category::Root && !stopped_early {
                if let Some(stop) = stop {
                    stopped_early = cell.iter().any(|d| stop(d));
                }
            }
            chart.insert((cat, size), cell);
        }
        if truncated || stopped_early || size >= cfg.max_size {
            break;
        }
        size += 1;
        'rules: for rule in rules {
            let k = rule.args.len();
            if k == 0 || k > size - 1 {
                continue;
            }
            for split in compositions(size - 1, k) {
                let cells: Option<Vec<&[Arc<Derivation>]>> = rule
                    .args
                    .iter()
                    .zip(&split)
                    .map(|(c, s)| chart.get(&(c.clone(), *s)).map(|v| v.as_slice()))
                    .collect();
                let Some(cells) = cells else { continue };
                let mut out = Vec::new();
                let finished = for_each_combination(&cells, &mut |children| {
                    if !guard_passes(rule, children, kb) {
                        return true;
                    }
                    stats.generated += 1;
                    match rule.kind {
                        RuleKind::Macro => stats.macro_applications += 1,
                        _ => stats.base_applications += 1,
                    }
                    if let Built::Kept(d) = builder.apply(rule, children.iter().map(|c| (*c).clone()).collect()) {
                        out.push(Arc::new(d));
                    }
                    !over_cap(&stats)
                });
                level.entry(rule.out.clone()).or_default().extend(out);
                if !finished {
                    truncated = true;
                    break 'rules;
                }
            }
        }
    }

    let mut candidates: Vec<Arc<Derivation>> =
        chart.iter().filter(|((c, _), _)| *c == Category::Root).flat_map(|(_, v)| v.iter().cloned()).collect();
    candidates.sort_by(|a, b| rank(a, b).then(a.size.cmp(&b.size)));
    let mut seen = HashSet::new();
    candidates.retain(|d| seen.insert(d.canonical.clone()));
    Ok(ParseResult { candidates, stats, truncated, stopped_early })
}

pub const EXHAUSTIVE_CELL_LIMIT: usize = 1_000_000;

/// Every `Root` form derivable within `max_size`, without beam pruning, by
/// memoized top-down recursion. Maps canonical strings to denotations.
pub fn enumerate_exhaustive(
    tokens: &[String],
    kb: &KnowledgeBase,
    rules: &[Arc<Rule>],
    max_size: usize,
    prune_empty: bool,
) -> Result<BTreeMap<String, ValueSet>, ParseError> {
    struct Enumerator<'a> {
        builder: Builder<'a>,
        rules: &'a [Arc<Rule>],
        terminals: Vec<Terminal>,
        memo: HashMap<(Category, usize), Arc<Vec<Arc<Derivation>>>>,
    }

    impl Enumerator<'_> {
        fn derive(&mut self, cat: &Category, size: usize) -> Result<Arc<Vec<Arc<Derivation>>>, ParseError> {
            if let Some(v) = self.memo.get(&(cat.clone(), size)) {
                return Ok(v.clone());
            }
            let mut out: Vec<Arc<Derivation>> = Vec::new();
            if size == 1 {
                for t in &self.terminals {
                    if t.rule.out == *cat {
                        if let Built::Kept(d) = self.builder.terminal(t) {
                            out.push(Arc::new(d));
                        }
                    }
                }
            } else {
                let rules = self.rules;
                for rule in rules.iter().filter(|r| r.out == *cat && !r.args.is_empty()) {
                    for split in compositions(size - 1, rule.args.len()) {
                        let mut cells = Vec::with_capacity(split.len());
                        for (c, s) in rule.args.iter().zip(&split) {
                            cells.push(self.derive(c, *s)?);
                        }
                        let slices: Vec<&[Arc<Derivation>]> = cells.iter().map(|c| c.as_slice()).collect();
                        let builder = &self.builder;
                        for_each_combination(&slices, &mut |children| {
                            if guard_passes(rule, children, builder.kb) {
                                if let Built::Kept(d) =
                                    builder.apply(rule, children.iter().map(|c| (*c).clone()).collect())
                                {
                                    out.push(Arc::new(d));
                                }
                            }
                            out.len() <= EXHAUSTIVE_CELL_LIMIT
                        });
                        if out.len() > EXHAUSTIVE_CELL_LIMIT {
                            return Err(ParseError::SpaceExplosion {
                                category: cat.to_string(),
                                size,
                                limit: EXHAUSTIVE_CELL_LIMIT,
                            });
                        }
                    }
                }
            }
            let mut seen = HashSet::new();
            out.retain(|d| seen.insert(d.canonical.clone()));
            let out = Arc::new(out);
            self.memo.insert((cat.clone(), size), out.clone());
            Ok(out)
        }
    }

    let mut e = Enumerator {
        builder: Builder { kb, scorer: &ZeroScorer, prune_empty, exec_cap: DEFAULT_EXECUTION_CAP },
        rules,
        terminals: terminal_candidates(tokens, kb),
        memo: HashMap::new(),
    };
    let mut forms = BTreeMap::new();
    for size in 1..=max_size {
        for d in e.derive(&Category::Root, size)?.iter() {
            forms.entry(d.canonical.to_string()).or_insert_with(|| d.denotation.clone().unwrap_or_default());
        }
    }
    Ok(forms)
}
