//! Categories, grammar rules and the base floating grammar.
//!
//! Terminal rules turn utterance spans (anchored) or nothing at all
//! (floating) into entities, relations and sets. Compositional rules combine
//! derivations of smaller size. Every rule builds its logical form by
//! substituting the children's forms into a template with holes `?0..?k`.

use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::kb::{match_tokens, parse_date, Date, KnowledgeBase, Relation, Value, ValueSet};
use crate::lf::build::*;
use crate::lf::{render_with_slots, AggregateKind, CompareOp, LogicalForm, SuperlativeKind};
use crate::macros::Macro;
use crate::parser::Derivation;
use crate::trigger::is_function_word;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Ent,
    Rel,
    Set,
    Root,
    /// A sub-macro category, named by the sub-macro's serialization.
    Macro(Arc<str>),
}

impl Category {
    pub fn parse(s: &str) -> Option<Category> {
        Some(match s {
            "Ent" => Category::Ent,
            "Rel" => Category::Rel,
            "Set" => Category::Set,
            "Root" => Category::Root,
            _ => Category::Macro(Arc::from(s.strip_prefix('{')?.strip_suffix('}')?)),
        })
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Ent => f.write_str("Ent"),
            Category::Rel => f.write_str("Rel"),
            Category::Set => f.write_str("Set"),
            Category::Root => f.write_str("Root"),
            Category::Macro(name) => write!(f, "{{{name}}}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleKind {
    Anchored,
    Floating,
    Compositional,
    Macro,
}

/// Applicability check run on the children before the rule builds anything.
pub type Guard = fn(&[&Derivation], &KnowledgeBase) -> bool;

fn always(_: &[&Derivation], _: &KnowledgeBase) -> bool {
    true
}

pub struct Rule {
    pub id: Arc<str>,
    pub kind: RuleKind,
    pub args: Vec<Category>,
    pub out: Category,
    /// Output form with `Hole(i)` standing for the i-th child. Terminal
    /// rules carry `?0`, filled by the matched content.
    pub template: Arc<LogicalForm>,
    pub guard: Guard,
    pub guard_doc: &'static str,
    /// For macro rules: the sub-macro this rule was built from. Its leaves,
    /// in order, correspond to the rule's arguments.
    pub origin: Option<Arc<Macro>>,
    /// How many times each argument's hole occurs in the template.
    pub hole_uses: Vec<usize>,
    /// Predicates of the template itself, excluding what the holes supply.
    pub own_predicates: Vec<String>,
}

impl fmt::Debug for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Rule({})", self.id)
    }
}

fn count_holes(z: &LogicalForm, uses: &mut [usize]) {
    if let LogicalForm::Hole(i) = z {
        if let Some(n) = uses.get_mut(*i) {
            *n += 1;
        }
    }
    for c in z.children() {
        count_holes(c, uses);
    }
}

impl Rule {
    pub fn new(
        id: &str,
        kind: RuleKind,
        args: Vec<Category>,
        out: Category,
        template: Arc<LogicalForm>,
        guard: Guard,
        guard_doc: &'static str,
    ) -> Rule {
        let mut hole_uses = vec![0; args.len()];
        count_holes(&template, &mut hole_uses);
        let own_predicates =
            if matches!(kind, RuleKind::Anchored | RuleKind::Floating) { Vec::new() } else { template.predicates() };
        Rule { id: Arc::from(id), kind, args, out, template, guard, guard_doc, origin: None, hole_uses, own_predicates }
    }

    pub fn macro_rule(id: &str, args: Vec<Category>, out: Category, template: Arc<LogicalForm>, origin: Macro) -> Rule {
        let mut rule = Rule::new(id, RuleKind::Macro, args, out, template, always, "");
        rule.origin = Some(Arc::new(origin));
        rule
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.kind, RuleKind::Anchored | RuleKind::Floating)
    }

    /// Instantiates the template with the children's forms.
    pub fn build(&self, children: &[Arc<LogicalForm>]) -> Arc<LogicalForm> {
        self.template.substitute(children)
    }

    /// Rule signature as `c1 + c2 -> out[template]`, with holes shown as
    /// `z1..zk`.
    pub fn signature(&self) -> String {
        let template = render_with_slots(&self.template, &mut |i| format!("z{}", i + 1));
        let lhs = if self.args.is_empty() {
            "span".to_string()
        } else {
            self.args.iter().enumerate().map(|(i, c)| format!("{c}[z{}]", i + 1)).collect::<Vec<_>>().join(" + ")
        };
        format!("{lhs} -> {}[{template}]", self.out)
    }
}

// ---- guards -------------------------------------------------------------

fn den<'a>(d: &'a Derivation) -> &'a ValueSet {
    static EMPTY: ValueSet = ValueSet::new();
    d.denotation.as_ref().unwrap_or(&EMPTY)
}

fn all(d: &Derivation, f: impl Fn(&Value) -> bool) -> bool {
    let s = den(d);
    !s.is_empty() && s.iter().all(f)
}

fn rows(d: &Derivation) -> bool {
    all(d, Value::is_row)
}

fn cells(d: &Derivation) -> bool {
    all(d, Value::is_cell)
}

fn numbers(d: &Derivation) -> bool {
    all(d, |v| matches!(v, Value::Number(_)))
}

fn dates(d: &Derivation) -> bool {
    all(d, |v| matches!(v, Value::Date(_)))
}

fn is_all_rows(d: &Derivation) -> bool {
    matches!(*d.lf, LogicalForm::AllRows)
}

fn atomic(d: &Derivation) -> Option<&Relation> {
    match &*d.lf {
        LogicalForm::Relation(r) => Some(r),
        _ => None,
    }
}

fn join_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    match atomic(c[0]) {
        Some(Relation::Column(_)) => cells(c[1]),
        Some(Relation::NumProp) => numbers(c[1]),
        Some(Relation::DateProp) => dates(c[1]),
        _ => false,
    }
}

fn revjoin_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    match atomic(c[0]) {
        Some(Relation::Column(_)) => rows(c[1]),
        Some(Relation::NumProp) | Some(Relation::DateProp) => cells(c[1]),
        _ => false,
    }
}

fn and_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    rows(c[0]) && rows(c[1]) && !is_all_rows(c[0]) && !is_all_rows(c[1]) && c[0].canonical < c[1].canonical
}

fn or_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    cells(c[0]) && cells(c[1]) && c[0].canonical < c[1].canonical
}

fn count_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    rows(c[0]) || cells(c[0])
}

fn aggregate_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    numbers(c[0]) && den(c[0]).len() >= 2
}

fn superlative_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    let set = c[0];
    if den(set).len() < 2 {
        return false;
    }
    match &*c[1].lf {
        LogicalForm::Relation(Relation::Column(_)) => rows(set),
        LogicalForm::Lambda(..) => cells(set),
        _ => false,
    }
}

fn index_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    rows(c[0]) && den(c[0]).len() >= 2
}

fn step_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    rows(c[0]) && !is_all_rows(c[0])
}

fn compare_guard(c: &[&Derivation], kb: &KnowledgeBase) -> bool {
    let s = den(c[0]);
    s.len() == 1
        && match s.iter().next() {
            Some(Value::Number(_)) => true,
            Some(Value::Cell(e)) => kb.cell_number(e).is_some(),
            _ => false,
        }
}

fn sub_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    numbers(c[0]) && numbers(c[1]) && den(c[0]).len() == 1 && den(c[1]).len() == 1 && c[0].canonical != c[1].canonical
}

fn compose_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    matches!((atomic(c[0]), atomic(c[1])), (Some(Relation::Column(a)), Some(Relation::Column(b))) if a != b)
}

fn root_guard(c: &[&Derivation], _: &KnowledgeBase) -> bool {
    !den(c[0]).iter().any(Value::is_row)
}

// ---- rule table ---------------------------------------------------------

fn by_property(b: Arc<LogicalForm>) -> Arc<LogicalForm> {
    lambda(0, join(reverse(rel(Relation::NumProp)), join(reverse(b), var(0))))
}

fn compositional() -> Vec<Rule> {
    use Category::*;
    let c = |id: &str, args: Vec<Category>, out: Category, t: Arc<LogicalForm>, g: Guard, doc: &'static str| {
        Rule::new(id, RuleKind::Compositional, args, out, t, g, doc)
    };
    let mut rules = vec![
        c("lift", vec![Ent], Set, hole(0), always, "-"),
        c(
            "join",
            vec![Rel, Set],
            Set,
            join(hole(0), hole(1)),
            join_guard,
            "z1 atomic; column needs cells, Num numbers, Date dates",
        ),
        c(
            "revjoin",
            vec![Rel, Set],
            Set,
            join(reverse(hole(0)), hole(1)),
            revjoin_guard,
            "z1 atomic; column needs rows, Num/Date need cells",
        ),
        c("and", vec![Set, Set], Set, and(hole(0), hole(1)), and_guard, "rows, neither all rows, z1 < z2"),
        c("or", vec![Ent, Ent], Set, or(hole(0), hole(1)), or_guard, "cells, z1 < z2"),
        c("count", vec![Set], Set, count(hole(0)), count_guard, "rows or cells"),
    ];
    for k in AggregateKind::ALL {
        rules.push(c(k.name(), vec![Set], Set, aggregate(k, hole(0)), aggregate_guard, "numbers, at least 2"));
    }
    for (id, kind) in [("argmax_rel", SuperlativeKind::Argmax), ("argmin_rel", SuperlativeKind::Argmin)] {
        let t = superlative(kind, hole(0), by_property(hole(1)));
        rules.push(c(
            id,
            vec![Set, Rel],
            Set,
            t,
            superlative_guard,
            "at least 2; rows with a column, or cells with a composed relation",
        ));
    }
    for (id, kind) in [("last", SuperlativeKind::Argmax), ("first", SuperlativeKind::Argmin)] {
        let t = superlative(kind, hole(0), rel(Relation::Index));
        rules.push(c(id, vec![Set], Set, t, index_guard, "rows, at least 2"));
    }
    rules.push(c(
        "next",
        vec![Set],
        Set,
        join(reverse(rel(Relation::Next)), hole(0)),
        step_guard,
        "rows, not all rows",
    ));
    rules.push(c("prev", vec![Set], Set, join(rel(Relation::Next), hole(0)), step_guard, "rows, not all rows"));
    for (id, op) in
        [("cmp_gt", CompareOp::Gt), ("cmp_lt", CompareOp::Lt), ("cmp_ge", CompareOp::Ge), ("cmp_le", CompareOp::Le)]
    {
        let t = join(rel(Relation::NumProp), compare(op, hole(0)));
        rules.push(c(id, vec![Ent], Set, t, compare_guard, "a number or a numeric cell"));
    }
    rules.push(c("sub", vec![Set, Set], Set, sub(hole(0), hole(1)), sub_guard, "single numbers, z1 != z2"));
    rules.push(c(
        "compose",
        vec![Rel, Rel],
        Rel,
        lambda(0, join(reverse(hole(0)), join(hole(1), var(0)))),
        compose_guard,
        "two distinct columns",
    ));
    rules.push(c("root", vec![Set], Root, hole(0), root_guard, "no rows"));
    rules
}

fn terminals() -> Vec<Rule> {
    use Category::*;
    let t = |id: &str, kind: RuleKind, out: Category, doc: &'static str| {
        let template = if id == "set_allrows" { all_rows() } else { hole(0) };
        Rule::new(id, kind, vec![], out, template, always, doc)
    };
    vec![
        t("ent_exact", RuleKind::Anchored, Ent, "span equals a cell's text"),
        t(
            "ent_approx",
            RuleKind::Anchored,
            Ent,
            "similarity >= 0.8 or word prefix; span >= 4 chars, not only function words",
        ),
        t("ent_number", RuleKind::Anchored, Ent, "span is a number"),
        t("ent_date", RuleKind::Anchored, Ent, "span is a year or `month day year`"),
        t("rel_float", RuleKind::Floating, Rel, "every column, Num, Date"),
        t("set_allrows", RuleKind::Floating, Set, "-"),
    ]
}

/// The base compositional rules, in application order.
pub fn base_rules() -> &'static [Arc<Rule>] {
    static RULES: OnceLock<Vec<Arc<Rule>>> = OnceLock::new();
    RULES.get_or_init(|| compositional().into_iter().map(Arc::new).collect())
}

pub fn terminal_rules() -> &'static [Arc<Rule>] {
    static RULES: OnceLock<Vec<Arc<Rule>>> = OnceLock::new();
    RULES.get_or_init(|| terminals().into_iter().map(Arc::new).collect())
}

pub fn terminal_rule(id: &str) -> &'static Arc<Rule> {
    terminal_rules().iter().find(|r| &*r.id == id).expect("known terminal rule")
}

pub fn base_rule(id: &str) -> Option<&'static Arc<Rule>> {
    base_rules().iter().find(|r| &*r.id == id)
}

// ---- terminal candidates ------------------------------------------------

/// Token range `[start, end)` of the utterance an anchored terminal matched.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Clone, Debug)]
pub struct Terminal {
    pub rule: Arc<Rule>,
    pub lf: Arc<LogicalForm>,
    pub span: Option<Span>,
}

pub const APPROX_THRESHOLD: f64 = 0.8;
const MAX_SPAN: usize = 8;
const MIN_APPROX_CHARS: usize = 4;

fn char_similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    1.0 - prev[b.len()] as f64 / longest as f64
}

fn number_token(tok: &str) -> Option<f64> {
    tok.replace(',', "").parse::<f64>().ok().filter(|n| n.is_finite())
}

fn span_date(tokens: &[String]) -> Option<Date> {
    match tokens {
        [y] if y.len() == 4 => parse_date(y),
        [m, d, y] => parse_date(&format!("{m} {d}, {y}")),
        _ => None,
    }
}

/// Candidate terminals for an utterance: anchored entities, numbers and
/// dates from spans; every floating relation; and all rows.
pub fn terminal_candidates(tokens: &[String], kb: &KnowledgeBase) -> Vec<Terminal> {
    let cell_texts: Vec<(Value, Vec<String>, String)> = kb
        .entities()
        .map(|e| {
            let toks = match_tokens(&e.text);
            let joined = toks.join(" ");
            (Value::Cell(e.clone()), toks, joined)
        })
        .collect();
    let mut best: Vec<Option<(bool, usize, usize)>> = vec![None; cell_texts.len()];
    let mut numbers: Vec<(Value, usize, usize)> = Vec::new();
    for start in 0..tokens.len() {
        for end in start + 1..=(start + MAX_SPAN).min(tokens.len()) {
            let span = &tokens[start..end];
            let text = span.join(" ");
            let content = !span.iter().all(|t| is_function_word(t));
            for (i, (_, toks, joined)) in cell_texts.iter().enumerate() {
                let exact = *joined == text;
                let approx = !exact
                    && content
                    && text.chars().count() >= MIN_APPROX_CHARS
                    && (char_similarity(&text, joined) >= APPROX_THRESHOLD
                        || (toks.len() > span.len() && toks[..span.len()] == *span));
                if !(exact || approx) {
                    continue;
                }
                // exact beats approximate, then longer spans, then earlier ones
                let candidate = (exact, start, end - start);
                let rank = |(e, s, l): (bool, usize, usize)| (e, l, std::cmp::Reverse(s));
                let better = best[i].map_or(true, |old| rank(candidate) > rank(old));
                if better {
                    best[i] = Some(candidate);
                }
            }
            if span.len() == 1 {
                if let Some(n) = number_token(&span[0]) {
                    numbers.push((Value::number(n), start, end));
                }
            }
            if let Some(d) = span_date(span) {
                numbers.push((Value::Date(d), start, end));
            }
        }
    }

    let mut out = Vec::new();
    let span_of = |start: usize, end: usize| Span { start, end, text: tokens[start..end].join(" ") };
    for (i, found) in best.iter().enumerate() {
        if let Some((exact, start, len)) = *found {
            let rule = terminal_rule(if exact { "ent_exact" } else { "ent_approx" });
            out.push(Terminal {
                rule: rule.clone(),
                lf: entity(cell_texts[i].0.clone()),
                span: Some(span_of(start, start + len)),
            });
        }
    }
    let mut seen = ValueSet::new();
    for (v, start, end) in numbers {
        if seen.insert(v.clone()) {
            let rule = terminal_rule(if matches!(v, Value::Date(_)) { "ent_date" } else { "ent_number" });
            out.push(Terminal { rule: rule.clone(), lf: entity(v), span: Some(span_of(start, end)) });
        }
    }
    let rel_rule = terminal_rule("rel_float");
    for c in kb.columns() {
        out.push(Terminal { rule: rel_rule.clone(), lf: rel(Relation::Column(c.id.clone())), span: None });
    }
    for r in [Relation::NumProp, Relation::DateProp] {
        out.push(Terminal { rule: rel_rule.clone(), lf: rel(r), span: None });
    }
    out.push(Terminal { rule: terminal_rule("set_allrows").clone(), lf: all_rows(), span: None });
    out
}

/// Markdown table of the base grammar, kept in the repository as
/// `GRAMMAR.md`.
pub fn grammar_markdown() -> String {
    let mut s = String::new();
    s.push_str("# Base grammar\n\n");
    s.push_str("Generated by `macrogram::grammar::grammar_markdown`; do not edit by hand.\n\n");
    s.push_str("Categories: `Ent`, `Rel`, `Set`, `Root`. A derivation's size is the number of rule\n");
    s.push_str("applications in it, terminals included.\n\n");
    s.push_str("## Terminal rules\n\n| id | kind | output | matches |\n|---|---|---|---|\n");
    for r in terminal_rules() {
        let kind = if r.kind == RuleKind::Anchored { "anchored" } else { "floating" };
        s.push_str(&format!("| `{}` | {kind} | `{}` | {} |\n", r.id, r.out, r.guard_doc));
    }
    s.push_str("\n## Compositional rules\n\nRules are tried in this order. The guard is checked on the children's\n");
    s.push_str("denotations before the logical form is built.\n\n| id | rule | guard |\n|---|---|---|\n");
    for r in base_rules() {
        s.push_str(&format!("| `{}` | `{}` | {} |\n", r.id, r.signature(), r.guard_doc));
    }
    s
}
