//! Lambda DCS logical forms over a table knowledge base.
//!
//! Unary forms denote sets of values; binary forms (relations, their
//! reverses, lambdas) denote sets of pairs. `Join(b, u)` selects the
//! subjects of `b` whose objects intersect `u`.

mod exec;
mod syntax;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

pub use exec::{execute, execute_with_cap, is_consistent, ExecError, Executor, DEFAULT_EXECUTION_CAP};
pub use syntax::{canonical_string, parse_lf, render_with_slots, SyntaxError};

use crate::kb::{answer_key, answer_keys, Relation, Value, ValueSet};

pub type VarId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AggregateKind {
    Max,
    Min,
    Sum,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SuperlativeKind {
    Argmax,
    Argmin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CompareOp {
    Gt,
    Lt,
    Ge,
    Le,
}

impl AggregateKind {
    pub const ALL: [AggregateKind; 4] =
        [AggregateKind::Max, AggregateKind::Min, AggregateKind::Sum, AggregateKind::Avg];

    pub fn name(self) -> &'static str {
        match self {
            AggregateKind::Max => "max",
            AggregateKind::Min => "min",
            AggregateKind::Sum => "sum",
            AggregateKind::Avg => "avg",
        }
    }
}

impl SuperlativeKind {
    pub fn name(self) -> &'static str {
        match self {
            SuperlativeKind::Argmax => "argmax",
            SuperlativeKind::Argmin => "argmin",
        }
    }
}

impl CompareOp {
    pub const ALL: [CompareOp; 4] = [CompareOp::Gt, CompareOp::Lt, CompareOp::Ge, CompareOp::Le];

    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Gt => ">",
            CompareOp::Lt => "<",
            CompareOp::Ge => ">=",
            CompareOp::Le => "<=",
        }
    }

    pub fn holds<T: PartialOrd>(self, lhs: &T, rhs: &T) -> bool {
        match self {
            CompareOp::Gt => lhs > rhs,
            CompareOp::Lt => lhs < rhs,
            CompareOp::Ge => lhs >= rhs,
            CompareOp::Le => lhs <= rhs,
        }
    }
}

type Lf = Arc<LogicalForm>;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum LogicalForm {
    Entity(Value),
    Relation(Relation),
    AllRows,
    Join(Lf, Lf),
    Reverse(Lf),
    Intersect(Lf, Lf),
    Union(Lf, Lf),
    Count(Lf),
    Aggregate(AggregateKind, Lf),
    Superlative(SuperlativeKind, Lf, Lf),
    Compare(CompareOp, Lf),
    Sub(Lf, Lf),
    Lambda(VarId, Lf),
    Var(VarId),
    /// Argument slot of a rule template. Never executed.
    Hole(usize),
}

use LogicalForm as L;

/// Shorthand constructors. These keep rule templates and tests readable.
pub mod build {
    use super::*;

    pub fn entity(v: Value) -> Lf {
        Arc::new(L::Entity(v))
    }
    pub fn rel(r: Relation) -> Lf {
        Arc::new(L::Relation(r))
    }
    pub fn column(id: &str) -> Lf {
        rel(Relation::column(id))
    }
    pub fn all_rows() -> Lf {
        Arc::new(L::AllRows)
    }
    pub fn join(b: Lf, u: Lf) -> Lf {
        Arc::new(L::Join(b, u))
    }
    pub fn reverse(b: Lf) -> Lf {
        Arc::new(L::Reverse(b))
    }
    pub fn and(a: Lf, b: Lf) -> Lf {
        Arc::new(L::Intersect(a, b))
    }
    pub fn or(a: Lf, b: Lf) -> Lf {
        Arc::new(L::Union(a, b))
    }
    pub fn count(a: Lf) -> Lf {
        Arc::new(L::Count(a))
    }
    pub fn aggregate(k: AggregateKind, a: Lf) -> Lf {
        Arc::new(L::Aggregate(k, a))
    }
    pub fn superlative(k: SuperlativeKind, set: Lf, b: Lf) -> Lf {
        Arc::new(L::Superlative(k, set, b))
    }
    pub fn argmax(set: Lf, b: Lf) -> Lf {
        superlative(SuperlativeKind::Argmax, set, b)
    }
    pub fn argmin(set: Lf, b: Lf) -> Lf {
        superlative(SuperlativeKind::Argmin, set, b)
    }
    pub fn compare(op: CompareOp, pivot: Lf) -> Lf {
        Arc::new(L::Compare(op, pivot))
    }
    pub fn sub(a: Lf, b: Lf) -> Lf {
        Arc::new(L::Sub(a, b))
    }
    pub fn lambda(v: VarId, body: Lf) -> Lf {
        Arc::new(L::Lambda(v, body))
    }
    pub fn var(v: VarId) -> Lf {
        Arc::new(L::Var(v))
    }
    pub fn hole(i: usize) -> Lf {
        Arc::new(L::Hole(i))
    }
}

impl LogicalForm {
    /// Whether the form denotes a relation (set of pairs) rather than a set.
    pub fn is_binary(&self) -> bool {
        match self {
            L::Relation(_) | L::Lambda(..) => true,
            L::Reverse(b) => b.is_binary(),
            _ => false,
        }
    }

    pub fn children(&self) -> Vec<&Lf> {
        match self {
            L::Entity(_) | L::Relation(_) | L::AllRows | L::Var(_) | L::Hole(_) => vec![],
            L::Reverse(a) | L::Count(a) | L::Aggregate(_, a) | L::Compare(_, a) | L::Lambda(_, a) => vec![a],
            L::Join(a, b) | L::Intersect(a, b) | L::Union(a, b) | L::Superlative(_, a, b) | L::Sub(a, b) => {
                vec![a, b]
            }
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }

    pub fn has_holes(&self) -> bool {
        matches!(self, L::Hole(_)) || self.children().iter().any(|c| c.has_holes())
    }

    /// Replaces `Hole(i)` with `args[i]`. Holes without an argument are kept.
    pub fn substitute(self: &Arc<Self>, args: &[Lf]) -> Lf {
        let map2 = |a: &Lf, b: &Lf| (a.substitute(args), b.substitute(args));
        match &**self {
            L::Hole(i) => args.get(*i).cloned().unwrap_or_else(|| self.clone()),
            L::Entity(_) | L::Relation(_) | L::AllRows | L::Var(_) => self.clone(),
            L::Join(a, b) => {
                let (a, b) = map2(a, b);
                Arc::new(L::Join(a, b))
            }
            L::Intersect(a, b) => {
                let (a, b) = map2(a, b);
                Arc::new(L::Intersect(a, b))
            }
            L::Union(a, b) => {
                let (a, b) = map2(a, b);
                Arc::new(L::Union(a, b))
            }
            L::Sub(a, b) => {
                let (a, b) = map2(a, b);
                Arc::new(L::Sub(a, b))
            }
            L::Superlative(k, a, b) => {
                let (a, b) = map2(a, b);
                Arc::new(L::Superlative(*k, a, b))
            }
            L::Reverse(a) => Arc::new(L::Reverse(a.substitute(args))),
            L::Count(a) => Arc::new(L::Count(a.substitute(args))),
            L::Aggregate(k, a) => Arc::new(L::Aggregate(*k, a.substitute(args))),
            L::Compare(op, a) => Arc::new(L::Compare(*op, a.substitute(args))),
            L::Lambda(v, a) => Arc::new(L::Lambda(*v, a.substitute(args))),
        }
    }

    /// Non-entity symbols of the form in preorder: column ids, builtin
    /// relations and operator names. Used for lexical features.
    pub fn predicates(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates(&self, out: &mut Vec<String>) {
        match self {
            L::Relation(r) => out.push(match r {
                Relation::Column(c) => format!("col:{c}"),
                Relation::Next => "Next".into(),
                Relation::Index => "Index".into(),
                Relation::NumProp => "Num".into(),
                Relation::DateProp => "Date".into(),
            }),
            L::AllRows => out.push("Row".into()),
            L::Intersect(..) => out.push("and".into()),
            L::Union(..) => out.push("or".into()),
            L::Count(_) => out.push("count".into()),
            L::Aggregate(k, _) => out.push(k.name().into()),
            L::Superlative(k, ..) => out.push(k.name().into()),
            L::Compare(op, _) => out.push(op.symbol().into()),
            L::Sub(..) => out.push("sub".into()),
            L::Reverse(_) => out.push("R".into()),
            _ => {}
        }
        for c in self.children() {
            c.collect_predicates(out);
        }
    }

    /// Free variables (variables not bound by an enclosing lambda).
    pub fn free_vars(&self) -> BTreeSet<VarId> {
        match self {
            L::Var(v) => [*v].into_iter().collect(),
            L::Lambda(v, body) => {
                let mut s = body.free_vars();
                s.remove(v);
                s
            }
            _ => self.children().iter().flat_map(|c| c.free_vars()).collect(),
        }
    }
}

impl fmt::Display for LogicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical_string(self))
    }
}

/// Result of executing a unary logical form. Numeric results are singleton
/// value sets of numbers; `Num` is only an output view.
#[derive(Clone, Debug)]
pub enum Denotation {
    Values(ValueSet),
    Num(f64),
}

impl Denotation {
    pub fn values(&self) -> ValueSet {
        match self {
            Denotation::Values(v) => v.clone(),
            Denotation::Num(n) => [Value::number(*n)].into_iter().collect(),
        }
    }

    /// The number view when the denotation is a single number.
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Denotation::Num(n) => Some(*n),
            Denotation::Values(v) if v.len() == 1 => v.iter().next().and_then(Value::as_number),
            _ => None,
        }
    }

    /// Target denotation from annotated answer strings.
    pub fn from_strings<S: AsRef<str>>(answers: &[S]) -> Self {
        Denotation::Values(answers.iter().map(|s| Value::string(s.as_ref())).collect())
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Denotation::Values(v) if v.is_empty())
    }

    pub fn answer_keys(&self) -> BTreeSet<String> {
        match self {
            Denotation::Values(v) => answer_keys(v),
            Denotation::Num(n) => [answer_key(&Value::number(*n))].into_iter().collect(),
        }
    }
}

impl PartialEq for Denotation {
    fn eq(&self, other: &Self) -> bool {
        self.values() == other.values()
    }
}
