use thiserror::Error;

use super::{AggregateKind, CompareOp, Denotation, LogicalForm, SuperlativeKind, VarId};
use crate::kb::{Date, KnowledgeBase, Relation, Value, ValueSet};

use LogicalForm as L;

pub const DEFAULT_EXECUTION_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("type error: {0}")]
    TypeError(&'static str),
    #[error("non-numeric value in numeric context")]
    NonNumeric,
    #[error("expected a single value, found {0}")]
    NonSingleton(usize),
    #[error("intermediate set of {0} values exceeds the execution cap")]
    ExecutionTooLarge(usize),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
}

type Result<T> = std::result::Result<T, ExecError>;

/// Orderable scalar used by comparatives.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
enum Ordered {
    Num(f64),
    Date(Date),
}

pub struct Executor<'a> {
    kb: &'a KnowledgeBase,
    cap: usize,
    /// Sub-forms whose denotations are already known, matched by address.
    known: &'a [(&'a LogicalForm, &'a ValueSet)],
}

type Env = Vec<(VarId, Value)>;

impl<'a> Executor<'a> {
    pub fn new(kb: &'a KnowledgeBase) -> Self {
        Executor { kb, cap: DEFAULT_EXECUTION_CAP, known: &[] }
    }

    pub fn with_cap(kb: &'a KnowledgeBase, cap: usize) -> Self {
        Executor { kb, cap, known: &[] }
    }

    /// Reuses the given denotations for sub-forms that are the same
    /// allocation. Used by the parser, which already executed the children.
    pub fn with_known(mut self, known: &'a [(&'a LogicalForm, &'a ValueSet)]) -> Self {
        self.known = known;
        self
    }

    /// Evaluates a closed unary form to its value set.
    pub fn unary(&self, z: &LogicalForm) -> Result<ValueSet> {
        self.eval(z, &mut Vec::new())
    }

    /// Values related to `x` by the binary `b`, i.e. `b` applied to `x`.
    pub fn apply(&self, b: &LogicalForm, x: &Value) -> Result<ValueSet> {
        self.image(b, &[x.clone()].into_iter().collect(), &mut Vec::new())
    }

    fn checked(&self, set: ValueSet) -> Result<ValueSet> {
        if set.len() > self.cap {
            Err(ExecError::ExecutionTooLarge(set.len()))
        } else {
            Ok(set)
        }
    }

    fn relation(&self, r: &Relation) -> Result<()> {
        match r {
            Relation::Column(c) if !self.kb.has_column(c) => Err(ExecError::UnknownColumn(c.to_string())),
            _ => Ok(()),
        }
    }

    fn eval(&self, z: &LogicalForm, env: &mut Env) -> Result<ValueSet> {
        if let Some((_, v)) = self.known.iter().find(|(k, _)| std::ptr::eq(*k, z)) {
            return Ok((*v).clone());
        }
        let out = match z {
            L::Entity(v) => [v.clone()].into_iter().collect(),
            L::AllRows => (1..=self.kb.num_rows() as u32).map(Value::Row).collect(),
            L::Relation(_) | L::Reverse(_) | L::Lambda(..) => {
                return Err(ExecError::TypeError("binary form where a set is expected"))
            }
            L::Hole(_) => return Err(ExecError::TypeError("template slot cannot be executed")),
            L::Var(v) => match env.iter().rev().find(|(id, _)| id == v) {
                Some((_, x)) => [x.clone()].into_iter().collect(),
                None => return Err(ExecError::TypeError("unbound variable")),
            },
            L::Join(b, arg) => {
                if !b.is_binary() {
                    return Err(ExecError::TypeError("join needs a binary on the left"));
                }
                match (&**b, &**arg) {
                    (L::Relation(r), L::Compare(op, pivot)) => {
                        self.relation(r)?;
                        let pivot = self.pivot(pivot, env)?;
                        let mut out = ValueSet::new();
                        if let Some(index) = self.kb.index(r, true) {
                            for (object, subjects) in index {
                                if satisfies(object, *op, pivot, self.kb) {
                                    out.extend(subjects.iter().cloned());
                                }
                            }
                        }
                        out
                    }
                    _ => {
                        let targets = self.eval(arg, env)?;
                        self.preimage(b, &targets, env)?
                    }
                }
            }
            L::Intersect(a, b) => {
                let a = self.eval(a, env)?;
                let b = self.eval(b, env)?;
                a.intersection(&b).cloned().collect()
            }
            L::Union(a, b) => {
                let mut a = self.eval(a, env)?;
                a.extend(self.eval(b, env)?);
                a
            }
            L::Count(a) => {
                let a = self.eval(a, env)?;
                [Value::number(a.len() as f64)].into_iter().collect()
            }
            L::Aggregate(kind, a) => {
                let a = self.eval(a, env)?;
                let nums =
                    a.iter().map(|v| self.numeric(v).ok_or(ExecError::NonNumeric)).collect::<Result<Vec<f64>>>()?;
                fold_numbers(*kind, &nums).map(Value::number).into_iter().collect()
            }
            L::Superlative(kind, set, b) => {
                if !b.is_binary() {
                    return Err(ExecError::TypeError("superlative needs a binary"));
                }
                let set = self.eval(set, env)?;
                let mut best: Option<f64> = None;
                let mut winners = ValueSet::new();
                for x in set {
                    let vals = self.image(b, &[x.clone()].into_iter().collect(), env)?;
                    let mut key: Option<f64> = None;
                    for v in &vals {
                        let n = self.numeric(v).ok_or(ExecError::NonNumeric)?;
                        match key {
                            Some(k) if k != n => return Err(ExecError::NonSingleton(vals.len())),
                            _ => key = Some(n),
                        }
                    }
                    let Some(key) = key else { continue };
                    let better = match (best, kind) {
                        (None, _) => true,
                        (Some(b), SuperlativeKind::Argmax) => key > b,
                        (Some(b), SuperlativeKind::Argmin) => key < b,
                    };
                    if better {
                        best = Some(key);
                        winners.clear();
                    }
                    if best == Some(key) {
                        winners.insert(x);
                    }
                }
                winners
            }
            L::Compare(op, pivot) => {
                let pivot = self.pivot(pivot, env)?;
                self.kb.ordered_universe().iter().filter(|v| satisfies(v, *op, pivot, self.kb)).cloned().collect()
            }
            L::Sub(a, b) => {
                let a = self.single_number(a, env)?;
                let b = self.single_number(b, env)?;
                [Value::number(a - b)].into_iter().collect()
            }
        };
        self.checked(out)
    }

    fn single_number(&self, z: &LogicalForm, env: &mut Env) -> Result<f64> {
        let set = self.eval(z, env)?;
        if set.len() != 1 {
            return Err(ExecError::NonSingleton(set.len()));
        }
        set.iter().next().and_then(|v| self.numeric(v)).ok_or(ExecError::NonNumeric)
    }

    fn pivot(&self, z: &LogicalForm, env: &mut Env) -> Result<Ordered> {
        let set = self.eval(z, env)?;
        if set.len() != 1 {
            return Err(ExecError::NonSingleton(set.len()));
        }
        match set.into_iter().next().unwrap() {
            Value::Number(n) => Ok(Ordered::Num(n.0)),
            Value::Date(d) => Ok(Ordered::Date(d)),
            Value::Cell(e) => match (self.kb.cell_number(&e), self.kb.cell_date(&e)) {
                (Some(n), _) => Ok(Ordered::Num(n)),
                (None, Some(d)) => Ok(Ordered::Date(d)),
                _ => Err(ExecError::NonNumeric),
            },
            _ => Err(ExecError::NonNumeric),
        }
    }

    /// Numbers are themselves; cells contribute their `NumProp` value.
    fn numeric(&self, v: &Value) -> Option<f64> {
        match v {
            Value::Number(n) => Some(n.0),
            Value::Cell(e) => self.kb.cell_number(e),
            _ => None,
        }
    }

    /// `{y : exists x in inputs, (x, y) in b}`
    fn image(&self, b: &LogicalForm, inputs: &ValueSet, env: &mut Env) -> Result<ValueSet> {
        let out = match b {
            L::Relation(r) => {
                self.relation(r)?;
                self.kb.relation_map(r, inputs, false)
            }
            L::Reverse(inner) => self.preimage(inner, inputs, env)?,
            L::Lambda(v, body) => {
                let mut out = ValueSet::new();
                for x in inputs {
                    env.push((*v, x.clone()));
                    let r = self.eval(body, env);
                    env.pop();
                    out.extend(r?);
                }
                out
            }
            _ => return Err(ExecError::TypeError("set where a binary is expected")),
        };
        self.checked(out)
    }

    /// `{x : exists y in targets, (x, y) in b}`
    fn preimage(&self, b: &LogicalForm, targets: &ValueSet, env: &mut Env) -> Result<ValueSet> {
        let out = match b {
            L::Relation(r) => {
                self.relation(r)?;
                self.kb.relation_map(r, targets, true)
            }
            L::Reverse(inner) => self.image(inner, targets, env)?,
            L::Lambda(v, body) => {
                let mut out = ValueSet::new();
                for x in self.kb.universe() {
                    env.push((*v, x.clone()));
                    let r = self.eval(body, env);
                    env.pop();
                    if !r?.is_disjoint(targets) {
                        out.insert(x);
                    }
                }
                out
            }
            _ => return Err(ExecError::TypeError("set where a binary is expected")),
        };
        self.checked(out)
    }
}

fn satisfies(v: &Value, op: CompareOp, pivot: Ordered, _kb: &KnowledgeBase) -> bool {
    match (v, pivot) {
        (Value::Number(n), Ordered::Num(p)) => op.holds(&n.0, &p),
        (Value::Date(d), Ordered::Date(p)) => op.holds(d, &p),
        _ => false,
    }
}

fn fold_numbers(kind: AggregateKind, nums: &[f64]) -> Option<f64> {
    match kind {
        AggregateKind::Sum => Some(nums.iter().sum()),
        _ if nums.is_empty() => None,
        AggregateKind::Max => nums.iter().copied().reduce(f64::max),
        AggregateKind::Min => nums.iter().copied().reduce(f64::min),
        AggregateKind::Avg => Some(nums.iter().sum::<f64>() / nums.len() as f64),
    }
}

pub fn execute(z: &LogicalForm, kb: &KnowledgeBase) -> Result<Denotation> {
    Executor::new(kb).unary(z).map(Denotation::Values)
}

pub fn execute_with_cap(z: &LogicalForm, kb: &KnowledgeBase, cap: usize) -> Result<Denotation> {
    Executor::with_cap(kb, cap).unary(z).map(Denotation::Values)
}

/// True iff `z` executes and its answer keys equal the target's. Execution
/// errors count as inconsistent.
pub fn is_consistent(z: &LogicalForm, kb: &KnowledgeBase, target: &Denotation) -> bool {
    if target.is_empty() {
        return false;
    }
    match execute(z, kb) {
        Ok(d) => d.answer_keys() == target.answer_keys(),
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::super::build::*;
    use super::*;
    use crate::kb::{load_table, TableFormat};

    const MEDALS: &str = "Rank,Nation,Gold,Silver,Bronze\n1,France,3,1,1\n2,Ukraine,2,1,2\n\
        3,Turkey,2,0,1\n4,Sweden,2,0,0\n5,Iran,1,2,1\n";

    fn kb() -> KnowledgeBase {
        load_table(MEDALS, TableFormat::Csv).unwrap()
    }

    fn cell(id: &str) -> std::sync::Arc<LogicalForm> {
        entity(Value::cell(id))
    }

    fn num(n: f64) -> std::sync::Arc<LogicalForm> {
        entity(Value::number(n))
    }

    fn vals(z: &LogicalForm) -> ValueSet {
        execute(z, &kb()).unwrap().values()
    }

    fn set<const N: usize>(v: [Value; N]) -> ValueSet {
        v.into_iter().collect()
    }

    fn after(nation: &str) -> std::sync::Arc<LogicalForm> {
        join(reverse(column("nation")), join(reverse(rel(Relation::Next)), join(column("nation"), cell(nation))))
    }

    #[test]
    fn nation_turkey_is_row_three() {
        assert_eq!(vals(&join(column("nation"), cell("turkey"))), set([Value::Row(3)]));
    }

    #[test]
    fn row_after_turkey_is_sweden() {
        assert_eq!(vals(&after("turkey")), set([Value::cell("sweden")]));
    }

    #[test]
    fn count_all_rows() {
        assert_eq!(vals(&count(all_rows())), set([Value::number(5.0)]));
        assert_eq!(execute(&count(all_rows()), &kb()).unwrap().as_num(), Some(5.0));
    }

    #[test]
    fn argmax_silver_row() {
        // Brute force over the Silver column: 1, 1, 0, 0, 2 -> row 5.
        let silver = [1.0, 1.0, 0.0, 0.0, 2.0];
        let best = silver.iter().cloned().fold(f64::MIN, f64::max);
        let expected: ValueSet =
            silver.iter().enumerate().filter(|(_, &s)| s == best).map(|(i, _)| Value::Row(i as u32 + 1)).collect();
        let by_silver = lambda(0, join(reverse(rel(Relation::NumProp)), join(reverse(column("silver")), var(0))));
        assert_eq!(vals(&argmax(all_rows(), by_silver)), expected);
    }

    #[test]
    fn superlative_ties_keep_all() {
        let by_gold = lambda(0, join(reverse(rel(Relation::NumProp)), join(reverse(column("gold")), var(0))));
        assert_eq!(vals(&argmin(all_rows(), by_gold.clone())), set([Value::Row(5)]));
        let by_silver = lambda(0, join(reverse(rel(Relation::NumProp)), join(reverse(column("silver")), var(0))));
        assert_eq!(vals(&argmin(all_rows(), by_silver)), set([Value::Row(3), Value::Row(4)]));
    }

    #[test]
    fn index_superlatives_pick_first_and_last() {
        let idx = rel(Relation::Index);
        assert_eq!(vals(&argmin(all_rows(), idx.clone())), set([Value::Row(1)]));
        assert_eq!(vals(&argmax(all_rows(), idx)), set([Value::Row(5)]));
    }

    #[test]
    fn comparatives() {
        // rows whose gold > 2 -> France
        let gold_gt_2 = join(column("gold"), join(rel(Relation::NumProp), compare(CompareOp::Gt, num(2.0))));
        assert_eq!(vals(&gold_gt_2), set([Value::Row(1)]));
        // materialized comparison equals the lazy join
        let lazy = join(rel(Relation::NumProp), compare(CompareOp::Le, num(1.0)));
        let eager =
            join(rel(Relation::NumProp), or(compare(CompareOp::Le, num(1.0)), compare(CompareOp::Le, num(1.0))));
        assert_eq!(vals(&lazy), vals(&eager));
        // pivot may be a numeric cell
        let ge_cell = join(rel(Relation::NumProp), compare(CompareOp::Ge, cell("3")));
        assert_eq!(vals(&ge_cell), vals(&join(rel(Relation::NumProp), compare(CompareOp::Ge, num(3.0)))));
    }

    #[test]
    fn aggregates_and_sub() {
        let golds = join(reverse(rel(Relation::NumProp)), join(reverse(column("gold")), all_rows()));
        assert_eq!(vals(&aggregate(AggregateKind::Max, golds.clone())), set([Value::number(3.0)]));
        assert_eq!(vals(&aggregate(AggregateKind::Min, golds.clone())), set([Value::number(1.0)]));
        // distinct values {1, 2, 3}
        assert_eq!(vals(&aggregate(AggregateKind::Sum, golds.clone())), set([Value::number(6.0)]));
        assert_eq!(vals(&aggregate(AggregateKind::Avg, golds)), set([Value::number(2.0)]));
        // cells use their numeric value
        let gold_cells = join(reverse(column("gold")), all_rows());
        assert_eq!(vals(&aggregate(AggregateKind::Max, gold_cells)), set([Value::number(3.0)]));
        let diff = sub(count(all_rows()), count(join(column("gold"), cell("2"))));
        assert_eq!(vals(&diff), set([Value::number(2.0)]));
    }

    #[test]
    fn set_operators() {
        let a = join(column("gold"), cell("2"));
        let b = join(column("bronze"), cell("1"));
        assert_eq!(vals(&and(a.clone(), b.clone())), set([Value::Row(3)]));
        assert_eq!(vals(&or(a, b)).len(), 5);
    }

    #[test]
    fn lambda_join_enumerates_universe() {
        // rows whose gold cell is 3, through a lambda binary
        let gold_of = lambda(0, join(reverse(column("gold")), var(0)));
        assert_eq!(vals(&join(gold_of, cell("3"))), set([Value::Row(1)]));
    }

    #[test]
    fn errors() {
        let k = kb();
        assert_eq!(
            execute(&column("nation"), &k).unwrap_err(),
            ExecError::TypeError("binary form where a set is expected")
        );
        let cells = join(reverse(column("nation")), all_rows());
        assert_eq!(execute(&aggregate(AggregateKind::Max, cells), &k).unwrap_err(), ExecError::NonNumeric);
        assert_eq!(execute(&sub(all_rows(), num(1.0)), &k).unwrap_err(), ExecError::NonSingleton(5));
        assert!(matches!(execute(&join(column("nope"), all_rows()), &k), Err(ExecError::UnknownColumn(_))));
        assert!(matches!(execute_with_cap(&all_rows(), &k, 3), Err(ExecError::ExecutionTooLarge(5))));
        assert!(execute(&var(3), &k).is_err());
        assert!(execute(&hole(0), &k).is_err());
    }

    #[test]
    fn consistency() {
        let k = kb();
        let target = Denotation::from_strings(&["Sweden"]);
        assert!(is_consistent(&after("turkey"), &k, &target));
        assert!(!is_consistent(&count(all_rows()), &k, &target));
        // hand walk: France is row 1, row 2's nation is Ukraine
        assert!(is_consistent(&after("france"), &k, &Denotation::from_strings(&["Ukraine"])));
        assert!(is_consistent(&count(all_rows()), &k, &Denotation::from_strings(&["5"])));
        assert!(!is_consistent(&after("iran"), &k, &target));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_binary() -> impl Strategy<Value = std::sync::Arc<LogicalForm>> {
            let atoms = prop_oneof![
                Just(column("nation")),
                Just(column("gold")),
                Just(column("silver")),
                Just(rel(Relation::Next)),
                Just(rel(Relation::Index)),
                Just(rel(Relation::NumProp)),
            ];
            atoms.prop_recursive(2, 6, 1, |inner| {
                prop_oneof![inner.clone().prop_map(reverse), inner.prop_map(|b| lambda(7, join(reverse(b), var(7)))),]
            })
        }

        fn arb_unary() -> impl Strategy<Value = std::sync::Arc<LogicalForm>> {
            let leaves = prop_oneof![
                Just(all_rows()),
                Just(cell("turkey")),
                Just(cell("2")),
                Just(cell("1")),
                Just(num(2.0)),
                Just(entity(Value::Row(2))),
            ];
            leaves.prop_recursive(3, 12, 2, |inner| {
                prop_oneof![
                    (arb_binary(), inner.clone()).prop_map(|(b, u)| join(b, u)),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| or(a, b)),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| and(a, b)),
                    inner.prop_map(count),
                ]
            })
        }

        proptest! {
            #[test]
            fn execution_is_deterministic(z in arb_unary()) {
                let k = kb();
                prop_assert_eq!(execute(&z, &k).map(|d| d.values()), execute(&z, &k).map(|d| d.values()));
            }

            #[test]
            fn double_reverse_is_identity(b in arb_binary(), u in arb_unary()) {
                let k = kb();
                let plain = execute(&join(b.clone(), u.clone()), &k).map(|d| d.values());
                let twice = execute(&join(reverse(reverse(b.clone())), u.clone()), &k).map(|d| d.values());
                prop_assert_eq!(plain, twice);
                let plain = execute(&join(reverse(b.clone()), u.clone()), &k).map(|d| d.values());
                let twice = execute(&join(reverse(reverse(reverse(b))), u), &k).map(|d| d.values());
                prop_assert_eq!(plain, twice);
            }

            #[test]
            fn join_distributes_over_union(b in arb_binary(), x in arb_unary(), y in arb_unary()) {
                let k = kb();
                let lhs = execute(&join(b.clone(), or(x.clone(), y.clone())), &k);
                let rx = execute(&join(b.clone(), x), &k);
                let ry = execute(&join(b, y), &k);
                if let (Ok(l), Ok(a), Ok(c)) = (lhs, rx, ry) {
                    let mut union = a.values();
                    union.extend(c.values());
                    prop_assert_eq!(l.values(), union);
                }
            }

            #[test]
            fn forward_column_join_distributes_over_intersection(
                col in prop_oneof![Just("nation"), Just("gold"), Just("bronze")],
                x in arb_unary(), y in arb_unary()
            ) {
                let k = kb();
                let b = column(col);
                if let (Ok(l), Ok(a), Ok(c)) = (
                    execute(&join(b.clone(), and(x.clone(), y.clone())), &k),
                    execute(&join(b.clone(), x), &k),
                    execute(&join(b, y), &k),
                ) {
                    let inter: ValueSet = a.values().intersection(&c.values()).cloned().collect();
                    prop_assert_eq!(l.values(), inter);
                }
            }

            #[test]
            fn argmin_is_argmax_of_negation(col in prop_oneof![Just("gold"), Just("silver"), Just("bronze"), Just("rank")]) {
                let k = kb();
                let b = lambda(0, join(reverse(rel(Relation::NumProp)), join(reverse(column(col)), var(0))));
                let neg = lambda(1, sub(num(0.0), join(reverse(b.clone()), var(1))));
                let lo = execute(&argmin(all_rows(), b), &k).unwrap().values();
                let hi = execute(&argmax(all_rows(), neg), &k).unwrap().values();
                prop_assert_eq!(lo, hi);
            }

            #[test]
            fn counts_are_nonnegative(z in arb_unary()) {
                let k = kb();
                if let Ok(d) = execute(&count(z), &k) {
                    prop_assert!(d.as_num().unwrap() >= 0.0);
                }
            }
        }

        #[test]
        fn count_of_empty_is_zero() {
            let empty = join(rel(Relation::Next), entity(Value::Row(1)));
            assert_eq!(execute(&count(empty), &kb()).unwrap().as_num(), Some(0.0));
        }
    }
}
