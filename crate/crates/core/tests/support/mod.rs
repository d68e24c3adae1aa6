//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use macrogram::grammar::{terminal_candidates, Category};
use macrogram::kb::{load_table, match_tokens, KnowledgeBase, TableFormat};
use macrogram::learner::{FeatureVector, Gradient};
use macrogram::lf::{canonical_string, execute, LogicalForm};
use macrogram::macros::{Macro, MacroNode};

pub const MEDALS: &str = "Rank,Nation,Gold,Silver,Bronze\n1,France,3,1,1\n2,Ukraine,2,1,2\n\
    3,Turkey,2,0,1\n4,Sweden,2,0,0\n5,Iran,1,2,1\n";

pub const FIG1_QUESTION: &str = "Who ranked right after Turkey?";
pub const EQ1: &str = "R[nation].R[Next].nation.@turkey";

pub fn medals() -> KnowledgeBase {
    load_table(MEDALS, TableFormat::Csv).unwrap()
}

const WORDS: &[&str] = &["red", "blue", "green", "amber", "violet", "silver"];
const NAMES: &[&str] = &["Oslo", "Lima", "Quito", "Riga", "Sofia", "Tunis", "Doha", "Kiev", "Male", "Bern"];
const HEADERS: &[&str] = &["Name", "Color", "Score", "Year", "Points", "Team"];

/// A random table of at most `max_rows` rows and `max_cols` columns: a
/// column of unique names, then columns of colors or small numbers.
pub fn random_table(rng: &mut impl Rng, max_rows: usize, max_cols: usize) -> (String, KnowledgeBase) {
    let rows = rng.gen_range(2..=max_rows);
    let cols = rng.gen_range(2..=max_cols);
    let names: Vec<&str> = NAMES.choose_multiple(rng, rows).copied().collect();
    let numeric: Vec<bool> = (1..cols).map(|_| rng.gen_bool(0.6)).collect();
    let mut csv = HEADERS[..cols].join(",");
    csv.push('\n');
    for name in &names {
        let mut row = vec![name.to_string()];
        for &n in &numeric {
            row.push(if n { rng.gen_range(0..8).to_string() } else { WORDS.choose(rng).unwrap().to_string() });
        }
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let kb = load_table(&csv, TableFormat::Csv).unwrap();
    (csv, kb)
}

/// An utterance mentioning a few of the table's cells and maybe a number.
pub fn random_utterance(rng: &mut impl Rng, kb: &KnowledgeBase) -> String {
    let cells: Vec<String> = kb.entities().map(|e| e.text.to_string()).collect();
    let mut words = vec!["what".to_string(), "is".to_string()];
    let mentions = rng.gen_range(1..=2);
    for c in cells.choose_multiple(rng, mentions) {
        words.push(c.clone());
        words.push("and".into());
    }
    if rng.gen_bool(0.3) {
        words.push(rng.gen_range(0..8).to_string());
    }
    words.join(" ")
}

/// Root forms obtained by filling the macro's placeholders with every
/// combination of terminal candidates of the matching category. An
/// instantiation counts when every inner node executes without error and,
/// with `prune_empty`, to a nonempty result.
pub fn instantiation_oracle(m: &Macro, utterance: &str, kb: &KnowledgeBase, prune_empty: bool) -> BTreeSet<String> {
    let tokens = match_tokens(utterance);
    let terminals = terminal_candidates(&tokens, kb);
    let leaves = m.leaves();
    let choices: Vec<Vec<Arc<LogicalForm>>> = m
        .leaf_categories()
        .iter()
        .map(|c| {
            let mut seen = BTreeSet::new();
            terminals
                .iter()
                .filter(|t| t.rule.out == *c)
                .map(|t| t.lf.clone())
                .filter(|lf| seen.insert(canonical_string(lf)))
                .collect()
        })
        .collect();
    let mut out = BTreeSet::new();
    let mut assignment = Vec::new();
    fill(m, kb, prune_empty, &leaves, &choices, &mut assignment, &mut out);
    out
}

fn fill(
    m: &Macro,
    kb: &KnowledgeBase,
    prune_empty: bool,
    leaves: &[usize],
    choices: &[Vec<Arc<LogicalForm>>],
    assignment: &mut Vec<Arc<LogicalForm>>,
    out: &mut BTreeSet<String>,
) {
    if assignment.len() == leaves.len() {
        if let Some(lf) = evaluate(m, m.root, kb, prune_empty, leaves, assignment) {
            out.insert(canonical_string(&lf));
        }
        return;
    }
    for c in &choices[assignment.len()] {
        assignment.push(c.clone());
        fill(m, kb, prune_empty, leaves, choices, assignment, out);
        assignment.pop();
    }
}

fn evaluate(
    m: &Macro,
    v: usize,
    kb: &KnowledgeBase,
    prune_empty: bool,
    leaves: &[usize],
    assignment: &[Arc<LogicalForm>],
) -> Option<Arc<LogicalForm>> {
    match &m.nodes[v] {
        MacroNode::Leaf { .. } => Some(assignment[leaves.iter().position(|&l| l == v).unwrap()].clone()),
        MacroNode::Apply { rule, children } => {
            let args: Vec<Arc<LogicalForm>> =
                children.iter().map(|&c| evaluate(m, c, kb, prune_empty, leaves, assignment)).collect::<Option<_>>()?;
            let lf = rule.build(&args);
            if !lf.is_binary() {
                let d = execute(&lf, kb).ok()?;
                if prune_empty && d.is_empty() {
                    return None;
                }
            }
            Some(lf)
        }
    }
}

pub fn is_macro_category(c: &Category) -> bool {
    matches!(c, Category::Macro(_))
}

/// Random sparse feature vector over a small vocabulary.
pub fn random_features(rng: &mut impl Rng, vocab: usize) -> FeatureVector {
    let mut fv = FeatureVector::new();
    for _ in 0..rng.gen_range(1..=4) {
        let k = format!("f{}", rng.gen_range(0..vocab));
        *fv.entry(k).or_insert(0.0) += rng.gen_range(1..=3) as f64;
    }
    fv
}

/// Central-difference gradient of `objective` at `theta` over `names`.
pub fn numeric_gradient(
    names: &[String],
    theta: &Gradient<f64>,
    objective: impl Fn(&Gradient<f64>) -> f64,
    h: f64,
) -> Gradient<f64> {
    names
        .iter()
        .map(|n| {
            let mut plus = theta.clone();
            *plus.entry(n.clone()).or_insert(0.0) += h;
            let mut minus = theta.clone();
            *minus.entry(n.clone()).or_insert(0.0) -= h;
            (n.clone(), (objective(&plus) - objective(&minus)) / (2.0 * h))
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)` over the union of coordinates; 0 when both vanish.
pub fn relative_error(a: &Gradient<f64>, b: &Gradient<f64>) -> f64 {
    let keys: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    let get = |g: &Gradient<f64>, k: &String| g.get(k).copied().unwrap_or(0.0);
    let diff: f64 = keys.iter().map(|k| (get(a, k) - get(b, k)).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// The derivation of `form` found by an unpruned parse of `utterance` over
/// the named base rules.
pub fn derivation_of(
    utterance: &str,
    kb: &KnowledgeBase,
    rule_ids: &[&str],
    form: &str,
) -> Arc<macrogram::parser::Derivation> {
    use macrogram::grammar::base_rule;
    use macrogram::parser::{parse, ParseConfig, ZeroScorer};
    let rules: Vec<_> = rule_ids.iter().map(|id| base_rule(id).unwrap().clone()).collect();
    let cfg = ParseConfig { beam: None, ..ParseConfig::default() };
    let result = parse(&match_tokens(utterance), kb, &rules, &ZeroScorer, &cfg, None).unwrap();
    result
        .candidates
        .into_iter()
        .find(|d| &*d.canonical == form)
        .unwrap_or_else(|| panic!("{form} not derived from `{utterance}`"))
}

/// A random small table, an utterance over it, and the base-grammar root
/// candidates of a beam parse.
pub fn random_instance(
    rng: &mut impl Rng,
    beam: Option<usize>,
    max_size: usize,
) -> (KnowledgeBase, String, Vec<Arc<macrogram::parser::Derivation>>) {
    use macrogram::grammar::base_rules;
    use macrogram::parser::{parse, ParseConfig, ZeroScorer};
    let (_, kb) = random_table(rng, 6, 5);
    let utterance = random_utterance(rng, &kb);
    let cfg = ParseConfig { beam, max_size, ..ParseConfig::default() };
    let result = parse(&match_tokens(&utterance), &kb, base_rules(), &ZeroScorer, &cfg, None).unwrap();
    (kb, utterance, result.candidates)
}

/// Root forms of an unpruned parse with only the given rules.
pub fn macro_parse(rules: Vec<macrogram::grammar::Rule>, utterance: &str, kb: &KnowledgeBase) -> BTreeSet<String> {
    use macrogram::parser::{parse, ParseConfig, ZeroScorer};
    let rules: Vec<Arc<macrogram::grammar::Rule>> = rules.into_iter().map(Arc::new).collect();
    let cfg = ParseConfig { beam: None, max_size: 64, ..ParseConfig::default() };
    let result = parse(&match_tokens(utterance), kb, &rules, &ZeroScorer, &cfg, None).unwrap();
    result.candidates.iter().map(|d| d.canonical.to_string()).collect()
}

pub struct RoundTrip {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

/// Extracts the macro of `count` random derivations and compares the forms
/// its decomposed rules, and its single atomic rule, generate against the
/// instantiation oracle.
pub fn macro_round_trip(seed: u64, count: usize) -> RoundTrip {
    use macrogram::macros::extract_macro;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = RoundTrip { checked: 0, mismatches: Vec::new() };
    while out.checked < count {
        let (kb, utterance, candidates) = random_instance(&mut rng, Some(20), 6);
        for d in candidates.choose_multiple(&mut rng, 3) {
            let m = extract_macro(d);
            let oracle = instantiation_oracle(&m, &utterance, &kb, true);
            let decomposed = macro_parse(m.decompose(), &utterance, &kb);
            let atomic = macro_parse(vec![m.compile_atomic()], &utterance, &kb);
            if !oracle.contains(&*d.canonical) || decomposed != oracle || atomic != oracle {
                out.mismatches.push(format!("{} on `{utterance}`", m.serialize()));
            }
            out.checked += 1;
        }
    }
    out
}

/// Edit distance by the textbook recursion over suffixes, memoized.
pub fn naive_levenshtein(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], memo: &mut std::collections::HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return a.len() + b.len();
        }
        if let Some(&d) = memo.get(&(a.len(), b.len())) {
            return d;
        }
        let sub = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
        let d = sub.min(go(&a[1..], b, memo) + 1).min(go(a, &b[1..], memo) + 1);
        memo.insert((a.len(), b.len()), d);
        d
    }
    go(a, b, &mut std::collections::HashMap::new())
}

pub fn random_tokens(rng: &mut impl Rng, max_len: usize) -> Vec<String> {
    const VOCAB: &[&str] = &["who", "rank", "after", "turkey", "score", "best", "highest", "team", "most"];
    (0..rng.gen_range(0..=max_len)).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect()
}

/// Metric-axiom violations of the token edit distance over `n` random
/// triples, also checked against the naive recursion.
pub fn levenshtein_violations(seed: u64, n: usize) -> Vec<String> {
    use macrogram::trigger::levenshtein;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for _ in 0..n {
        let (a, b, c) = (random_tokens(&mut rng, 7), random_tokens(&mut rng, 7), random_tokens(&mut rng, 7));
        let (ab, bc, ac) = (levenshtein(&a, &b), levenshtein(&b, &c), levenshtein(&a, &c));
        let ok = ab == naive_levenshtein(&a, &b)
            && ab == levenshtein(&b, &a)
            && levenshtein(&a, &a) == 0
            && (ab == 0) == (a == b)
            && ac <= ab + bc;
        if !ok {
            bad.push(format!("{a:?} {b:?} {c:?}"));
        }
    }
    bad
}

/// Instances where an unpruned beam parse and the exhaustive enumeration
/// disagree on the set of root forms or their denotations.
pub fn exhaustive_mismatches(seed: u64, n: usize, max_size: usize) -> Vec<String> {
    use macrogram::grammar::base_rules;
    use macrogram::parser::enumerate_exhaustive;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for _ in 0..n {
        let (kb, utterance, candidates) = random_instance(&mut rng, None, max_size);
        let beam: std::collections::BTreeMap<String, _> =
            candidates.iter().map(|d| (d.canonical.to_string(), d.denotation.clone().unwrap_or_default())).collect();
        let all = enumerate_exhaustive(&match_tokens(&utterance), &kb, base_rules(), max_size, true).unwrap();
        if beam != all {
            bad.push(utterance);
        }
    }
    bad
}

/// Root form sets for each beam size, smallest beam first.
pub fn beam_root_sets(
    kb: &KnowledgeBase,
    utterance: &str,
    beams: &[usize],
    max_size: usize,
    scorer: &dyn macrogram::parser::Scorer,
) -> Vec<BTreeSet<String>> {
    use macrogram::grammar::base_rules;
    use macrogram::parser::{parse, ParseConfig};
    beams
        .iter()
        .map(|&b| {
            let cfg = ParseConfig { beam: Some(b), max_size, ..ParseConfig::default() };
            let r = parse(&match_tokens(utterance), kb, base_rules(), scorer, &cfg, None).unwrap();
            r.candidates.iter().map(|d| d.canonical.to_string()).collect()
        })
        .collect()
}

/// Instances where a smaller beam finds a root form a larger one misses.
pub fn monotonicity_violations(seed: u64, n: usize, max_size: usize) -> Vec<String> {
    use macrogram::parser::ZeroScorer;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for _ in 0..n {
        let (_, kb) = random_table(&mut rng, 6, 5);
        let utterance = random_utterance(&mut rng, &kb);
        let sets = beam_root_sets(&kb, &utterance, &[1, 5, 25], max_size, &ZeroScorer);
        for w in sets.windows(2) {
            if !w[0].is_subset(&w[1]) {
                let missing: Vec<&String> = w[0].difference(&w[1]).collect();
                bad.push(format!("`{utterance}`: {missing:?}"));
            }
        }
    }
    bad
}

/// A dataset over the medal table from (utterance, answer) pairs.
pub fn medal_dataset(pairs: &[(&str, &str)]) -> macrogram::dataset::Dataset {
    let kb = Arc::new(medals());
    let rows: Vec<(String, String, String, Vec<String>)> = pairs
        .iter()
        .enumerate()
        .map(|(i, (u, a))| (format!("m-{i}"), u.to_string(), "medals.csv".to_string(), vec![a.to_string()]))
        .collect();
    let text = macrogram::dataset::examples_tsv(
        rows.iter().map(|(i, u, c, t)| (i.as_str(), u.as_str(), c.as_str(), t.as_slice())),
    );
    macrogram::dataset::Dataset::parse(&text, &mut |_| Ok(kb.clone())).unwrap()
}

pub fn fig1_pairs() -> Vec<(&'static str, &'static str)> {
    vec![
        ("Who ranked right after Turkey?", "Sweden"),
        ("Who ranked right after France?", "Ukraine"),
        ("Who ranked right after Ukraine?", "Turkey"),
        ("How many gold medals did Iran win?", "1"),
        ("How many gold medals did France win?", "3"),
    ]
}

fn model_at(theta: &Gradient<f64>) -> macrogram::Model {
    let mut m = macrogram::Model::new(0.1, 0.0);
    for (k, v) in theta {
        m.set_weight(k, *v);
    }
    m
}

/// Worst relative error between analytic and central-difference gradients
/// of the pairwise and marginal objectives over `n` random instances each.
/// Instances whose gradient vanishes identically (equal feature vectors, or
/// every candidate consistent) have no relative error and are redrawn.
pub fn gradient_check(seed: u64, n: usize) -> (f64, f64) {
    use macrogram::learner::{marginal, pairwise};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let vocab = 8;
    let names: Vec<String> = (0..vocab).map(|i| format!("f{i}")).collect();
    let norm = |g: &Gradient<f64>| g.values().map(|v| v * v).sum::<f64>().sqrt();
    let (mut worst_pair, mut worst_marg) = (0.0f64, 0.0f64);
    let mut done = 0;
    while done < n {
        let theta: Gradient<f64> = names.iter().map(|k| (k.clone(), rng.gen_range(-1.0..1.0))).collect();
        let pos = random_features(&mut rng, vocab);
        let neg = random_features(&mut rng, vocab);
        let k = rng.gen_range(2..=8);
        let features: Vec<FeatureVector> = (0..k).map(|_| random_features(&mut rng, vocab)).collect();
        let mut consistent: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.4)).collect();
        consistent[0] = true;
        consistent[1] = false;

        let pair = pairwise(&model_at(&theta), &pos, &neg).1;
        let marg = marginal(&model_at(&theta), &features, &consistent).unwrap().1;
        if norm(&pair) < 1e-8 || norm(&marg) < 1e-8 {
            continue;
        }
        let numeric = numeric_gradient(&names, &theta, |t| pairwise(&model_at(t), &pos, &neg).0, 1e-5);
        worst_pair = worst_pair.max(relative_error(&pair, &numeric));
        let numeric =
            numeric_gradient(&names, &theta, |t| marginal(&model_at(t), &features, &consistent).unwrap().0, 1e-5);
        worst_marg = worst_marg.max(relative_error(&marg, &numeric));
        done += 1;
    }
    (worst_pair, worst_marg)
}
