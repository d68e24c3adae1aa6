mod support;

use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;

use macrogram::macros::{extract_macro, MacroStore};
use macrogram::trigger::{levenshtein, nearest, preprocess, trigger_rules, KnnIndex, NounFilter};
use support::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn arb_tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(str::to_string), 0..8)
}

proptest! {
    #[test]
    fn distance_is_a_metric(a in arb_tokens(), b in arb_tokens(), c in arb_tokens()) {
        let ab = levenshtein(&a, &b);
        prop_assert_eq!(ab, levenshtein(&b, &a));
        prop_assert_eq!(ab == 0, a == b);
        prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
        prop_assert!(ab <= a.len().max(b.len()));
        prop_assert!(ab >= a.len().abs_diff(b.len()));
    }

    #[test]
    fn distance_matches_naive_recursion(a in arb_tokens(), b in arb_tokens()) {
        prop_assert_eq!(levenshtein(&a, &b), naive_levenshtein(&a, &b));
    }
}

#[test]
fn thousand_random_triples() {
    assert!(levenshtein_violations(4, 1000).is_empty());
}

#[test]
fn highest_score_is_one_edit_from_best_score() {
    let f = NounFilter::default();
    assert_eq!(levenshtein(&preprocess("highest score", &f), &preprocess("best score", &f)), 1);
    assert_eq!(levenshtein(&toks("highest score"), &toks("best score")), 1);
}

#[test]
fn nearest_matches_brute_force() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let corpus: Vec<Vec<String>> = (0..50).map(|_| random_tokens(&mut rng, 6)).collect();
    let index = KnnIndex::build(&corpus, 10);
    for (i, query) in corpus.iter().enumerate() {
        let mut all: Vec<(usize, usize)> =
            (0..corpus.len()).filter(|&j| j != i).map(|j| (naive_levenshtein(query, &corpus[j]), j)).collect();
        all.sort();
        all.truncate(10);
        assert_eq!(index.neighbors[i], all);
        assert_eq!(nearest(query, &corpus, 10, Some(i)), all);
    }
    assert_eq!(KnnIndex::from_text(&index.to_text()).unwrap(), index);
}

#[test]
fn duplicates_come_first() {
    let corpus: Vec<Vec<String>> =
        ["who rank after turkey", "how many team", "who rank after turkey"].map(toks).to_vec();
    let index = KnnIndex::build(&corpus, 5);
    assert_eq!(index.neighbors[0][0], (0, 2));
    assert_eq!(index.neighbors[2][0], (0, 0));
    let two = KnnIndex::build(&corpus[..2], 5);
    assert_eq!(two.neighbors[0].len(), 1);
    assert_eq!(two.neighbors[1], vec![(levenshtein(&corpus[0], &corpus[1]), 0)]);
}

fn store_with_fig1b() -> (MacroStore, String) {
    let kb = medals();
    let m = extract_macro(&derivation_of(FIG1_QUESTION, &kb, &["lift", "join", "next", "revjoin", "root"], EQ1));
    let mut store = MacroStore::new();
    let id = store.insert(&m);
    (store, id)
}

#[test]
fn no_associations_trigger_nothing() {
    let (store, _) = store_with_fig1b();
    let neighbors = vec![(0, 0), (1, 1), (2, 2)];
    assert!(trigger_rules(&neighbors, &store, 40).is_empty());
    assert!(trigger_rules(&[], &store, 40).is_empty());
}

#[test]
fn near_duplicate_triggers_the_three_fig1b_rules() {
    let (mut store, id) = store_with_fig1b();
    store.associate(0, EQ1.into(), id.clone());
    let corpus: Vec<Vec<String>> = ["Who ranked right after Turkey?", "How many nations won gold?"]
        .iter()
        .map(|u| preprocess(u, &NounFilter::default()))
        .collect();
    let query = preprocess("Who ranked right after Sweden?", &NounFilter::default());
    let neighbors = nearest(&query, &corpus, 100, None);
    assert_eq!(neighbors[0], (1, 0));
    let rules = trigger_rules(&neighbors, &store, 1);
    assert_eq!(rules.len(), 3);
    let ids: Vec<Arc<str>> = rules.iter().map(|r| r.id.clone()).collect();
    let mut expected = store.get(&id).unwrap().rule_ids.clone();
    expected.sort();
    assert_eq!(ids, expected);
}

#[test]
fn large_k_takes_the_union() {
    let (mut store, a) = store_with_fig1b();
    let kb = medals();
    let count = extract_macro(&derivation_of(
        "how many turkey",
        &kb,
        &["lift", "join", "count", "root"],
        "count(nation.@turkey)",
    ));
    let b = store.insert(&count);
    store.associate(0, EQ1.into(), a);
    store.associate(3, "count(nation.@turkey)".into(), b);
    let neighbors = vec![(1, 0), (2, 1), (3, 3)];
    let all = trigger_rules(&neighbors, &store, 100);
    assert_eq!(all.len(), store.rule_count());
    let all_ids: Vec<Arc<str>> = all.iter().map(|r| r.id.clone()).collect();
    let store_ids: Vec<Arc<str>> = store.all_rules().iter().map(|r| r.id.clone()).collect();
    assert_eq!(all_ids, store_ids);
    // K counts associated neighbors only
    assert_eq!(trigger_rules(&neighbors, &store, 1).len(), 3);
}
