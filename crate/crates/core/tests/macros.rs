mod support;

use std::sync::Arc;

use macrogram::grammar::{Category, RuleKind};
use macrogram::lf::canonical_string;
use macrogram::macros::{extract_macro, parse_macro, Macro, MacroNode, MacroStore, StoreError};
use support::*;

const FIG1_RULES: &[&str] = &["lift", "join", "next", "revjoin", "root"];

fn fig1b() -> Macro {
    extract_macro(&derivation_of(FIG1_QUESTION, &medals(), FIG1_RULES, EQ1))
}

#[test]
fn fig1b_shape() {
    let m = fig1b();
    assert_eq!(m.serialize(), "(root (revjoin Rel#1 (next (join Rel#1 (lift Ent#2)))))");
    assert_eq!(m.template_string(), "R[{Rel#1}].R[Next].{Rel#1}.{Ent#2}");
    assert_eq!(m.leaf_categories(), vec![Category::Rel, Category::Ent]);
    // root, revjoin, next, join, lift and two shared leaves
    assert_eq!(m.node_count(), 7);
}

#[test]
fn fig1b_decomposes_into_three_rules() {
    let rules = fig1b().decompose();
    assert_eq!(rules.len(), 3);
    assert!(rules.iter().all(|r| r.kind == RuleKind::Macro));

    let m1 = Category::Macro(Arc::from("(lift Ent#1)"));
    assert_eq!(rules[0].args, vec![Category::Ent]);
    assert_eq!(rules[0].out, m1);
    assert_eq!(canonical_string(&rules[0].template), "?0");

    let m2_name = "(revjoin Rel#1 (next (join Rel#1 {(lift Ent#1)}#2)))";
    let m2 = Category::Macro(Arc::from(m2_name));
    assert_eq!(rules[1].args, vec![Category::Rel, m1]);
    assert_eq!(rules[1].out, m2);
    assert_eq!(canonical_string(&rules[1].template), "R[?0].R[Next].?0.?1");
    assert_eq!(rules[1].hole_uses, vec![2, 1]);

    assert_eq!(rules[2].args, vec![m2]);
    assert_eq!(rules[2].out, Category::Root);
    assert_eq!(canonical_string(&rules[2].template), "?0");
}

#[test]
fn fig1b_rules_regenerate_eq1() {
    let forms = macro_parse(fig1b().decompose(), FIG1_QUESTION, &medals());
    assert!(forms.contains(EQ1), "{forms:?}");
    let oracle = instantiation_oracle(&fig1b(), FIG1_QUESTION, &medals(), true);
    assert_eq!(forms, oracle);
}

#[test]
fn single_entity_macro() {
    let d = derivation_of("turkey", &medals(), &["lift", "root"], "@turkey");
    let m = extract_macro(&d);
    assert_eq!(m.serialize(), "(root (lift Ent#1))");
    let rules = m.decompose();
    assert_eq!(rules.len(), 2);
    assert_eq!(&*rules[0].id, "(lift Ent#1)");
    assert_eq!(rules[1].args, vec![Category::Macro(Arc::from("(lift Ent#1)"))]);
}

#[test]
fn isomorphic_derivations_share_a_macro() {
    let kb = medals();
    let a = derivation_of("after turkey", &kb, FIG1_RULES, EQ1);
    let b = derivation_of("after sweden", &kb, FIG1_RULES, "R[nation].R[Next].nation.@sweden");
    assert_eq!(extract_macro(&a), extract_macro(&b));
}

#[test]
fn shared_leaves_are_merged() {
    let kb = medals();
    let merged = extract_macro(&derivation_of("turkey", &kb, FIG1_RULES, EQ1));
    let unmerged = extract_macro(&derivation_of("turkey", &kb, FIG1_RULES, "R[rank].R[Next].nation.@turkey"));
    assert_ne!(merged, unmerged);
    assert_eq!(unmerged.serialize(), "(root (revjoin Rel#1 (next (join Rel#2 (lift Ent#3)))))");
    assert_eq!(unmerged.leaves().len(), 3);
    assert_eq!(merged.leaves().len(), 2);
}

#[test]
fn shared_sub_macros_share_rules() {
    let kb = medals();
    let count = extract_macro(&derivation_of(
        "how many turkey",
        &kb,
        &["lift", "join", "count", "root"],
        "count(nation.@turkey)",
    ));
    let mut store = MacroStore::new();
    let a = store.insert(&fig1b());
    let b = store.insert(&count);
    assert_ne!(a, b);
    let rules_a: Vec<Arc<str>> = store.rules_of(&a).iter().map(|r| r.id.clone()).collect();
    let rules_b: Vec<Arc<str>> = store.rules_of(&b).iter().map(|r| r.id.clone()).collect();
    assert!(rules_a.contains(&Arc::from("(lift Ent#1)")));
    assert!(rules_b.contains(&Arc::from("(lift Ent#1)")));
    assert_eq!(store.rule_count(), rules_a.len() + rules_b.len() - 1);
    // inserting again changes nothing
    assert_eq!(store.insert(&fig1b()), a);
    assert_eq!(store.len(), 2);
}

#[test]
fn serialization_round_trips() {
    let m = fig1b();
    let back = parse_macro(&m.serialize()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.template_string(), m.template_string());
    assert!(parse_macro("(bogus Ent#1)").is_err());
    assert!(parse_macro("(root (lift Ent#1)").is_err());
    assert!(parse_macro("(root (lift Ent#1)) trailing").is_err());
}

#[test]
fn store_frequencies_follow_associations() {
    let kb = medals();
    let single = extract_macro(&derivation_of("turkey", &kb, &["lift", "root"], "@turkey"));
    let mut store = MacroStore::new();
    let a = store.insert(&fig1b());
    let b = store.insert(&single);
    assert_eq!(store.get(&a).unwrap().frequency, 0);
    store.associate(0, EQ1.into(), a.clone());
    store.associate(1, EQ1.into(), a.clone());
    store.associate(2, "@turkey".into(), b.clone());
    assert_eq!(store.get(&a).unwrap().frequency, 2);
    store.associate(1, "@turkey".into(), b.clone());
    assert_eq!(store.get(&a).unwrap().frequency, 1);
    assert_eq!(store.get(&b).unwrap().frequency, 2);
    assert_eq!(store.ranked()[0].id, b);

    let mut back = MacroStore::from_text(&store.to_text()).unwrap();
    back.load_associations(&store.associations_text()).unwrap();
    assert_eq!(back.to_text(), store.to_text());
    assert_eq!(back.associations_text(), store.associations_text());
    assert_eq!(back.rule_count(), store.rule_count());
    let root = store.get(&a).unwrap().rule_ids.last().unwrap().clone();
    assert_eq!(back.macro_for_root_rule(&root), Some(a.as_str()));
}

#[test]
fn store_rejects_bad_files() {
    assert!(matches!(MacroStore::from_text("nope\n"), Err(StoreError::Header)));
    let bad = format!("{}\nx\tt\t(root (lift Ent#1))\n", macrogram::macros::STORE_HEADER);
    assert!(matches!(MacroStore::from_text(&bad), Err(StoreError::Line { line: 2, .. })));
    let mut store = MacroStore::new();
    let unknown = format!("{}\n0\t(root (nope Ent#1))\t@x\n", macrogram::macros::ASSOCIATIONS_HEADER);
    assert!(store.load_associations(&unknown).is_err());
}

#[test]
fn macros_expand_derivations_built_from_macro_rules() {
    let kb = medals();
    let rules: Vec<_> = fig1b().decompose().into_iter().map(Arc::new).collect();
    let cfg = macrogram::parser::ParseConfig { beam: None, max_size: 16, ..Default::default() };
    let tokens = macrogram::kb::match_tokens(FIG1_QUESTION);
    let result = macrogram::parser::parse(&tokens, &kb, &rules, &macrogram::parser::ZeroScorer, &cfg, None).unwrap();
    let d = result.candidates.iter().find(|d| &*d.canonical == EQ1).unwrap();
    assert_eq!(extract_macro(d), fig1b());
    assert!(extract_macro(d).nodes.iter().all(|n| match n {
        MacroNode::Apply { rule, .. } => rule.kind == RuleKind::Compositional,
        MacroNode::Leaf { .. } => true,
    }));
}

#[test]
fn random_macros_round_trip() {
    let r = macro_round_trip(3, 40);
    assert!(r.mismatches.is_empty(), "{:#?}", r.mismatches);
}
