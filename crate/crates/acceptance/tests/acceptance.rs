//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use macrogram::grammar::Category;
use macrogram::kb::Value;
use macrogram::learner::{GrammarMode, TrainingConfig, MACROS_FILE, MODEL_FILE};
use macrogram::lf::{canonical_string, execute, parse_lf};
use macrogram::macros::extract_macro;
use macrogram::synthetic::SyntheticCorpus;
use macrogram::trigger::levenshtein;
use macrogram::Learner;
use support::*;

type Outcome = (bool, String);

fn words(s: &str) -> Vec<String> {
    s.split(' ').map(str::to_string).collect()
}

fn criterion_1_executor_table_example() -> Outcome {
    let kb = medals();
    let rows = execute(&parse_lf("nation.@turkey").unwrap(), &kb).unwrap();
    let eq1 = execute(&parse_lf(EQ1).unwrap(), &kb).unwrap();
    let sweden: Vec<String> = eq1.values().iter().map(|v| v.display_text()).collect();
    let ok = rows.values().into_iter().eq([Value::Row(3)]) && sweden == ["Sweden"];
    (ok, format!("nation.@turkey={:?} eq1={sweden:?}", rows.values()))
}

fn criterion_2_macro_round_trip() -> Outcome {
    let r = macro_round_trip(2024, 100);
    let ok = r.checked >= 100 && r.mismatches.is_empty();
    (ok, format!("{} derivations, {} mismatches {:?}", r.checked, r.mismatches.len(), r.mismatches.first()))
}

fn criterion_3_fig1b_three_rules() -> Outcome {
    let m = extract_macro(&derivation_of(FIG1_QUESTION, &medals(), &["lift", "join", "next", "revjoin", "root"], EQ1));
    let rules = m.decompose();
    let inner = Category::Macro(Arc::from("(lift Ent#1)"));
    let middle = Category::Macro(Arc::from("(revjoin Rel#1 (next (join Rel#1 {(lift Ent#1)}#2)))"));
    let ok = rules.len() == 3
        && rules[0].args == [Category::Ent]
        && rules[0].out == inner
        && canonical_string(&rules[0].template) == "?0"
        && rules[1].args == [Category::Rel, inner.clone()]
        && rules[1].out == middle
        && canonical_string(&rules[1].template) == "R[?0].R[Next].?0.?1"
        && rules[2].args == [middle.clone()]
        && rules[2].out == Category::Root
        && canonical_string(&rules[2].template) == "?0";
    let shown: Vec<String> = rules.iter().map(|r| format!("{} -> {}", r.id, canonical_string(&r.template))).collect();
    (ok, format!("{shown:?}"))
}

fn criterion_4_levenshtein() -> Outcome {
    let bad = levenshtein_violations(4, 1000);
    let d = levenshtein(&words("highest score"), &words("best score"));
    let ok = bad.is_empty() && d == 1;
    (ok, format!("{} violations, d(highest score, best score)={d}", bad.len()))
}

fn criterion_5_gradient_checks() -> Outcome {
    let (pair, marg) = gradient_check(5, 100);
    let ok = pair < 1e-5 && marg < 1e-5;
    (ok, format!("worst relative error pairwise {pair:.2e}, marginal {marg:.2e}"))
}

fn criterion_6_beam_soundness() -> Outcome {
    let exhaustive = exhaustive_mismatches(6, 20, 6);
    let nesting = monotonicity_violations(6, 20, 6);
    let ok = exhaustive.is_empty() && nesting.is_empty();
    (
        ok,
        format!(
            "exhaustive mismatches {}/20, nesting violations {} over 20 instances {:?}",
            exhaustive.len(),
            nesting.len(),
            nesting.first()
        ),
    )
}

fn corpus(size: usize, seed: u64) -> macrogram::dataset::Dataset {
    SyntheticCorpus::generate(size, seed).to_dataset()
}

fn criterion_7_desk_scale() -> Outcome {
    let train = corpus(500, 11);
    let test = corpus(200, 12);
    let macro_run = Learner::train(&train, TrainingConfig::default()).unwrap();
    let base_run =
        Learner::train(&train, TrainingConfig { grammar: GrammarMode::BaseOnly, ..TrainingConfig::default() }).unwrap();
    let macro_eval = macro_run.learner.evaluate(&test);
    let base_eval = base_run.learner.evaluate(&test);
    let (m, b) = (&macro_run.report, &base_run.report);
    let a = m.coverage >= b.coverage - 0.10;
    let bb = m.mean_generated <= b.mean_generated / 3.0;
    let c = macro_eval.accuracy >= base_eval.accuracy - 0.05;
    let d = macro_eval.base_applications == 0;
    let flag = |x: bool| if x { "ok" } else { "no" };
    (a && bb && c && d, format!(
            "(a) coverage {:.3} vs {:.3} {} (b) forms {:.1} vs {:.1} {} (c) accuracy {:.3} vs {:.3} {} (d) base applications {} {}",
            m.coverage,
            b.coverage,
            flag(a),
            m.mean_generated,
            b.mean_generated,
            flag(bb),
            macro_eval.accuracy,
            base_eval.accuracy,
            flag(c),
            macro_eval.base_applications,
            flag(d)
        ))
}

fn criterion_8_fallback_budget() -> Outcome {
    let train = corpus(500, 11);
    let limits = [Some(1), Some(5), Some(20), None];
    let coverage: Vec<f64> = limits
        .iter()
        .map(|&m| {
            Learner::train(&train, TrainingConfig { fallback_limit: m, ..TrainingConfig::default() })
                .unwrap()
                .report
                .coverage
        })
        .collect();
    let nondecreasing = coverage.windows(2).all(|w| w[0] <= w[1]);
    let plateau = coverage[3] - coverage[2] <= 0.02;
    (
        nondecreasing && plateau,
        format!(
            "coverage m=1 {:.3}, m=5 {:.3}, m=20 {:.3}, m=inf {:.3}",
            coverage[0], coverage[1], coverage[2], coverage[3]
        ),
    )
}

fn run(args: &[&str]) {
    let status = macrogram_cli::run(std::iter::once("macrogram").chain(args.iter().copied()));
    assert_eq!(status, 0, "{args:?}");
}

fn train_into(data: &Path, out: &Path) {
    let examples = data.join("examples.tsv");
    run(&[
        "train",
        "--examples",
        examples.to_str().unwrap(),
        "--tables",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
    ])
}

fn criterion_9_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run(&["gen-synthetic", "--size", "150", "--seed", "9", "--out", data.to_str().unwrap()]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_into(&data, &a);
    train_into(&data, &b);
    let files = [MODEL_FILE, MACROS_FILE];
    let same: Vec<bool> =
        files.iter().map(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap()).collect();
    let ok = same.iter().all(|&s| s);
    (ok, format!("identical {files:?}: {same:?}"))
}

fn main() -> ExitCode {
    let criteria: [(fn() -> Outcome, u64); 9] = [
        (criterion_1_executor_table_example, 1),
        (criterion_2_macro_round_trip, 120),
        (criterion_3_fig1b_three_rules, 1),
        (criterion_4_levenshtein, 5),
        (criterion_5_gradient_checks, 30),
        (criterion_6_beam_soundness, 120),
        (criterion_7_desk_scale, 900),
        (criterion_8_fallback_budget, 1800),
        (criterion_9_determinism, 600),
    ];
    let mut failed = 0;
    for (i, (check, limit)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let (ok, detail) = check();
        let elapsed = started.elapsed();
        let ok = ok && elapsed <= Duration::from_secs(limit);
        failed += usize::from(!ok);
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {}: {verdict} ({:.2}s, limit {limit}s) {detail}", i + 1, elapsed.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
