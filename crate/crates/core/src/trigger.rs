//! Holistic triggering: retrieve macro rules from the nearest solved
//! utterances under token-level edit distance.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::grammar::Rule;
use crate::kb::match_tokens;
use crate::macros::MacroStore;

pub const DETERMINERS: [&str; 7] = ["a", "an", "the", "this", "that", "these", "those"];
pub const EMPTY_SENTINEL: &str = "<empty>";
/// Nouns seen in fewer than this fraction of training utterances are dropped.
pub const RARE_NOUN_FRACTION: f64 = 0.02;

const LEMMA_TABLE: &str = include_str!("../data/lemmas.txt");
const FUNCTION_WORDS: &str = include_str!("../data/function_words.txt");

struct SuffixRule {
    suffix: String,
    replacement: String,
    min_stem: usize,
    undouble: bool,
}

struct Lemmatizer {
    irregular: HashMap<String, String>,
    suffixes: Vec<SuffixRule>,
}

fn lemmatizer() -> &'static Lemmatizer {
    static L: OnceLock<Lemmatizer> = OnceLock::new();
    L.get_or_init(|| {
        let mut irregular = HashMap::new();
        let mut suffixes = Vec::new();
        for line in LEMMA_TABLE.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["irregular", form, lemma] => {
                    irregular.insert(form.to_string(), lemma.to_string());
                }
                ["suffix", suffix, replacement, min_stem, rest @ ..] => suffixes.push(SuffixRule {
                    suffix: suffix.to_string(),
                    replacement: if *replacement == "-" { String::new() } else { replacement.to_string() },
                    min_stem: min_stem.parse().expect("numeric stem length in lemma table"),
                    undouble: rest == ["undouble"],
                }),
                _ => panic!("bad lemma table line: {line}"),
            }
        }
        Lemmatizer { irregular, suffixes }
    })
}

fn function_words() -> &'static HashSet<&'static str> {
    static W: OnceLock<HashSet<&'static str>> = OnceLock::new();
    W.get_or_init(|| {
        FUNCTION_WORDS.lines().filter(|l| !l.trim_start().starts_with('#')).flat_map(str::split_whitespace).collect()
    })
}

pub fn is_function_word(token: &str) -> bool {
    function_words().contains(token)
}

fn is_number(token: &str) -> bool {
    token.replace(',', "").parse::<f64>().is_ok()
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Lemma of a lowercase token under the frozen rule table.
pub fn lemmatize(token: &str) -> String {
    let l = lemmatizer();
    if let Some(lemma) = l.irregular.get(token) {
        return lemma.clone();
    }
    if is_number(token) || !token.chars().all(char::is_alphabetic) {
        return token.to_string();
    }
    for rule in &l.suffixes {
        let Some(stem) = token.strip_suffix(rule.suffix.as_str()) else { continue };
        if stem.chars().count() < rule.min_stem {
            continue;
        }
        let mut lemma = format!("{stem}{}", rule.replacement);
        if rule.undouble {
            let chars: Vec<char> = lemma.chars().collect();
            let n = chars.len();
            if n >= 2
                && chars[n - 1] == chars[n - 2]
                && !is_vowel(chars[n - 1])
                && !matches!(chars[n - 1], 'l' | 's' | 'z')
            {
                lemma.pop();
            }
        }
        return lemma;
    }
    token.to_string()
}

/// Lowercased lemmas of the utterance with determiners removed.
pub fn lemmas(utterance: &str) -> Vec<String> {
    match_tokens(utterance).into_iter().filter(|t| !DETERMINERS.contains(&t.as_str())).map(|t| lemmatize(&t)).collect()
}

/// Document frequencies of noun lemmas over the training utterances.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NounFilter {
    pub doc_freq: BTreeMap<String, usize>,
    pub total: usize,
}

pub fn is_noun(lemma: &str) -> bool {
    !is_function_word(lemma) && !is_number(lemma)
}

impl NounFilter {
    pub fn build<S: AsRef<str>>(utterances: &[S]) -> Self {
        let mut doc_freq = BTreeMap::new();
        for u in utterances {
            let distinct: std::collections::BTreeSet<String> =
                lemmas(u.as_ref()).into_iter().filter(|l| is_noun(l)).collect();
            for l in distinct {
                *doc_freq.entry(l).or_insert(0) += 1;
            }
        }
        NounFilter { doc_freq, total: utterances.len() }
    }

    /// Whether a lemma survives. With no training statistics nothing is
    /// filtered.
    pub fn keeps(&self, lemma: &str) -> bool {
        if self.total == 0 || !is_noun(lemma) {
            return true;
        }
        let df = self.doc_freq.get(lemma).copied().unwrap_or(0);
        df as f64 >= RARE_NOUN_FRACTION * self.total as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# macrogram-nouns v1\ntotal\t{}\n", self.total);
        for (l, n) in &self.doc_freq {
            let _ = writeln!(s, "{l}\t{n}");
        }
        s
    }

    pub fn from_text(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        if lines.next()? != "# macrogram-nouns v1" {
            return None;
        }
        let total = lines.next()?.strip_prefix("total\t")?.parse().ok()?;
        let mut doc_freq = BTreeMap::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let (l, n) = line.split_once('\t')?;
            doc_freq.insert(l.to_string(), n.parse().ok()?);
        }
        Some(NounFilter { doc_freq, total })
    }
}

/// Token sequence used for similarity: lemmas without determiners and
/// without rare nouns, or a single sentinel when nothing is left.
pub fn preprocess(utterance: &str, filter: &NounFilter) -> Vec<String> {
    let kept: Vec<String> = lemmas(utterance).into_iter().filter(|l| filter.keeps(l)).collect();
    if kept.is_empty() {
        vec![EMPTY_SENTINEL.to_string()]
    } else {
        kept
    }
}

/// Unit-cost edit distance over whole tokens.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// (distance, corpus index) pairs, nearest first.
pub type Neighbors = Vec<(usize, usize)>;

/// Nearest training utterances of `query` among `corpus`, excluding
/// `exclude`, sorted by (distance, index) and cut to `k_max`.
pub fn nearest(query: &[String], corpus: &[Vec<String>], k_max: usize, exclude: Option<usize>) -> Neighbors {
    let mut all: Neighbors = corpus
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != exclude)
        .map(|(j, c)| (levenshtein(query, c), j))
        .collect();
    all.sort_unstable();
    all.truncate(k_max);
    all
}

/// Precomputed neighbor lists for every training utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnnIndex {
    pub k_max: usize,
    pub neighbors: Vec<Neighbors>,
}

pub const KNN_HEADER: &str = "# macrogram-knn v1";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bad neighbor cache: {0}")]
pub struct KnnCacheError(String);

impl KnnIndex {
    pub fn build(corpus: &[Vec<String>], k_max: usize) -> Self {
        let n = corpus.len();
        let mut dist = vec![0usize; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = levenshtein(&corpus[i], &corpus[j]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        let neighbors = (0..n)
            .map(|i| {
                let mut row: Neighbors = (0..n).filter(|&j| j != i).map(|j| (dist[i * n + j], j)).collect();
                row.sort_unstable();
                row.truncate(k_max);
                row
            })
            .collect();
        KnnIndex { k_max, neighbors }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{KNN_HEADER}\nk_max\t{}\n", self.k_max);
        for (i, row) in self.neighbors.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|(d, j)| format!("{d}:{j}")).collect();
            let _ = writeln!(s, "{i}\t{}", cells.join(","));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, KnnCacheError> {
        let bad = |m: &str| KnnCacheError(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(KNN_HEADER) {
            return Err(bad("header"));
        }
        let k_max = lines
            .next()
            .and_then(|l| l.strip_prefix("k_max\t"))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("k_max"))?;
        let mut neighbors = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let (i, row) = line.split_once('\t').unwrap_or((line, ""));
            if i.parse::<usize>().ok() != Some(neighbors.len()) {
                return Err(bad("row index"));
            }
            let mut parsed = Vec::new();
            for cell in row.split(',').filter(|c| !c.is_empty()) {
                let (d, j) = cell.split_once(':').ok_or_else(|| bad("cell"))?;
                parsed.push((d.parse().map_err(|_| bad("distance"))?, j.parse().map_err(|_| bad("index"))?));
            }
            neighbors.push(parsed);
        }
        Ok(KnnIndex { k_max, neighbors })
    }
}

/// Macro rules of the first `k` neighbors that have an associated logical
/// form, deduplicated and ordered by rule id.
pub fn trigger_rules(neighbors: &[(usize, usize)], store: &MacroStore, k: usize) -> Vec<Arc<Rule>> {
    let mut rules: BTreeMap<Arc<str>, Arc<Rule>> = BTreeMap::new();
    for (_, j) in neighbors.iter().filter(|(_, j)| store.is_associated(*j)).take(k) {
        let macro_id = &store.association(*j).expect("associated").macro_id;
        for r in store.rules_of(macro_id) {
            rules.entry(r.id.clone()).or_insert(r);
        }
    }
    rules.into_values().collect()
}
