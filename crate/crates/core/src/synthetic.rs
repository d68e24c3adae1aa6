//! Random small tables with questions drawn from a fixed set of question
//! templates. Answers come from executing each question's gold logical form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{examples_tsv, Dataset, Example};
use crate::grammar::base_rule;
use crate::kb::{load_table, text_answer_key, KnowledgeBase, Relation, TableFormat, Value};
use crate::lf::build::{all_rows, entity, rel};
use crate::lf::{execute, Denotation, LogicalForm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Template {
    CountFilter,
    Lookup,
    NextRow,
    ArgmaxColumn,
    ComparisonOfTwo,
    DifferenceOfCounts,
}

impl Template {
    pub const ALL: [Template; 6] = [
        Template::CountFilter,
        Template::Lookup,
        Template::NextRow,
        Template::ArgmaxColumn,
        Template::ComparisonOfTwo,
        Template::DifferenceOfCounts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::CountFilter => "count-filter",
            Template::Lookup => "lookup",
            Template::NextRow => "next-row",
            Template::ArgmaxColumn => "argmax-column",
            Template::ComparisonOfTwo => "comparison-of-two",
            Template::DifferenceOfCounts => "difference-of-counts",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticExample {
    pub id: String,
    pub utterance: String,
    pub table: usize,
    pub template: Template,
    pub gold: Arc<LogicalForm>,
    pub answers: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SyntheticTable {
    /// Path relative to the table directory.
    pub path: String,
    pub csv: String,
    pub kb: Arc<KnowledgeBase>,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub tables: Vec<SyntheticTable>,
    pub examples: Vec<SyntheticExample>,
}

const NAMES: &[&str] = &[
    "Albania",
    "Andorra",
    "Armenia",
    "Austria",
    "Belarus",
    "Belgium",
    "Bolivia",
    "Brazil",
    "Bulgaria",
    "Canada",
    "Chile",
    "Colombia",
    "Croatia",
    "Cuba",
    "Cyprus",
    "Denmark",
    "Ecuador",
    "Egypt",
    "Estonia",
    "Finland",
    "France",
    "Georgia",
    "Germany",
    "Ghana",
    "Greece",
    "Hungary",
    "Iceland",
    "India",
    "Iran",
    "Ireland",
    "Israel",
    "Italy",
    "Jamaica",
    "Japan",
    "Jordan",
    "Kenya",
    "Latvia",
    "Lebanon",
    "Lithuania",
    "Malta",
    "Mexico",
    "Moldova",
    "Monaco",
    "Morocco",
    "Nepal",
    "Nigeria",
    "Norway",
    "Oman",
    "Panama",
    "Peru",
    "Poland",
    "Portugal",
    "Qatar",
    "Romania",
    "Russia",
    "Rwanda",
    "Serbia",
    "Slovakia",
    "Slovenia",
    "Spain",
    "Sweden",
    "Syria",
    "Taiwan",
    "Thailand",
    "Tunisia",
    "Turkey",
    "Uganda",
    "Ukraine",
    "Uruguay",
    "Vietnam",
    "Yemen",
    "Zambia",
    "Aberdeen",
    "Bristol",
    "Cardiff",
    "Dundee",
    "Exeter",
    "Glasgow",
    "Hull",
    "Leeds",
    "Lisbon",
    "Madrid",
    "Naples",
    "Oslo",
    "Porto",
    "Seville",
    "Toledo",
    "Turin",
    "Vienna",
    "Warsaw",
];

/// (header, noun used in questions)
const SUBJECTS: &[(&str, &str)] =
    &[("Nation", "nation"), ("Player", "player"), ("Team", "team"), ("Athlete", "athlete"), ("Club", "club")];

const GROUP_HEADERS: &[&str] = &["Region", "League", "Group", "Division"];

const GROUP_VALUES: &[&str] =
    &["North", "South", "East", "West", "Central", "Coastal", "Highland", "Premier", "Amateur", "Eastern", "Western"];

const NUMERIC_HEADERS: &[&str] = &["Gold", "Silver", "Bronze", "Points", "Wins", "Goals", "Losses"];

struct TableSpec {
    subject: (&'static str, &'static str),
    group: &'static str,
    numeric: Vec<&'static str>,
    names: Vec<&'static str>,
    groups: Vec<&'static str>,
    values: Vec<Vec<u32>>,
}

impl TableSpec {
    fn random(rng: &mut ChaCha8Rng) -> TableSpec {
        let rows = rng.gen_range(10..=16);
        let subject = *SUBJECTS.choose(rng).expect("nonempty");
        let group = *GROUP_HEADERS.choose(rng).expect("nonempty");
        let width = rng.gen_range(2..=3);
        let numeric: Vec<&str> = NUMERIC_HEADERS.choose_multiple(rng, width).copied().collect();
        let names: Vec<&str> = NAMES.choose_multiple(rng, rows).copied().collect();
        let pool: Vec<&str> = GROUP_VALUES.choose_multiple(rng, 3).copied().collect();
        let groups = (0..rows).map(|_| *pool.choose(rng).expect("nonempty")).collect();
        let values = (0..rows).map(|_| numeric.iter().map(|_| rng.gen_range(0..=30)).collect()).collect();
        TableSpec { subject, group, numeric, names, groups, values }
    }

    fn csv(&self) -> String {
        let mut s = format!("{},{}", self.subject.0, self.group);
        for h in &self.numeric {
            let _ = write!(s, ",{h}");
        }
        s.push('\n');
        for (i, name) in self.names.iter().enumerate() {
            let _ = write!(s, "{name},{}", self.groups[i]);
            for v in &self.values[i] {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

fn column_of(kb: &KnowledgeBase, header: &str) -> Arc<LogicalForm> {
    let col = kb.columns().iter().find(|c| c.name == header).expect("generated header");
    rel(Relation::Column(col.id.clone()))
}

fn cell(kb: &KnowledgeBase, text: &str) -> Arc<LogicalForm> {
    let e = kb.entities().find(|e| &*e.text == text).expect("generated cell");
    entity(Value::Cell(e.clone()))
}

fn apply(rule: &str, args: &[Arc<LogicalForm>]) -> Arc<LogicalForm> {
    base_rule(rule).expect("base rule").build(args)
}

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[&'a str]) -> &'a str {
    options.choose(rng).expect("nonempty")
}

/// Builds one question of `template` on a table, or `None` when the table
/// cannot support it (for example a tie where a unique answer is needed).
fn question(
    template: Template,
    spec: &TableSpec,
    kb: &KnowledgeBase,
    rng: &mut ChaCha8Rng,
) -> Option<(String, Arc<LogicalForm>)> {
    let noun = spec.subject.1;
    let subject = column_of(kb, spec.subject.0);
    let group_col = column_of(kb, spec.group);
    let group_word = spec.group.to_lowercase();
    let lift = |z: Arc<LogicalForm>| apply("lift", &[z]);
    match template {
        Template::CountFilter => {
            let g = *spec.groups.choose(rng)?;
            let phrasing = pick(
                rng,
                &[
                    "how many {n}s are in the {G} {g}?",
                    "how many {n}s are in {g}?",
                    "what is the number of {n}s in {g}?",
                ],
            );
            let z = apply("count", &[apply("join", &[group_col, lift(cell(kb, g))])]);
            Some((phrasing.replace("{n}", noun).replace("{G}", &group_word).replace("{g}", g), z))
        }
        Template::Lookup => {
            let name = *spec.names.choose(rng)?;
            let (col, h) = if rng.gen_bool(0.75) {
                let h = *spec.numeric.choose(rng)?;
                (column_of(kb, h), h.to_lowercase())
            } else {
                (group_col, group_word)
            };
            let phrasing = pick(rng, &["what is the {h} of {x}?", "what was {x}'s {h}?", "how about the {h} for {x}?"]);
            let z = apply("revjoin", &[col, apply("join", &[subject, lift(cell(kb, name))])]);
            Some((phrasing.replace("{h}", &h).replace("{x}", name), z))
        }
        Template::NextRow => {
            let i = rng.gen_range(0..spec.names.len() - 1);
            let name = spec.names[i];
            let phrasing = pick(
                rng,
                &["which {n} is listed after {x}?", "who comes right after {x}?", "what {n} is next after {x}?"],
            );
            let z =
                apply("revjoin", &[subject.clone(), apply("next", &[apply("join", &[subject, lift(cell(kb, name))])])]);
            Some((phrasing.replace("{n}", noun).replace("{x}", name), z))
        }
        Template::ArgmaxColumn => {
            let k = rng.gen_range(0..spec.numeric.len());
            let best = spec.values.iter().map(|r| r[k]).max()?;
            if spec.values.iter().filter(|r| r[k] == best).count() != 1 {
                return None;
            }
            let h = spec.numeric[k].to_lowercase();
            let phrasing =
                pick(rng, &["which {n} has the most {h}?", "who had the highest {h}?", "which {n} got the most {h}?"]);
            let z = apply("revjoin", &[subject, apply("argmax_rel", &[all_rows(), column_of(kb, spec.numeric[k])])]);
            Some((phrasing.replace("{n}", noun).replace("{h}", &h), z))
        }
        Template::ComparisonOfTwo => {
            let k = rng.gen_range(0..spec.numeric.len());
            let pair: Vec<usize> = (0..spec.names.len()).collect::<Vec<_>>().choose_multiple(rng, 2).copied().collect();
            let (a, b) = (pair[0], pair[1]);
            if spec.values[a][k] == spec.values[b][k] {
                return None;
            }
            let h = spec.numeric[k].to_lowercase();
            let phrasing = pick(
                rng,
                &[
                    "who has more {h}, {a} or {b}?",
                    "which {n} got more {h}: {a} or {b}?",
                    "did {a} or {b} have more {h}?",
                ],
            );
            let composed = apply("compose", &[column_of(kb, spec.numeric[k]), subject]);
            let both = apply("or", &[cell(kb, spec.names[a]), cell(kb, spec.names[b])]);
            let z = apply("argmax_rel", &[both, composed]);
            Some((
                phrasing
                    .replace("{n}", noun)
                    .replace("{h}", &h)
                    .replace("{a}", spec.names[a])
                    .replace("{b}", spec.names[b]),
                z,
            ))
        }
        Template::DifferenceOfCounts => {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for g in &spec.groups {
                *counts.entry(g).or_insert(0) += 1;
            }
            let mut by_count: Vec<(&str, usize)> = counts.into_iter().collect();
            by_count.shuffle(rng);
            let (hi, lo) = (by_count.first()?, by_count.get(1)?);
            let (hi, lo) = if hi.1 > lo.1 {
                (hi.0, lo.0)
            } else if lo.1 > hi.1 {
                (lo.0, hi.0)
            } else {
                return None;
            };
            let phrasing = pick(
                rng,
                &["how many more {n}s are in {a} than in {b}?", "how many more {n}s does {a} have than {b}?"],
            );
            let count_of = |g: &str| apply("count", &[apply("join", &[group_col.clone(), lift(cell(kb, g))])]);
            let z = apply("sub", &[count_of(hi), count_of(lo)]);
            Some((phrasing.replace("{n}", noun).replace("{a}", hi).replace("{b}", lo), z))
        }
    }
}

fn answers_of(d: &Denotation) -> Vec<String> {
    d.values().iter().map(Value::display_text).collect()
}

pub const QUESTIONS_PER_TABLE: usize = 5;

impl SyntheticCorpus {
    /// `size` examples over fresh tables, each table serving up to
    /// `QUESTIONS_PER_TABLE` questions. Every answer is the executed gold form.
    pub fn generate(size: usize, seed: u64) -> SyntheticCorpus {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tables = Vec::new();
        let mut examples = Vec::new();
        while examples.len() < size {
            let spec = TableSpec::random(&mut rng);
            let csv = spec.csv();
            let kb = Arc::new(load_table(&csv, TableFormat::Csv).expect("generated table loads"));
            let table = tables.len();
            let mut made = 0;
            for _ in 0..4 * QUESTIONS_PER_TABLE {
                if made == QUESTIONS_PER_TABLE || examples.len() == size {
                    break;
                }
                let template = *Template::ALL.choose(&mut rng).expect("nonempty");
                let Some((utterance, gold)) = question(template, &spec, &kb, &mut rng) else { continue };
                let den = execute(&gold, &kb).expect("gold form executes");
                if den.is_empty() {
                    continue;
                }
                made += 1;
                examples.push(SyntheticExample {
                    id: format!("syn-{seed}-{:05}", examples.len()),
                    utterance,
                    table,
                    template,
                    gold,
                    answers: answers_of(&den),
                });
            }
            tables.push(SyntheticTable { path: format!("csv/syn-{seed}-{table:04}.csv"), csv, kb });
        }
        SyntheticCorpus { tables, examples }
    }

    pub fn examples_tsv(&self) -> String {
        examples_tsv(
            self.examples.iter().map(|e| {
                (e.id.as_str(), e.utterance.as_str(), self.tables[e.table].path.as_str(), e.answers.as_slice())
            }),
        )
    }

    pub fn to_dataset(&self) -> Dataset {
        let examples = self
            .examples
            .iter()
            .map(|e| Example {
                id: e.id.clone(),
                utterance: e.utterance.clone(),
                table_path: self.tables[e.table].path.clone(),
                table: self.tables[e.table].kb.clone(),
                targets: e.answers.clone(),
                target_keys: e.answers.iter().map(|a| text_answer_key(a)).collect(),
            })
            .collect();
        Dataset { examples }
    }

    /// Writes `examples.tsv` and the tables under `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        for t in &self.tables {
            let path = dir.join(&t.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, &t.csv)?;
        }
        std::fs::write(dir.join("examples.tsv"), self.examples_tsv())
    }
}
