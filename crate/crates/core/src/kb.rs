//! Single-table knowledge base.
//!
//! Rows and cells are entities. Each column is a relation from a row to the
//! cell it holds; `Next` links a row to its successor and `Index` maps a row
//! to its 1-based position. Cells that carry a number or a date expose it
//! through the `NumProp` / `DateProp` property relations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, OnceLock};

use ordered_float::OrderedFloat;
use regex::Regex;
use thiserror::Error;

/// A table cell entity. Identity is the id alone; `text` is the first raw
/// spelling seen for that id.
#[derive(Clone, Debug)]
pub struct Entity {
    pub id: Arc<str>,
    pub text: Arc<str>,
}

impl Entity {
    pub fn new(id: impl Into<Arc<str>>, text: impl Into<Arc<str>>) -> Self {
        Entity { id: id.into(), text: text.into() }
    }

    /// An entity reference that only knows its id (e.g. parsed from text).
    pub fn from_id(id: &str) -> Self {
        let id: Arc<str> = Arc::from(id);
        Entity { text: id.clone(), id }
    }
}

impl PartialEq for Entity {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}

impl Eq for Entity {}

impl Hash for Entity {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.id.hash(state);
    }
}

impl PartialOrd for Entity {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entity {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.id.cmp(&other.id)
    }
}

/// A possibly partial calendar date. At least one component is present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Date {
    pub year: Option<i32>,
    pub month: Option<u32>,
    pub day: Option<u32>,
}

impl Date {
    pub fn new(year: Option<i32>, month: Option<u32>, day: Option<u32>) -> Option<Self> {
        if year.is_none() && month.is_none() && day.is_none() {
            return None;
        }
        Some(Date { year, month, day })
    }

    pub fn ymd(year: i32, month: u32, day: u32) -> Self {
        Date { year: Some(year), month: Some(month), day: Some(day) }
    }

    pub fn year(year: i32) -> Self {
        Date { year: Some(year), month: None, day: None }
    }
}

impl fmt::Display for Date {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn part<T: fmt::Display>(v: Option<T>) -> String {
            v.map(|v| v.to_string()).unwrap_or_else(|| "x".to_string())
        }
        write!(f, "date({},{},{})", part(self.year), part(self.month), part(self.day))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    /// Data row, 1-based.
    Row(u32),
    Cell(Entity),
    Number(OrderedFloat<f64>),
    Date(Date),
    Str(Arc<str>),
}

impl Value {
    pub fn number(n: f64) -> Self {
        // -0.0 and 0.0 must be one value.
        Value::Number(OrderedFloat(if n == 0.0 { 0.0 } else { n }))
    }

    pub fn cell(id: &str) -> Self {
        Value::Cell(Entity::from_id(id))
    }

    pub fn string(s: &str) -> Self {
        Value::Str(Arc::from(s))
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(n) => Some(n.0),
            _ => None,
        }
    }

    pub fn is_row(&self) -> bool {
        matches!(self, Value::Row(_))
    }

    pub fn is_cell(&self) -> bool {
        matches!(self, Value::Cell(_))
    }

    /// Human-readable rendering used for predicted answers.
    pub fn display_text(&self) -> String {
        match self {
            Value::Row(i) => format!("row {i}"),
            Value::Cell(e) => e.text.to_string(),
            Value::Number(n) => format_number(n.0),
            Value::Date(d) => {
                let mut s = String::new();
                if let Some(y) = d.year {
                    s.push_str(&y.to_string());
                }
                if let Some(m) = d.month {
                    s.push_str(&format!("-{m:02}"));
                }
                if let Some(dd) = d.day {
                    s.push_str(&format!("-{dd:02}"));
                }
                s
            }
            Value::Str(s) => s.to_string(),
        }
    }
}

pub type ValueSet = BTreeSet<Value>;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Column(Arc<str>),
    Next,
    Index,
    NumProp,
    DateProp,
}

impl Relation {
    pub fn column(id: &str) -> Self {
        Relation::Column(Arc::from(id))
    }
}

/// Integers print without a decimal point; everything else uses the
/// shortest round-tripping representation.
pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("table has no data rows")]
    EmptyTable,
    #[error("row {row} has {found} fields, header has {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("malformed table: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Tsv,
}

impl TableFormat {
    /// Guesses the format from a file name; anything not ending in `.tsv` is CSV.
    pub fn from_path(path: &str) -> Self {
        if path.ends_with(".tsv") {
            TableFormat::Tsv
        } else {
            TableFormat::Csv
        }
    }
}

#[derive(Clone, Debug)]
pub struct Column {
    pub id: Arc<str>,
    pub name: String,
}

#[derive(Clone, Debug)]
struct CellInfo {
    number: Option<f64>,
    date: Option<Date>,
}

type Index = BTreeMap<Value, ValueSet>;

#[derive(Clone, Debug)]
pub struct KnowledgeBase {
    columns: Vec<Column>,
    rows: Vec<Vec<Option<Entity>>>,
    cells: BTreeMap<Arc<str>, (Entity, CellInfo)>,
    forward: HashMap<Relation, Index>,
    reverse: HashMap<Relation, Index>,
    /// Every number and date reachable through `NumProp`, `DateProp` or `Index`.
    ordered_universe: ValueSet,
}

/// Lowercase, trim, and collapse internal whitespace.
pub fn normalize_text(raw: &str) -> String {
    raw.split_whitespace().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")
}

/// Lowercase alphanumeric tokens of a string; used to match utterance spans
/// against cell text.
pub fn match_tokens(raw: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+(?:[.,]\p{N}+)*").unwrap());
    re.find_iter(raw).map(|m| m.as_str().to_lowercase()).collect()
}

/// Maps runs of non-alphanumeric characters to `_`.
fn slug(text: &str) -> String {
    let mut out = String::new();
    let mut pending = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if pending && !out.is_empty() {
                out.push('_');
            }
            pending = false;
            out.extend(c.to_lowercase());
        } else {
            pending = true;
        }
    }
    out
}

fn column_slug(name: &str) -> String {
    let s = slug(name);
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        format!("col_{s}").trim_end_matches('_').to_string()
    } else {
        s
    }
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?|-?\.\d+").unwrap())
}

fn date_regexes() -> &'static [Regex; 3] {
    static RE: OnceLock<[Regex; 3]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"^(\d{4})$").unwrap(),
            Regex::new(r"^(\d{4})-(\d{1,2})-(\d{1,2})$").unwrap(),
            Regex::new(r"^([A-Za-z]+)\.? (\d{1,2}), (\d{4})$").unwrap(),
        ]
    })
}

const MONTHS: [&str; 12] = [
    "january",
    "february",
    "march",
    "april",
    "may",
    "june",
    "july",
    "august",
    "september",
    "october",
    "november",
    "december",
];

fn month_number(name: &str) -> Option<u32> {
    let lower = name.to_lowercase();
    MONTHS.iter().position(|m| *m == lower || (lower.len() >= 3 && m.starts_with(&lower))).map(|i| i as u32 + 1)
}

/// Parses a date if the whole (trimmed) text is `YYYY`, `YYYY-MM-DD` or
/// `Month D, YYYY`.
pub fn parse_date(raw: &str) -> Option<Date> {
    let text = raw.trim();
    let [year_only, iso, long] = date_regexes();
    if let Some(c) = year_only.captures(text) {
        return Some(Date::year(c[1].parse().ok()?));
    }
    if let Some(c) = iso.captures(text) {
        let (m, d): (u32, u32) = (c[2].parse().ok()?, c[3].parse().ok()?);
        if (1..=12).contains(&m) && (1..=31).contains(&d) {
            return Some(Date::ymd(c[1].parse().ok()?, m, d));
        }
        return None;
    }
    if let Some(c) = long.captures(text) {
        let m = month_number(&c[1])?;
        let d: u32 = c[2].parse().ok()?;
        if (1..=31).contains(&d) {
            return Some(Date::ymd(c[3].parse().ok()?, m, d));
        }
    }
    None
}

/// Extracts the first decimal number (commas stripped) and a date from raw
/// cell text. Full dates suppress the number; a bare year yields both.
pub fn normalize_cell(raw: &str) -> (Option<f64>, Option<Date>) {
    let date = parse_date(raw);
    if matches!(date, Some(Date { month: Some(_), .. })) {
        return (None, date);
    }
    let number = number_regex()
        .find(raw)
        .and_then(|m| m.as_str().replace(',', "").parse::<f64>().ok())
        .filter(|n| n.is_finite());
    (number, date)
}

/// Canonical comparison key for answers: numbers and dates by value,
/// everything else by normalized text.
pub fn text_answer_key(raw: &str) -> String {
    let norm = normalize_text(raw);
    let stripped = norm.replace(',', "");
    if let Ok(n) = stripped.parse::<f64>() {
        if n.is_finite() {
            return format_number(n);
        }
    }
    if let Some(d) = parse_date(&norm) {
        return date_key(&d);
    }
    norm
}

fn date_key(d: &Date) -> String {
    match (d.year, d.month, d.day) {
        (Some(y), None, None) => y.to_string(),
        _ => d.to_string(),
    }
}

pub fn answer_key(v: &Value) -> String {
    match v {
        Value::Row(i) => format!("row:{i}"),
        Value::Cell(e) => text_answer_key(&e.text),
        Value::Number(n) => format_number(n.0),
        Value::Date(d) => date_key(d),
        Value::Str(s) => text_answer_key(s),
    }
}

pub fn answer_keys<'a>(values: impl IntoIterator<Item = &'a Value>) -> BTreeSet<String> {
    values.into_iter().map(answer_key).collect()
}

fn read_records(text: &str, format: TableFormat) -> Result<Vec<Vec<String>>, TableError> {
    match format {
        TableFormat::Tsv => Ok(text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim_end_matches('\r').split('\t').map(str::to_string).collect())
            .collect()),
        TableFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
            let mut out = Vec::new();
            for record in reader.records() {
                let record = record.map_err(|e| TableError::Malformed(e.to_string()))?;
                if record.len() == 1 && record[0].trim().is_empty() {
                    continue;
                }
                out.push(record.iter().map(str::to_string).collect());
            }
            Ok(out)
        }
    }
}

pub fn load_table(text: &str, format: TableFormat) -> Result<KnowledgeBase, TableError> {
    let records = read_records(text, format)?;
    let (header, body) = records.split_first().ok_or(TableError::EmptyTable)?;
    if body.is_empty() {
        return Err(TableError::EmptyTable);
    }
    for (i, row) in body.iter().enumerate() {
        if row.len() != header.len() {
            return Err(TableError::RaggedRows { row: i + 1, expected: header.len(), found: row.len() });
        }
    }
    KnowledgeBase::from_grid(header, body)
}

impl KnowledgeBase {
    pub fn from_grid<S: AsRef<str>>(header: &[S], body: &[Vec<S>]) -> Result<Self, TableError> {
        if body.is_empty() {
            return Err(TableError::EmptyTable);
        }
        let mut seen: HashMap<String, usize> = HashMap::new();
        let columns: Vec<Column> = header
            .iter()
            .map(|name| {
                let base = column_slug(name.as_ref());
                let n = seen.entry(base.clone()).or_insert(0);
                *n += 1;
                let id = if *n == 1 { base } else { format!("{base}_{n}") };
                Column { id: Arc::from(id.as_str()), name: name.as_ref().to_string() }
            })
            .collect();

        // normalized text -> entity; id -> normalized text (collision detection)
        let mut by_text: HashMap<String, Entity> = HashMap::new();
        let mut id_owner: HashMap<String, String> = HashMap::new();
        let mut cells = BTreeMap::new();
        let mut rows = Vec::with_capacity(body.len());
        for record in body {
            if record.len() != columns.len() {
                return Err(TableError::RaggedRows {
                    row: rows.len() + 1,
                    expected: columns.len(),
                    found: record.len(),
                });
            }
            let mut row = Vec::with_capacity(columns.len());
            for raw in record {
                let raw = raw.as_ref().trim();
                let norm = normalize_text(raw);
                if norm.is_empty() {
                    row.push(None);
                    continue;
                }
                let entity = by_text
                    .entry(norm.clone())
                    .or_insert_with(|| {
                        let base = match slug(&norm) {
                            s if s.is_empty() => "x".to_string(),
                            s => s,
                        };
                        let mut id = base.clone();
                        let mut k = 1;
                        while id_owner.get(&id).is_some_and(|owner| *owner != norm) {
                            k += 1;
                            id = format!("{base}_{k}");
                        }
                        id_owner.insert(id.clone(), norm.clone());
                        Entity::new(id.as_str(), raw)
                    })
                    .clone();
                let (number, date) = normalize_cell(raw);
                cells.entry(entity.id.clone()).or_insert_with(|| (entity.clone(), CellInfo { number, date }));
                row.push(Some(entity));
            }
            rows.push(row);
        }

        let mut kb = KnowledgeBase {
            columns,
            rows,
            cells,
            forward: HashMap::new(),
            reverse: HashMap::new(),
            ordered_universe: ValueSet::new(),
        };
        kb.materialize();
        Ok(kb)
    }

    fn add_pair(&mut self, rel: &Relation, subject: Value, object: Value) {
        self.forward.entry(rel.clone()).or_default().entry(subject.clone()).or_default().insert(object.clone());
        self.reverse.entry(rel.clone()).or_default().entry(object).or_default().insert(subject);
    }

    fn materialize(&mut self) {
        let n = self.rows.len() as u32;
        for rel in [Relation::Next, Relation::Index, Relation::NumProp, Relation::DateProp] {
            self.forward.entry(rel.clone()).or_default();
            self.reverse.entry(rel).or_default();
        }
        for c in 0..self.columns.len() {
            let rel = Relation::Column(self.columns[c].id.clone());
            self.forward.entry(rel.clone()).or_default();
            self.reverse.entry(rel.clone()).or_default();
            for r in 0..self.rows.len() {
                if let Some(e) = self.rows[r][c].clone() {
                    self.add_pair(&rel, Value::Row(r as u32 + 1), Value::Cell(e));
                }
            }
        }
        for i in 1..=n {
            if i < n {
                self.add_pair(&Relation::Next, Value::Row(i), Value::Row(i + 1));
            }
            self.add_pair(&Relation::Index, Value::Row(i), Value::number(i as f64));
            self.ordered_universe.insert(Value::number(i as f64));
        }
        let props: Vec<(Entity, CellInfo)> = self.cells.values().cloned().collect();
        for (e, info) in props {
            if let Some(num) = info.number {
                self.add_pair(&Relation::NumProp, Value::Cell(e.clone()), Value::number(num));
                self.ordered_universe.insert(Value::number(num));
            }
            if let Some(d) = info.date {
                self.add_pair(&Relation::DateProp, Value::Cell(e.clone()), Value::Date(d));
                self.ordered_universe.insert(Value::Date(d));
            }
        }
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cell_at(&self, row: usize, column: usize) -> Option<&Entity> {
        self.rows.get(row)?.get(column)?.as_ref()
    }

    /// Distinct cell entities in id order.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.cells.values().map(|(e, _)| e)
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.cells.get(id).map(|(e, _)| e)
    }

    pub fn has_column(&self, id: &str) -> bool {
        self.columns.iter().any(|c| &*c.id == id)
    }

    pub fn cell_number(&self, e: &Entity) -> Option<f64> {
        self.cells.get(&e.id).and_then(|(_, info)| info.number)
    }

    pub fn cell_date(&self, e: &Entity) -> Option<Date> {
        self.cells.get(&e.id).and_then(|(_, info)| info.date)
    }

    /// The full index of a relation, forward (subject -> objects) or reversed
    /// (object -> subjects). `None` for unknown columns.
    pub fn index(&self, rel: &Relation, reversed: bool) -> Option<&BTreeMap<Value, ValueSet>> {
        if reversed {
            self.reverse.get(rel)
        } else {
            self.forward.get(rel)
        }
    }

    /// Image (or preimage when `reversed`) of `inputs` under `rel`.
    pub fn relation_map(&self, rel: &Relation, inputs: &ValueSet, reversed: bool) -> ValueSet {
        let mut out = ValueSet::new();
        if let Some(index) = self.index(rel, reversed) {
            for v in inputs {
                if let Some(image) = index.get(v) {
                    out.extend(image.iter().cloned());
                }
            }
        }
        out
    }

    /// Numbers and dates that comparatives range over.
    pub fn ordered_universe(&self) -> &ValueSet {
        &self.ordered_universe
    }

    /// Every row, cell, number and date of the table.
    pub fn universe(&self) -> ValueSet {
        let mut out: ValueSet = (1..=self.rows.len() as u32).map(Value::Row).collect();
        out.extend(self.entities().cloned().map(Value::Cell));
        out.extend(self.ordered_universe.iter().cloned());
        out
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.forward.keys()
    }
}
