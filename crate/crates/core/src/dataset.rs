//! Question/answer datasets in the WikiTableQuestions release layout: a
//! TSV of `id, utterance, context, targetValue` with `|`-separated targets,
//! and tables referenced by path relative to a table directory.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::kb::{load_table, text_answer_key, KnowledgeBase, TableError, TableFormat};

#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub utterance: String,
    pub table_path: String,
    pub table: Arc<KnowledgeBase>,
    /// Raw target values as written in the file.
    pub targets: Vec<String>,
    /// Normalized comparison keys of the targets.
    pub target_keys: BTreeSet<String>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Table { path: PathBuf, source: TableError },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("missing column `{0}` in examples header")]
    MissingColumn(&'static str),
    #[error("duplicate example id `{0}`")]
    DuplicateId(String),
    #[error("no examples")]
    Empty,
}

/// Reverses the escapes used in the examples file: `\n`, `\p` for a pipe
/// and `\\`.
pub fn unescape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('p') => out.push('|'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub fn escape(field: &str) -> String {
    field.replace('\\', "\\\\").replace('\n', "\\n").replace('|', "\\p")
}

/// Splits a target field on unescaped pipes.
fn split_targets(field: &str) -> Vec<String> {
    field.split('|').map(unescape).collect()
}

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

impl Dataset {
    /// Loads the examples file, resolving each `context` against `tables`.
    pub fn load(examples: &Path, tables: &Path) -> Result<Dataset, DataError> {
        let text = read(examples)?;
        let mut cache: HashMap<String, Arc<KnowledgeBase>> = HashMap::new();
        Dataset::parse(&text, &mut |rel| {
            if let Some(kb) = cache.get(rel) {
                return Ok(kb.clone());
            }
            let path = tables.join(rel);
            let kb = load_table(&read(&path)?, TableFormat::from_path(rel))
                .map_err(|source| DataError::Table { path: path.clone(), source })?;
            let kb = Arc::new(kb);
            cache.insert(rel.to_string(), kb.clone());
            Ok(kb)
        })
    }

    pub fn parse(
        text: &str,
        resolve: &mut dyn FnMut(&str) -> Result<Arc<KnowledgeBase>, DataError>,
    ) -> Result<Dataset, DataError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(DataError::Empty)?;
        let header: Vec<&str> = header.trim_end_matches('\r').split('\t').collect();
        let col = |name: &'static str| header.iter().position(|h| *h == name).ok_or(DataError::MissingColumn(name));
        let (id_col, utt_col, ctx_col, tgt_col) = (col("id")?, col("utterance")?, col("context")?, col("targetValue")?);
        let mut seen = HashSet::new();
        let mut examples = Vec::new();
        for (i, line) in lines {
            let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            let field = |c: usize| {
                fields.get(c).copied().ok_or_else(|| DataError::Line {
                    line: i + 1,
                    message: format!("expected {} fields, found {}", header.len(), fields.len()),
                })
            };
            let id = field(id_col)?.to_string();
            if !seen.insert(id.clone()) {
                return Err(DataError::DuplicateId(id));
            }
            let targets = split_targets(field(tgt_col)?);
            if targets.iter().all(|t| t.trim().is_empty()) {
                return Err(DataError::Line { line: i + 1, message: "empty target".into() });
            }
            let table_path = field(ctx_col)?.to_string();
            let table = resolve(&table_path)?;
            let target_keys = targets.iter().map(|t| text_answer_key(t)).collect();
            examples.push(Example {
                id,
                utterance: unescape(field(utt_col)?),
                table_path,
                table,
                targets,
                target_keys,
            });
        }
        if examples.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(Dataset { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Writes examples in the same layout `Dataset::parse` reads.
pub fn examples_tsv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str, &'a [String])>) -> String {
    let mut s = String::from("id\tutterance\tcontext\ttargetValue\n");
    for (id, utt, ctx, targets) in rows {
        let t: Vec<String> = targets.iter().map(|t| escape(t)).collect();
        let _ = writeln!(s, "{id}\t{}\t{ctx}\t{}", escape(utt), t.join("|"));
    }
    s
}
