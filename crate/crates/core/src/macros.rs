//! Macros: derivation shapes with the terminals abstracted away.
//!
//! A macro keeps the compositional rule applications of a derivation and
//! replaces every terminal by a placeholder leaf labelled with its category.
//! Leaves that held the same partial logical form become one shared node.
//! Macros are decomposed into rules over sub-macro categories so that shared
//! sub-structures are generated once.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::grammar::{base_rule, Category, Rule};
use crate::lf::build::hole;
use crate::lf::{render_with_slots, LogicalForm};
use crate::parser::Derivation;

#[derive(Clone, Debug)]
pub enum MacroNode {
    Leaf { category: Category },
    Apply { rule: Arc<Rule>, children: Vec<usize> },
}

/// A rooted DAG over `nodes`. Only leaves may have several parents.
#[derive(Clone, Debug)]
pub struct Macro {
    pub nodes: Vec<MacroNode>,
    pub root: usize,
}

impl PartialEq for Macro {
    fn eq(&self, other: &Self) -> bool {
        self.serialize() == other.serialize()
    }
}

impl Eq for Macro {}

/// Abstracts a derivation into its macro. Derivations built with macro rules
/// are expanded back to base-rule form first.
pub fn extract_macro(d: &Derivation) -> Macro {
    let mut nodes = Vec::new();
    let mut leaves = HashMap::new();
    let root = extract_node(d, &mut nodes, &mut leaves);
    Macro { nodes, root }
}

fn extract_node(
    d: &Derivation,
    nodes: &mut Vec<MacroNode>,
    leaves: &mut HashMap<(Category, Arc<str>), usize>,
) -> usize {
    if d.rule.is_terminal() {
        return *leaves.entry((d.category.clone(), d.canonical.clone())).or_insert_with(|| {
            nodes.push(MacroNode::Leaf { category: d.category.clone() });
            nodes.len() - 1
        });
    }
    let children: Vec<usize> = d.children.iter().map(|c| extract_node(c, nodes, leaves)).collect();
    match &d.rule.origin {
        Some(origin) => {
            let mapping: HashMap<usize, usize> = origin.leaves().into_iter().zip(children).collect();
            copy_nodes(origin, origin.root, &mapping, nodes)
        }
        None => {
            nodes.push(MacroNode::Apply { rule: d.rule.clone(), children });
            nodes.len() - 1
        }
    }
}

/// Copies the subtree of `src` under `at` into `nodes`, mapping source leaves
/// through `leaf_map`.
fn copy_nodes(src: &Macro, at: usize, leaf_map: &HashMap<usize, usize>, nodes: &mut Vec<MacroNode>) -> usize {
    match &src.nodes[at] {
        MacroNode::Leaf { .. } => leaf_map[&at],
        MacroNode::Apply { rule, children } => {
            let children = children.iter().map(|c| copy_nodes(src, *c, leaf_map, nodes)).collect();
            nodes.push(MacroNode::Apply { rule: rule.clone(), children });
            nodes.len() - 1
        }
    }
}

impl Macro {
    fn children(&self, v: usize) -> &[usize] {
        match &self.nodes[v] {
            MacroNode::Leaf { .. } => &[],
            MacroNode::Apply { children, .. } => children,
        }
    }

    fn preorder(&self, v: usize, out: &mut Vec<usize>) {
        out.push(v);
        for &c in self.children(v) {
            self.preorder(c, out);
        }
    }

    /// Distinct leaves below `v` in first-occurrence depth-first order.
    fn leaves_under(&self, v: usize) -> Vec<usize> {
        let mut order = Vec::new();
        self.preorder(v, &mut order);
        let mut seen = BTreeSet::new();
        order.into_iter().filter(|&u| matches!(self.nodes[u], MacroNode::Leaf { .. }) && seen.insert(u)).collect()
    }

    /// Distinct leaves in first-occurrence depth-first order. These are the
    /// argument slots of the macro's rules.
    pub fn leaves(&self) -> Vec<usize> {
        self.leaves_under(self.root)
    }

    pub fn leaf_categories(&self) -> Vec<Category> {
        self.leaves()
            .into_iter()
            .map(|v| match &self.nodes[v] {
                MacroNode::Leaf { category } => category.clone(),
                MacroNode::Apply { .. } => unreachable!(),
            })
            .collect()
    }

    /// Number of reachable nodes, shared leaves counted once.
    pub fn node_count(&self) -> usize {
        let mut order = Vec::new();
        self.preorder(self.root, &mut order);
        order.into_iter().collect::<BTreeSet<_>>().len()
    }

    /// Canonical text: `(rule child..)` for rule applications and
    /// `Category#k` for leaves, with `k` numbering leaves by first occurrence.
    pub fn serialize(&self) -> String {
        self.serialize_at(self.root)
    }

    fn serialize_at(&self, v: usize) -> String {
        let mut classes = HashMap::new();
        let mut out = String::new();
        self.write_node(v, &mut classes, &mut out);
        out
    }

    fn write_node(&self, v: usize, classes: &mut HashMap<usize, usize>, out: &mut String) {
        match &self.nodes[v] {
            MacroNode::Leaf { category } => {
                let next = classes.len() + 1;
                let k = *classes.entry(v).or_insert(next);
                let _ = write!(out, "{category}#{k}");
            }
            MacroNode::Apply { rule, children } => {
                out.push('(');
                out.push_str(&rule.id);
                for &c in children {
                    out.push(' ');
                    self.write_node(c, classes, out);
                }
                out.push(')');
            }
        }
    }

    /// The logical form template of the subtree at `v`, with `Hole(i)` for
    /// the i-th leaf of `leaves`.
    fn template_at(&self, v: usize, leaves: &[usize]) -> Arc<LogicalForm> {
        match &self.nodes[v] {
            MacroNode::Leaf { .. } => hole(leaves.iter().position(|&l| l == v).expect("leaf in slot list")),
            MacroNode::Apply { rule, children } => {
                let args: Vec<Arc<LogicalForm>> = children.iter().map(|&c| self.template_at(c, leaves)).collect();
                rule.build(&args)
            }
        }
    }

    /// Logical form template of the whole macro; holes follow `leaves()`.
    pub fn template(&self) -> Arc<LogicalForm> {
        self.template_at(self.root, &self.leaves())
    }

    /// Display form with slots `{Category#k}` numbered in print order.
    pub fn template_string(&self) -> String {
        let cats = self.leaf_categories();
        let mut numbering: HashMap<usize, usize> = HashMap::new();
        render_with_slots(&self.template(), &mut |i| {
            let next = numbering.len() + 1;
            let k = *numbering.entry(i).or_insert(next);
            format!("{{{}#{k}}}", cats[i])
        })
    }

    /// The subtree at `v` as a standalone macro.
    fn submacro(&self, v: usize) -> Macro {
        let mut nodes = Vec::new();
        let mut map = HashMap::new();
        let root = self.copy_into(v, &mut nodes, &mut map);
        Macro { nodes, root }
    }

    fn copy_into(&self, v: usize, nodes: &mut Vec<MacroNode>, map: &mut HashMap<usize, usize>) -> usize {
        if let Some(&done) = map.get(&v) {
            return done;
        }
        let node = match &self.nodes[v] {
            MacroNode::Leaf { category } => MacroNode::Leaf { category: category.clone() },
            MacroNode::Apply { rule, children } => {
                let children = children.iter().map(|&c| self.copy_into(c, nodes, map)).collect();
                MacroNode::Apply { rule: rule.clone(), children }
            }
        };
        nodes.push(node);
        map.insert(v, nodes.len() - 1);
        nodes.len() - 1
    }

    /// A single rule producing every form of the macro at once.
    pub fn compile_atomic(&self) -> Rule {
        let id = format!("atomic:{}", self.serialize());
        Rule::macro_rule(&id, self.leaf_categories(), Category::Root, self.template(), self.clone())
    }

    /// Splits the macro into rules, innermost atomic sub-macros first. The
    /// last rule produces `Root`.
    pub fn decompose(&self) -> Vec<Rule> {
        let mut m = self.submacro(self.root);
        let mut rules = Vec::new();
        loop {
            let mut order = Vec::new();
            m.preorder(m.root, &mut order);
            let mut parents: HashMap<usize, BTreeSet<usize>> = HashMap::new();
            for &v in &order {
                for &c in m.children(v) {
                    parents.entry(c).or_default().insert(v);
                }
            }
            let subtree = |v: usize| {
                let mut s = Vec::new();
                m.preorder(v, &mut s);
                s.into_iter().collect::<BTreeSet<usize>>()
            };
            let closed = |v: usize| {
                let s = subtree(v);
                s.iter().all(|u| *u == v || parents.get(u).is_none_or(|p| p.is_subset(&s)))
            };
            let internal: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&v| matches!(m.nodes[v], MacroNode::Apply { .. }))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let closed_nodes: BTreeSet<usize> = internal.iter().copied().filter(|&v| closed(v)).collect();
            let atomic = |v: usize| subtree(v).iter().all(|u| *u == v || !closed_nodes.contains(u));
            let pick = closed_nodes
                .iter()
                .copied()
                .filter(|&v| v != m.root && atomic(v))
                .map(|v| (subtree(v).len(), m.serialize_at(v), v))
                .min();
            match pick {
                None => {
                    let id = format!("root:{}", m.serialize());
                    rules.push(Rule::macro_rule(&id, m.leaf_categories(), Category::Root, m.template(), m.clone()));
                    return rules;
                }
                Some((_, name, v)) => {
                    let sub = m.submacro(v);
                    let category = Category::Macro(Arc::from(name.as_str()));
                    rules.push(Rule::macro_rule(&name, sub.leaf_categories(), category.clone(), sub.template(), sub));
                    m.nodes[v] = MacroNode::Leaf { category };
                }
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MacroParseError {
    #[error("malformed macro at byte {0}")]
    Malformed(usize),
    #[error("unknown rule `{0}`")]
    UnknownRule(String),
}

/// Parses the output of `Macro::serialize` back into a macro over base rules.
pub fn parse_macro(text: &str) -> Result<Macro, MacroParseError> {
    struct P<'t> {
        text: &'t str,
        pos: usize,
        nodes: Vec<MacroNode>,
        classes: HashMap<usize, usize>,
    }
    impl P<'_> {
        fn node(&mut self) -> Result<usize, MacroParseError> {
            let rest = &self.text[self.pos..];
            if let Some(rest) = rest.strip_prefix('(') {
                let end = rest.find([' ', ')']).ok_or(MacroParseError::Malformed(self.pos))?;
                let id = &rest[..end];
                let rule = base_rule(id).ok_or_else(|| MacroParseError::UnknownRule(id.to_string()))?.clone();
                self.pos += 1 + end;
                let mut children = Vec::new();
                while self.text[self.pos..].starts_with(' ') {
                    self.pos += 1;
                    children.push(self.node()?);
                }
                if !self.text[self.pos..].starts_with(')') {
                    return Err(MacroParseError::Malformed(self.pos));
                }
                self.pos += 1;
                self.nodes.push(MacroNode::Apply { rule, children });
                return Ok(self.nodes.len() - 1);
            }
            // A leaf: category (possibly a braced macro name) then `#k`.
            let mut depth = 0i32;
            let mut hash = None;
            for (i, c) in rest.char_indices() {
                match c {
                    '{' | '(' => depth += 1,
                    '}' | ')' if depth > 0 => depth -= 1,
                    '#' if depth == 0 => {
                        hash = Some(i);
                        break;
                    }
                    ' ' | ')' if depth == 0 => break,
                    _ => {}
                }
            }
            let hash = hash.ok_or(MacroParseError::Malformed(self.pos))?;
            let category = Category::parse(&rest[..hash]).ok_or(MacroParseError::Malformed(self.pos))?;
            let digits: String = rest[hash + 1..].chars().take_while(char::is_ascii_digit).collect();
            let k: usize = digits.parse().map_err(|_| MacroParseError::Malformed(self.pos))?;
            self.pos += hash + 1 + digits.len();
            if let Some(&v) = self.classes.get(&k) {
                return Ok(v);
            }
            self.nodes.push(MacroNode::Leaf { category });
            self.classes.insert(k, self.nodes.len() - 1);
            Ok(self.nodes.len() - 1)
        }
    }
    let mut p = P { text, pos: 0, nodes: Vec::new(), classes: HashMap::new() };
    let root = p.node()?;
    if p.pos != text.len() {
        return Err(MacroParseError::Malformed(p.pos));
    }
    Ok(Macro { nodes: p.nodes, root })
}

#[derive(Clone, Debug)]
pub struct MacroEntry {
    pub id: String,
    pub body: Macro,
    pub template: String,
    pub frequency: u64,
    pub rule_ids: Vec<Arc<str>>,
}

/// An utterance's consistent logical form and the macro it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Association {
    pub lf: String,
    pub macro_id: String,
}

/// Induced macros, their deduplicated rules, and the utterances associated
/// with a consistent logical form.
#[derive(Clone, Debug, Default)]
pub struct MacroStore {
    macros: BTreeMap<String, MacroEntry>,
    rules: BTreeMap<Arc<str>, Arc<Rule>>,
    root_rules: BTreeMap<Arc<str>, String>,
    associations: BTreeMap<usize, Association>,
}

pub const STORE_HEADER: &str = "# macrogram-macros v1";
pub const ASSOCIATIONS_HEADER: &str = "# macrogram-associations v1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("missing or unsupported header")]
    Header,
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

impl MacroStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a macro with frequency 0 (or leaves an existing one alone) and
    /// returns its id.
    pub fn insert(&mut self, m: &Macro) -> String {
        let id = m.serialize();
        if !self.macros.contains_key(&id) {
            let mut rule_ids = Vec::new();
            for rule in m.decompose() {
                let rule = self.rules.entry(rule.id.clone()).or_insert_with(|| Arc::new(rule)).clone();
                rule_ids.push(rule.id.clone());
            }
            let root = rule_ids.last().expect("decomposition ends with a root rule").clone();
            self.root_rules.insert(root, id.clone());
            self.macros.insert(
                id.clone(),
                MacroEntry { id: id.clone(), body: m.clone(), template: m.template_string(), frequency: 0, rule_ids },
            );
        }
        id
    }

    /// Associates an utterance with a consistent form and its macro,
    /// replacing any earlier association. A macro's frequency is the number
    /// of utterances associated with it.
    pub fn associate(&mut self, utterance: usize, lf: String, macro_id: String) {
        if let Some(old) = self.associations.get(&utterance) {
            if let Some(e) = self.macros.get_mut(&old.macro_id) {
                e.frequency -= 1;
            }
        }
        if let Some(e) = self.macros.get_mut(&macro_id) {
            e.frequency += 1;
        }
        self.associations.insert(utterance, Association { lf, macro_id });
    }

    pub fn association(&self, utterance: usize) -> Option<&Association> {
        self.associations.get(&utterance)
    }

    pub fn associations(&self) -> &BTreeMap<usize, Association> {
        &self.associations
    }

    pub fn is_associated(&self, utterance: usize) -> bool {
        self.associations.contains_key(&utterance)
    }

    pub fn macro_for_root_rule(&self, rule_id: &str) -> Option<&str> {
        self.root_rules.get(rule_id).map(String::as_str)
    }

    pub fn get(&self, macro_id: &str) -> Option<&MacroEntry> {
        self.macros.get(macro_id)
    }

    pub fn macros(&self) -> impl Iterator<Item = &MacroEntry> {
        self.macros.values()
    }

    pub fn len(&self) -> usize {
        self.macros.len()
    }

    pub fn is_empty(&self) -> bool {
        self.macros.is_empty()
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    /// Every stored rule, ordered by id.
    pub fn all_rules(&self) -> Vec<Arc<Rule>> {
        self.rules.values().cloned().collect()
    }

    pub fn rules_of(&self, macro_id: &str) -> Vec<Arc<Rule>> {
        self.macros
            .get(macro_id)
            .map(|e| e.rule_ids.iter().map(|id| self.rules[id].clone()).collect())
            .unwrap_or_default()
    }

    /// Macros by frequency, most frequent first, ties by id.
    pub fn ranked(&self) -> Vec<&MacroEntry> {
        let mut v: Vec<&MacroEntry> = self.macros.values().collect();
        v.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.id.cmp(&b.id)));
        v
    }

    /// One macro per line: `frequency TAB template TAB serialization`.
    pub fn to_text(&self) -> String {
        let mut s = format!("{STORE_HEADER}\n");
        for e in self.ranked() {
            let _ = writeln!(s, "{}\t{}\t{}", e.frequency, e.template, e.id);
        }
        s
    }

    /// One association per line: `utterance TAB macro id TAB form`.
    pub fn associations_text(&self) -> String {
        let mut s = format!("{ASSOCIATIONS_HEADER}\n");
        for (i, a) in &self.associations {
            let _ = writeln!(s, "{i}\t{}\t{}", a.macro_id, a.lf);
        }
        s
    }

    /// Restores associations written by `associations_text`. Frequencies
    /// are taken from the macro file and left as they are.
    pub fn load_associations(&mut self, text: &str) -> Result<(), StoreError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == ASSOCIATIONS_HEADER => {}
            _ => return Err(StoreError::Header),
        }
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| StoreError::Line { line: i + 1, message };
            let mut fields = line.splitn(3, '\t');
            let (Some(utt), Some(macro_id), Some(lf)) = (fields.next(), fields.next(), fields.next()) else {
                return Err(err("expected three tab-separated fields".into()));
            };
            let utt: usize = utt.parse().map_err(|_| err(format!("bad utterance index `{utt}`")))?;
            if !self.macros.contains_key(macro_id) {
                return Err(err(format!("unknown macro `{macro_id}`")));
            }
            self.associations.insert(utt, Association { lf: lf.to_string(), macro_id: macro_id.to_string() });
        }
        Ok(())
    }

    /// Loads macros written by `to_text`. Associations are not part of this
    /// file.
    pub fn from_text(text: &str) -> Result<MacroStore, StoreError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == STORE_HEADER => {}
            _ => return Err(StoreError::Header),
        }
        let mut store = MacroStore::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| StoreError::Line { line: i + 1, message };
            let mut fields = line.splitn(3, '\t');
            let (Some(freq), Some(_template), Some(body)) = (fields.next(), fields.next(), fields.next()) else {
                return Err(err("expected three tab-separated fields".into()));
            };
            let freq: u64 = freq.parse().map_err(|_| err(format!("bad frequency `{freq}`")))?;
            let m = parse_macro(body).map_err(|e| err(e.to_string()))?;
            let id = store.insert(&m);
            if let Some(e) = store.macros.get_mut(&id) {
                e.frequency = freq;
            }
        }
        Ok(store)
    }
}
