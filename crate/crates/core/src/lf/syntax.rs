//! Canonical text form of logical forms.
//!
//! The printer and parser are inverses on closed forms. Lambda variables
//! print as de Bruijn indices (`$0` is the innermost binder), so
//! alpha-equivalent forms share one string.

use std::sync::Arc;

use thiserror::Error;

use super::build::*;
use super::{AggregateKind, CompareOp, LogicalForm, SuperlativeKind, VarId};
use crate::kb::{format_number, Date, Entity, Relation, Value};

use LogicalForm as L;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at byte {pos}: {message}")]
pub struct SyntaxError {
    pub pos: usize,
    pub message: String,
}

pub fn canonical_string(z: &LogicalForm) -> String {
    let mut out = String::new();
    Printer { binders: Vec::new(), slot: &mut |i| format!("?{i}") }.write(z, &mut out);
    out
}

/// Prints `z` with every `Hole(i)` rendered by `slot(i)`, called in print
/// order.
pub fn render_with_slots(z: &LogicalForm, slot: &mut dyn FnMut(usize) -> String) -> String {
    let mut out = String::new();
    Printer { binders: Vec::new(), slot }.write(z, &mut out);
    out
}

struct Printer<'s> {
    binders: Vec<VarId>,
    slot: &'s mut dyn FnMut(usize) -> String,
}

impl Printer<'_> {
    fn call(&mut self, name: &str, args: &[&LogicalForm], out: &mut String) {
        out.push_str(name);
        out.push('(');
        for (i, a) in args.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            self.write(a, out);
        }
        out.push(')');
    }

    fn write(&mut self, z: &LogicalForm, out: &mut String) {
        match z {
            L::Entity(v) => write_value(v, out),
            L::Relation(r) => out.push_str(match r {
                Relation::Column(c) => c,
                Relation::Next => "Next",
                Relation::Index => "Index",
                Relation::NumProp => "Num",
                Relation::DateProp => "Date",
            }),
            L::AllRows => out.push_str("Type.Row"),
            L::Join(b, u) => {
                self.write(b, out);
                out.push('.');
                self.write(u, out);
            }
            L::Reverse(b) => {
                out.push_str("R[");
                self.write(b, out);
                out.push(']');
            }
            L::Intersect(a, b) => self.call("and", &[a, b], out),
            L::Union(a, b) => self.call("or", &[a, b], out),
            L::Count(a) => self.call("count", &[a], out),
            L::Aggregate(k, a) => self.call(k.name(), &[a], out),
            L::Superlative(k, s, b) => self.call(k.name(), &[s, b], out),
            L::Compare(op, a) => self.call(op.symbol(), &[a], out),
            L::Sub(a, b) => self.call("sub", &[a, b], out),
            L::Lambda(v, body) => {
                self.binders.push(*v);
                self.call("lambda", &[body], out);
                self.binders.pop();
            }
            L::Var(v) => match self.binders.iter().rev().position(|b| b == v) {
                Some(k) => out.push_str(&format!("${k}")),
                None => out.push_str(&format!("$free{v}")),
            },
            L::Hole(i) => out.push_str(&(self.slot)(*i)),
        }
    }
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Row(i) => out.push_str(&format!("%{i}")),
        Value::Cell(e) => {
            out.push('@');
            out.push_str(&e.id);
        }
        Value::Number(n) => out.push_str(&format_number(n.0)),
        Value::Date(d) => out.push_str(&d.to_string()),
        Value::Str(s) => {
            out.push('"');
            for c in s.chars() {
                if c == '"' || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push('"');
        }
    }
}

pub fn parse_lf(text: &str) -> Result<Arc<LogicalForm>, SyntaxError> {
    let mut p = Parser { text, pos: 0, depth: 0 };
    let z = p.expr()?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.error("trailing input"));
    }
    Ok(z)
}

struct Parser<'t> {
    text: &'t str,
    pos: usize,
    /// Number of enclosing lambdas; a lambda at depth `d` binds `VarId` `d`.
    depth: u32,
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError { pos: self.pos, message: message.into() }
    }

    fn rest(&self) -> &str {
        &self.text[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), SyntaxError> {
        if self.eat(s) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{s}`")))
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &str {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if !f(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.text[start..self.pos]
    }

    fn expr(&mut self) -> Result<Arc<LogicalForm>, SyntaxError> {
        let head = self.primary()?;
        if self.eat(".") {
            let tail = self.expr()?;
            Ok(join(head, tail))
        } else {
            Ok(head)
        }
    }

    fn args(&mut self, n: usize) -> Result<Vec<Arc<LogicalForm>>, SyntaxError> {
        self.expect("(")?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                self.expect(",")?;
            }
            out.push(self.expr()?);
        }
        self.expect(")")?;
        Ok(out)
    }

    fn index(&mut self) -> Result<usize, SyntaxError> {
        let digits = self.take_while(|c| c.is_ascii_digit());
        digits.parse().map_err(|_| SyntaxError { pos: self.pos, message: "expected an index".into() })
    }

    fn primary(&mut self) -> Result<Arc<LogicalForm>, SyntaxError> {
        self.skip_ws();
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Err(self.error("unexpected end of input"));
        };
        match c {
            '@' => {
                self.pos += 1;
                let id = self.take_while(is_ident_char);
                if id.is_empty() {
                    return Err(self.error("expected a cell id"));
                }
                Ok(entity(Value::Cell(Entity::from_id(id))))
            }
            '%' => {
                self.pos += 1;
                let i = self.index()?;
                Ok(entity(Value::Row(i as u32)))
            }
            '?' => {
                self.pos += 1;
                Ok(hole(self.index()?))
            }
            '$' => {
                self.pos += 1;
                let k = self.index()? as u32;
                if k >= self.depth {
                    return Err(SyntaxError { pos: start, message: "variable is not bound".into() });
                }
                Ok(var(self.depth - 1 - k))
            }
            '"' => {
                self.pos += 1;
                let mut s = String::new();
                loop {
                    match self.peek() {
                        None => return Err(self.error("unterminated string")),
                        Some('"') => {
                            self.pos += 1;
                            break;
                        }
                        Some('\\') => {
                            self.pos += 1;
                            let c = self.peek().ok_or_else(|| self.error("unterminated string"))?;
                            s.push(c);
                            self.pos += c.len_utf8();
                        }
                        Some(c) => {
                            s.push(c);
                            self.pos += c.len_utf8();
                        }
                    }
                }
                Ok(entity(Value::string(&s)))
            }
            '>' | '<' => {
                let op = if self.eat(">=") {
                    CompareOp::Ge
                } else if self.eat("<=") {
                    CompareOp::Le
                } else if self.eat(">") {
                    CompareOp::Gt
                } else {
                    self.pos += 1;
                    CompareOp::Lt
                };
                let [a] = self.fixed::<1>()?;
                Ok(compare(op, a))
            }
            c if c == '-' || c.is_ascii_digit() => {
                let text = self.take_while(|c| c == '-' || c == '.' || c.is_ascii_digit());
                let n: f64 = text.parse().map_err(|_| SyntaxError { pos: start, message: "bad number".into() })?;
                Ok(entity(Value::number(n)))
            }
            c if is_ident_char(c) => {
                let name = self.take_while(is_ident_char).to_string();
                self.skip_ws();
                if name == "R" && self.peek() == Some('[') {
                    self.pos += 1;
                    let b = self.expr()?;
                    self.expect("]")?;
                    return Ok(reverse(b));
                }
                if name == "Type" && self.rest().starts_with(".Row") {
                    let after = self.rest()[4..].chars().next();
                    if !after.is_some_and(is_ident_char) {
                        self.pos += 4;
                        return Ok(all_rows());
                    }
                }
                if self.peek() == Some('(') {
                    return self.call(&name, start);
                }
                Ok(match name.as_str() {
                    "Next" => rel(Relation::Next),
                    "Index" => rel(Relation::Index),
                    "Num" => rel(Relation::NumProp),
                    "Date" => rel(Relation::DateProp),
                    col => column(col),
                })
            }
            _ => Err(self.error(format!("unexpected `{c}`"))),
        }
    }

    fn fixed<const N: usize>(&mut self) -> Result<[Arc<LogicalForm>; N], SyntaxError> {
        let v = self.args(N)?;
        Ok(v.try_into().unwrap_or_else(|_| unreachable!()))
    }

    fn call(&mut self, name: &str, start: usize) -> Result<Arc<LogicalForm>, SyntaxError> {
        let aggregate_kind = AggregateKind::ALL.into_iter().find(|k| k.name() == name);
        Ok(match name {
            "and" => {
                let [a, b] = self.fixed()?;
                and(a, b)
            }
            "or" => {
                let [a, b] = self.fixed()?;
                or(a, b)
            }
            "sub" => {
                let [a, b] = self.fixed()?;
                sub(a, b)
            }
            "count" => {
                let [a] = self.fixed()?;
                count(a)
            }
            "argmax" | "argmin" => {
                let kind = if name == "argmax" { SuperlativeKind::Argmax } else { SuperlativeKind::Argmin };
                let [s, b] = self.fixed()?;
                superlative(kind, s, b)
            }
            "lambda" => {
                let v = self.depth;
                self.depth += 1;
                let body = self.fixed::<1>();
                self.depth -= 1;
                let [body] = body?;
                lambda(v, body)
            }
            "date" => {
                self.expect("(")?;
                let mut parts = [None; 3];
                for (i, part) in parts.iter_mut().enumerate() {
                    if i > 0 {
                        self.expect(",")?;
                    }
                    self.skip_ws();
                    if !self.eat("x") {
                        let digits = self.take_while(|c| c == '-' || c.is_ascii_digit());
                        *part = Some(digits.parse::<i64>().map_err(|_| self.error("bad date component"))?);
                    }
                }
                self.expect(")")?;
                let month = parts[1].map(|m| m as u32);
                let day = parts[2].map(|d| d as u32);
                let d = Date::new(parts[0].map(|y| y as i32), month, day)
                    .ok_or_else(|| SyntaxError { pos: start, message: "empty date".into() })?;
                entity(Value::Date(d))
            }
            _ => match aggregate_kind {
                Some(k) => {
                    let [a] = self.fixed()?;
                    aggregate(k, a)
                }
                None => return Err(SyntaxError { pos: start, message: format!("unknown function `{name}`") }),
            },
        })
    }
}
