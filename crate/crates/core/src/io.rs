//! Plain-text formats for plan corpora, observation records and grammars.
//!
//! Every writer starts with a `# format: phtn/1` line; readers accept the
//! header as optional and reject other versions. `#` lines are comments.
//!
//! Grammar text:
//!
//! ```text
//! # format: phtn/1
//! primitives: Buyticket Getin Getout
//! tasks: Travel A1 A2 A3 B2
//! Travel -> A1 B2 , 1.0
//! A1 -> Buyticket , 1.0
//! ```
//!
//! `tasks:` lists the top task first. Without it, tasks are the schema heads
//! in order of appearance; without `primitives:`, primitives are the
//! single-symbol bodies in order of appearance.
//!
//! Corpus text has one plan per line with an optional `weight:<float>` first
//! token. Record text has blank-line-separated blocks of one `chosen:` line
//! and any number of `alt:` lines.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;

use crate::grammar::{is_valid_token, Body, Grammar, Plan, Schema, Violation, WeightedPlan};
use crate::rescale::ObservationRecord;

pub const FORMAT_VERSION: u32 = 1;
pub const FORMAT_HEADER: &str = "# format: phtn/1";

/// A parse error with a 1-based location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub file: String,
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.file, self.line, self.column)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{location}: {message}")]
    Parse { location: Location, message: String },
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl IoError {
    pub fn location(&self) -> Option<&Location> {
        match self {
            IoError::Parse { location, .. } => Some(location),
            IoError::File { .. } => None,
        }
    }
}

struct Cursor<'a> {
    file: &'a str,
}

impl Cursor<'_> {
    fn err(&self, line: usize, column: usize, message: impl Into<String>) -> IoError {
        IoError::Parse { location: Location { file: self.file.to_string(), line, column }, message: message.into() }
    }
}

/// 1-based character column of `part`, a subslice of `line`.
fn column_of(line: &str, part: &str) -> usize {
    let offset = part.as_ptr() as usize - line.as_ptr() as usize;
    line[..offset].chars().count() + 1
}

/// Yields `(token, column)` for whitespace-separated tokens of `line`.
fn tokens(line: &str) -> impl Iterator<Item = (&str, usize)> {
    line.split_whitespace().map(move |t| (t, column_of(line, t)))
}

/// Handles comment lines; a format header with another version is an error.
fn is_comment(cur: &Cursor, lineno: usize, line: &str) -> Result<bool, IoError> {
    let trimmed = line.trim_start();
    if !trimmed.starts_with('#') {
        return Ok(false);
    }
    if let Some(rest) = trimmed[1..].trim_start().strip_prefix("format:") {
        let spec = rest.trim();
        if spec != format!("phtn/{FORMAT_VERSION}") {
            return Err(cur.err(lineno, column_of(line, trimmed), format!("unsupported format {spec:?}")));
        }
    }
    Ok(true)
}

fn plan_from_tokens(cur: &Cursor, lineno: usize, toks: &[(&str, usize)]) -> Result<Plan, IoError> {
    for &(t, col) in toks {
        if !is_valid_token(t) {
            return Err(cur.err(lineno, col, format!("invalid action token {t:?}")));
        }
    }
    Plan::new(toks.iter().map(|(t, _)| *t)).map_err(|_| cur.err(lineno, 1, "empty plan"))
}

fn read_file(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

pub fn write_file(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

/// A parsed plan corpus with the source line of every plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub source: String,
    pub plans: Vec<WeightedPlan>,
    pub lines: Vec<usize>,
}

pub fn read_corpus(text: &str, source: &str) -> Result<Corpus, IoError> {
    let cur = Cursor { file: source };
    let mut corpus = Corpus { source: source.to_string(), plans: Vec::new(), lines: Vec::new() };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || is_comment(&cur, lineno, line)? {
            continue;
        }
        let mut toks: Vec<(&str, usize)> = tokens(line).collect();
        let mut weight = 1.0;
        if let Some(w) = toks[0].0.strip_prefix("weight:") {
            let col = toks[0].1;
            weight = w.parse::<f64>().map_err(|_| cur.err(lineno, col, format!("malformed weight {w:?}")))?;
            if !(weight > 0.0 && weight.is_finite()) {
                return Err(cur.err(lineno, col, format!("weight must be positive, got {w}")));
            }
            toks.remove(0);
            if toks.is_empty() {
                return Err(cur.err(lineno, col, "weight without a plan"));
            }
        }
        let plan = plan_from_tokens(&cur, lineno, &toks)?;
        corpus.plans.push(WeightedPlan { plan, weight });
        corpus.lines.push(lineno);
    }
    Ok(corpus)
}

pub fn write_corpus(plans: &[WeightedPlan]) -> String {
    write_corpus_with_comments(plans, &[])
}

/// Like [`write_corpus`], with extra `# ` comment lines after the header.
pub fn write_corpus_with_comments(plans: &[WeightedPlan], comments: &[String]) -> String {
    let mut out = header(comments);
    for wp in plans {
        if wp.weight != 1.0 {
            let _ = write!(out, "weight:{:?} ", wp.weight);
        }
        let _ = writeln!(out, "{}", wp.plan);
    }
    out
}

fn header(comments: &[String]) -> String {
    let mut out = format!("{FORMAT_HEADER}\n");
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out
}

pub fn read_corpus_file(path: &Path) -> Result<Corpus, IoError> {
    read_corpus(&read_file(path)?, &path.display().to_string())
}

pub fn read_records(text: &str, source: &str) -> Result<Vec<ObservationRecord>, IoError> {
    let cur = Cursor { file: source };
    let mut records = Vec::new();
    // (first line of block, chosen, alternatives)
    let mut block: Option<(usize, Option<Plan>, Vec<Plan>)> = None;
    let finish = |block: Option<(usize, Option<Plan>, Vec<Plan>)>, records: &mut Vec<ObservationRecord>| {
        if let Some((start, chosen, alts)) = block {
            let chosen = chosen.ok_or_else(|| cur.err(start, 1, "record block has no `chosen:` line"))?;
            records.push(ObservationRecord::with_alternatives(chosen, alts));
        }
        Ok::<(), IoError>(())
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            finish(block.take(), &mut records)?;
            continue;
        }
        if is_comment(&cur, lineno, line)? {
            continue;
        }
        let toks: Vec<(&str, usize)> = tokens(line).collect();
        let (key, col) = toks[0];
        let b = block.get_or_insert_with(|| (lineno, None, Vec::new()));
        match key {
            "chosen:" => {
                if b.1.is_some() {
                    return Err(cur.err(lineno, col, "second `chosen:` line in one record"));
                }
                b.1 = Some(plan_from_tokens(&cur, lineno, &toks[1..])?);
            }
            "alt:" => b.2.push(plan_from_tokens(&cur, lineno, &toks[1..])?),
            _ => return Err(cur.err(lineno, col, format!("unknown record line {key:?}"))),
        }
    }
    finish(block, &mut records)?;
    Ok(records)
}

pub fn write_records(records: &[ObservationRecord]) -> String {
    write_records_with_comments(records, &[])
}

pub fn write_records_with_comments(records: &[ObservationRecord], comments: &[String]) -> String {
    let mut out = header(comments);
    for (i, r) in records.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "chosen: {}", r.chosen);
        for p in r.feasible.iter().filter(|p| **p != r.chosen) {
            let _ = writeln!(out, "alt: {p}");
        }
    }
    out
}

pub fn read_records_file(path: &Path) -> Result<Vec<ObservationRecord>, IoError> {
    read_records(&read_file(path)?, &path.display().to_string())
}

fn symbol_list(cur: &Cursor, lineno: usize, line: &str, rest: &str) -> Result<Vec<String>, IoError> {
    let mut out = Vec::new();
    for (t, _) in tokens(rest) {
        let col = column_of(line, t);
        if !is_valid_token(t) {
            return Err(cur.err(lineno, col, format!("invalid symbol {t:?}")));
        }
        if out.iter().any(|s| s == t) {
            return Err(cur.err(lineno, col, format!("symbol {t} listed twice")));
        }
        out.push(t.to_string());
    }
    Ok(out)
}

pub fn read_grammar(text: &str, source: &str) -> Result<Grammar, IoError> {
    let cur = Cursor { file: source };
    let mut primitives: Option<Vec<String>> = None;
    let mut tasks: Option<Vec<String>> = None;
    let mut schemas: Vec<Schema> = Vec::new();
    let mut schema_lines: Vec<usize> = Vec::new();
    let mut directive_lines: HashMap<&str, usize> = HashMap::new();
    let mut seen: HashMap<(String, Body), usize> = HashMap::new();

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() || is_comment(&cur, lineno, line)? {
            continue;
        }
        let Some(arrow) = line.find("->") else {
            let (key, col) = tokens(line).next().expect("non-blank line");
            let rest = &line[col - 1 + key.len()..];
            let slot = match key {
                "primitives:" => &mut primitives,
                "tasks:" => &mut tasks,
                _ if key.ends_with(':') => {
                    return Err(cur.err(lineno, col, format!("unknown directive {key:?}")));
                }
                _ => return Err(cur.err(lineno, col, "expected `Head -> Body , probability`")),
            };
            if slot.is_some() {
                let first = directive_lines[key];
                return Err(cur.err(lineno, col, format!("{key} already given on line {first}")));
            }
            *slot = Some(symbol_list(&cur, lineno, line, rest)?);
            directive_lines.insert(key, lineno);
            continue;
        };
        let lhs = &line[..arrow];
        let rhs = &line[arrow + 2..];
        let head: Vec<(&str, usize)> = tokens(lhs).collect();
        if head.len() != 1 {
            return Err(cur.err(lineno, 1, "schema needs exactly one head symbol"));
        }
        let (head, head_col) = head[0];
        if !is_valid_token(head) {
            return Err(cur.err(lineno, head_col, format!("invalid symbol {head:?}")));
        }
        let Some(comma) = rhs.rfind(',') else {
            let col = column_of(line, rhs) + rhs.trim_end().chars().count();
            return Err(cur.err(lineno, col, "missing `, probability`"));
        };
        let body_text = &rhs[..comma];
        let prob_text = rhs[comma + 1..].trim();
        let prob_col = if prob_text.is_empty() { column_of(line, &rhs[comma..]) + 1 } else { column_of(line, prob_text) };
        let prob: f64 = prob_text
            .parse()
            .map_err(|_| cur.err(lineno, prob_col, format!("malformed probability {prob_text:?}")))?;
        if !prob.is_finite() {
            return Err(cur.err(lineno, prob_col, format!("malformed probability {prob_text:?}")));
        }
        let body_toks: Vec<(&str, usize)> = tokens(body_text).map(|(t, _)| (t, column_of(line, t))).collect();
        for &(t, col) in &body_toks {
            if !is_valid_token(t) {
                return Err(cur.err(lineno, col, format!("invalid symbol {t:?}")));
            }
        }
        let body = match body_toks.as_slice() {
            [(a, _)] => Body::primitive(*a),
            [(x, _), (y, _)] => Body::pair(*x, *y),
            _ => {
                let col = column_of(line, rhs);
                return Err(cur.err(lineno, col, "body must be one primitive or two tasks"));
            }
        };
        if let Some(first) = seen.insert((head.to_string(), body.clone()), lineno) {
            return Err(cur.err(lineno, head_col, format!("duplicate schema, first given on line {first}")));
        }
        schemas.push(Schema::new(head, body, prob));
        schema_lines.push(lineno);
    }

    let tasks = tasks.unwrap_or_else(|| {
        let mut t: Vec<String> = Vec::new();
        for s in &schemas {
            if !t.contains(&s.head) {
                t.push(s.head.clone());
            }
        }
        t
    });
    let primitives = primitives.unwrap_or_else(|| {
        let mut p: Vec<String> = Vec::new();
        for s in &schemas {
            if let Body::Primitive(a) = &s.body {
                if !p.contains(a) && !tasks.contains(a) {
                    p.push(a.clone());
                }
            }
        }
        p
    });
    let grammar = Grammar::new(primitives, tasks, schemas);
    if let Some(v) = grammar.validate().into_iter().next() {
        let line = match &v {
            Violation::UnknownHead { schema, .. }
            | Violation::UndeclaredSymbol { schema, .. }
            | Violation::WrongKind { schema, .. }
            | Violation::ProbabilityOutOfRange { schema, .. }
            | Violation::DuplicateSchema { schema } => schema_lines[*schema],
            Violation::Distribution { task, .. } => grammar
                .schemas_of(task)
                .next()
                .map_or(1, |s| schema_lines[s]),
            Violation::InvalidToken { .. } | Violation::DuplicateSymbol { .. } | Violation::NoTasks => {
                directive_lines.get("tasks:").copied().unwrap_or(1)
            }
        };
        return Err(cur.err(line, 1, v.to_string()));
    }
    Ok(grammar)
}

pub fn write_grammar(grammar: &Grammar) -> String {
    write_grammar_with_comments(grammar, &[])
}

/// Canonical grammar text with extra `# ` comment lines after the header.
pub fn write_grammar_with_comments(grammar: &Grammar, comments: &[String]) -> String {
    let mut out = header(comments);
    let _ = writeln!(out, "primitives: {}", grammar.primitives.join(" "));
    let _ = writeln!(out, "tasks: {}", grammar.tasks.join(" "));
    for s in &grammar.schemas {
        let _ = writeln!(out, "{s}");
    }
    out
}

pub fn read_grammar_file(path: &Path) -> Result<Grammar, IoError> {
    read_grammar(&read_file(path)?, &path.display().to_string())
}
