//! Viterbi CYK parsing of plans, and a brute-force enumeration oracle.
//!
//! The chart is filled bottom-up over span lengths in log space. For each
//! span and task it keeps the best log-probability together with the winning
//! schema and split point. Equal scores keep the first candidate found, which
//! means the smallest split point wins, then the earliest schema in the
//! grammar's list.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::rc::Rc;

use crate::grammar::{Body, Grammar, Plan};

/// Longest plan [`enumerate_parses`] accepts.
pub const ENUMERATION_MAX_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum Expansion {
    Action(String),
    Split(Box<ParseNode>, Box<ParseNode>),
}

/// An internal vertex of a parse: `task` reduced by schema number `schema`
/// over the 1-based inclusive span `span`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseNode {
    pub task: String,
    pub schema: usize,
    pub span: (usize, usize),
    pub expansion: Expansion,
}

impl ParseNode {
    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a ParseNode)) {
        f(self);
        if let Expansion::Split(l, r) = &self.expansion {
            l.visit(f);
            r.visit(f);
        }
    }

    fn leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.expansion {
            Expansion::Action(a) => out.push(a),
            Expansion::Split(l, r) => {
                l.leaves(out);
                r.leaves(out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseTree {
    pub root: ParseNode,
    pub log_prob: f64,
}

impl ParseTree {
    pub fn probability(&self) -> f64 {
        self.log_prob.exp()
    }

    /// Primitive actions in left-to-right order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.root.leaves(&mut out);
        out
    }

    /// Schema indices of all internal vertices, preorder.
    pub fn schemas_used(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.root.visit(&mut |n| out.push(n.schema));
        out
    }

    pub fn nodes(&self) -> Vec<&ParseNode> {
        let mut out = Vec::new();
        self.root.visit(&mut |n| out.push(n));
        out
    }

    /// Checks that every vertex matches its schema and returns the summed
    /// log-probability under `grammar`, or `None` if the tree is malformed.
    pub fn check(&self, grammar: &Grammar) -> Option<f64> {
        fn go(n: &ParseNode, g: &Grammar) -> Option<f64> {
            let s = g.schemas.get(n.schema)?;
            if s.head != n.task {
                return None;
            }
            match (&s.body, &n.expansion) {
                (Body::Primitive(a), Expansion::Action(b)) if a == b && n.span.0 == n.span.1 => {
                    Some(s.prob.ln())
                }
                (Body::Pair(x, y), Expansion::Split(l, r))
                    if *x == l.task
                        && *y == r.task
                        && l.span.0 == n.span.0
                        && r.span.1 == n.span.1
                        && l.span.1 + 1 == r.span.0 =>
                {
                    Some(s.prob.ln() + go(l, g)? + go(r, g)?)
                }
                _ => None,
            }
        }
        go(&self.root, grammar)
    }

    /// Indented text, one vertex per line: `task schema-index i-j`, with the
    /// action appended on vertices that reduce to a primitive.
    pub fn to_text(&self) -> String {
        fn go(n: &ParseNode, depth: usize, out: &mut String) {
            let _ = write!(out, "{:indent$}{} {} {}-{}", "", n.task, n.schema, n.span.0, n.span.1, indent = depth * 2);
            match &n.expansion {
                Expansion::Action(a) => {
                    let _ = writeln!(out, " {a}");
                }
                Expansion::Split(l, r) => {
                    out.push('\n');
                    go(l, depth + 1, out);
                    go(r, depth + 1, out);
                }
            }
        }
        let mut out = String::new();
        go(&self.root, 0, &mut out);
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct BinaryRule {
    head: usize,
    left: usize,
    right: usize,
    log_prob: f64,
    schema: usize,
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Cell {
    score: f64,
    schema: u32,
    split: u32,
}

const EMPTY: Cell = Cell { score: f64::NEG_INFINITY, schema: NONE, split: 0 };

/// A grammar compiled for repeated Viterbi parsing.
#[derive(Debug, Clone)]
pub struct Parser<'g> {
    grammar: &'g Grammar,
    task_index: HashMap<&'g str, usize>,
    lexical: HashMap<&'g str, Vec<(usize, f64, usize)>>,
    binary: Vec<BinaryRule>,
}

struct Chart {
    n: usize,
    tasks: usize,
    cells: Vec<Cell>,
}

impl Chart {
    #[inline]
    fn idx(&self, len: usize, start: usize, task: usize) -> usize {
        ((len - 1) * self.n + start) * self.tasks + task
    }

    #[inline]
    fn get(&self, len: usize, start: usize, task: usize) -> Cell {
        self.cells[self.idx(len, start, task)]
    }
}

impl<'g> Parser<'g> {
    pub fn new(grammar: &'g Grammar) -> Self {
        let mut task_index: HashMap<&str, usize> = HashMap::new();
        let intern = |name: &'g str, idx: &mut HashMap<&'g str, usize>| -> usize {
            let next = idx.len();
            *idx.entry(name).or_insert(next)
        };
        for t in &grammar.tasks {
            intern(t, &mut task_index);
        }
        let mut lexical: HashMap<&str, Vec<(usize, f64, usize)>> = HashMap::new();
        let mut binary = Vec::new();
        for (i, s) in grammar.schemas.iter().enumerate() {
            let head = intern(&s.head, &mut task_index);
            // zero-probability schemas can never be part of a parse
            if s.prob.is_nan() || s.prob <= 0.0 {
                continue;
            }
            match &s.body {
                Body::Primitive(a) => lexical.entry(a.as_str()).or_default().push((head, s.prob.ln(), i)),
                Body::Pair(x, y) => {
                    let left = intern(x, &mut task_index);
                    let right = intern(y, &mut task_index);
                    binary.push(BinaryRule { head, left, right, log_prob: s.prob.ln(), schema: i });
                }
            }
        }
        Parser { grammar, task_index, lexical, binary }
    }

    pub fn grammar(&self) -> &'g Grammar {
        self.grammar
    }

    fn fill(&self, actions: &[String]) -> Option<Chart> {
        let n = actions.len();
        let tasks = self.task_index.len();
        if n == 0 || tasks == 0 {
            return None;
        }
        let mut chart = Chart { n, tasks, cells: vec![EMPTY; n * n * tasks] };
        for (i, a) in actions.iter().enumerate() {
            // unknown action: no lexical entry, so the plan is unparsable
            let entries = self.lexical.get(a.as_str())?;
            for &(head, lp, schema) in entries {
                let at = chart.idx(1, i, head);
                if lp > chart.cells[at].score {
                    chart.cells[at] = Cell { score: lp, schema: schema as u32, split: 0 };
                }
            }
        }
        for len in 2..=n {
            for start in 0..=(n - len) {
                for k in 1..len {
                    let lbase = chart.idx(k, start, 0);
                    let rbase = chart.idx(len - k, start + k, 0);
                    for rule in &self.binary {
                        let l = chart.cells[lbase + rule.left].score;
                        if l == f64::NEG_INFINITY {
                            continue;
                        }
                        let r = chart.cells[rbase + rule.right].score;
                        if r == f64::NEG_INFINITY {
                            continue;
                        }
                        let cand = rule.log_prob + l + r;
                        let at = chart.idx(len, start, rule.head);
                        if cand > chart.cells[at].score {
                            chart.cells[at] = Cell { score: cand, schema: rule.schema as u32, split: k as u32 };
                        }
                    }
                }
            }
        }
        Some(chart)
    }

    fn build(&self, chart: &Chart, len: usize, start: usize, task: usize, actions: &[String]) -> ParseNode {
        let cell = chart.get(len, start, task);
        let schema = cell.schema as usize;
        let s = &self.grammar.schemas[schema];
        let expansion = if len == 1 {
            Expansion::Action(actions[start].clone())
        } else {
            let k = cell.split as usize;
            let l = self.task_index[s.body_left()];
            let r = self.task_index[s.body_right()];
            Expansion::Split(
                Box::new(self.build(chart, k, start, l, actions)),
                Box::new(self.build(chart, len - k, start + k, r, actions)),
            )
        };
        ParseNode { task: s.head.clone(), schema, span: (start + 1, start + len), expansion }
    }

    fn collect(&self, chart: &Chart, len: usize, start: usize, task: usize, out: &mut Vec<usize>) {
        let cell = chart.get(len, start, task);
        out.push(cell.schema as usize);
        if len > 1 {
            let k = cell.split as usize;
            let rule = &self.grammar.schemas[cell.schema as usize];
            let l = self.task_index[rule.body_left()];
            let r = self.task_index[rule.body_right()];
            self.collect(chart, k, start, l, out);
            self.collect(chart, len - k, start + k, r, out);
        }
    }

    /// Most probable parse rooted at the top task.
    pub fn parse(&self, plan: &Plan) -> Option<ParseTree> {
        self.parse_rooted(plan, self.grammar.top()?)
    }

    /// Most probable parse rooted at `task`.
    pub fn parse_rooted(&self, plan: &Plan, task: &str) -> Option<ParseTree> {
        let root = *self.task_index.get(task)?;
        let chart = self.fill(plan.actions())?;
        let cell = chart.get(plan.len(), 0, root);
        if cell.schema == NONE {
            return None;
        }
        let root = self.build(&chart, plan.len(), 0, root, plan.actions());
        Some(ParseTree { root, log_prob: cell.score })
    }

    pub fn log_likelihood(&self, plan: &Plan) -> Option<f64> {
        let root = *self.task_index.get(self.grammar.top()?)?;
        let chart = self.fill(plan.actions())?;
        let cell = chart.get(plan.len(), 0, root);
        (cell.schema != NONE).then_some(cell.score)
    }

    /// Log-probability and the schema indices of the best parse, without
    /// materializing the tree. Used by the EM E-step.
    pub fn best_schemas(&self, plan: &Plan) -> Option<(f64, Vec<usize>)> {
        let root = *self.task_index.get(self.grammar.top()?)?;
        let chart = self.fill(plan.actions())?;
        let cell = chart.get(plan.len(), 0, root);
        if cell.schema == NONE {
            return None;
        }
        let mut out = Vec::with_capacity(2 * plan.len());
        self.collect(&chart, plan.len(), 0, root, &mut out);
        Some((cell.score, out))
    }
}

impl crate::grammar::Schema {
    fn body_left(&self) -> &str {
        match &self.body {
            Body::Pair(x, _) => x,
            Body::Primitive(a) => a,
        }
    }

    fn body_right(&self) -> &str {
        match &self.body {
            Body::Pair(_, y) => y,
            Body::Primitive(a) => a,
        }
    }
}

/// Most probable parse of `plan` rooted at the grammar's top task, or `None`
/// when no parse with positive probability exists.
pub fn viterbi_parse(grammar: &Grammar, plan: &Plan) -> Option<ParseTree> {
    Parser::new(grammar).parse(plan)
}

/// Log-probability of the most probable parse.
pub fn plan_log_likelihood(grammar: &Grammar, plan: &Plan) -> Option<f64> {
    Parser::new(grammar).log_likelihood(plan)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnumerationError {
    #[error("plan of length {0} is longer than the enumeration limit {ENUMERATION_MAX_LEN}")]
    TooLong(usize),
    #[error("plan has more than {0} parses")]
    TooManyParses(usize),
}

/// All parses of `plan` rooted at the top task with their exact
/// probabilities (products of schema probabilities, computed in linear
/// space). Exponential; meant as a test oracle.
pub fn enumerate_parses(grammar: &Grammar, plan: &Plan, cap: usize) -> Result<Vec<(ParseTree, f64)>, EnumerationError> {
    let n = plan.len();
    if n > ENUMERATION_MAX_LEN {
        return Err(EnumerationError::TooLong(n));
    }
    let Some(top) = grammar.top() else { return Ok(Vec::new()) };
    let actions = plan.actions();
    let schemas: Vec<(usize, &crate::grammar::Schema)> =
        grammar.schemas.iter().enumerate().filter(|(_, s)| s.prob > 0.0).collect();

    // Parse counts per (task, start, len), used to bail out before building
    // more than `cap` trees and to skip combinations with no parses.
    let mut count: HashMap<(&str, usize, usize), f64> = HashMap::new();
    for len in 1..=n {
        for start in 0..=(n - len) {
            for &(_, s) in &schemas {
                let c = match &s.body {
                    Body::Primitive(a) if len == 1 && *a == actions[start] => 1.0,
                    Body::Pair(x, y) if len > 1 => (1..len)
                        .map(|k| {
                            count.get(&(x.as_str(), start, k)).copied().unwrap_or(0.0)
                                * count.get(&(y.as_str(), start + k, len - k)).copied().unwrap_or(0.0)
                        })
                        .sum(),
                    _ => 0.0,
                };
                if c > 0.0 {
                    *count.entry((s.head.as_str(), start, len)).or_insert(0.0) += c;
                }
            }
        }
    }
    let total = count.get(&(top, 0, n)).copied().unwrap_or(0.0);
    if total > cap as f64 {
        return Err(EnumerationError::TooManyParses(cap));
    }

    type Memo<'a> = HashMap<(&'a str, usize, usize), Rc<Vec<(ParseNode, f64)>>>;
    fn go<'a>(
        task: &'a str,
        start: usize,
        len: usize,
        actions: &[String],
        schemas: &[(usize, &'a crate::grammar::Schema)],
        count: &HashMap<(&'a str, usize, usize), f64>,
        memo: &mut Memo<'a>,
    ) -> Rc<Vec<(ParseNode, f64)>> {
        if let Some(v) = memo.get(&(task, start, len)) {
            return v.clone();
        }
        let has = |t: &str, s: usize, l: usize| count.get(&(t, s, l)).copied().unwrap_or(0.0) > 0.0;
        let mut out = Vec::new();
        for &(idx, s) in schemas.iter().filter(|(_, s)| s.head == task) {
            match &s.body {
                Body::Primitive(a) if len == 1 && *a == actions[start] => out.push((
                    ParseNode {
                        task: task.to_string(),
                        schema: idx,
                        span: (start + 1, start + 1),
                        expansion: Expansion::Action(a.clone()),
                    },
                    s.prob,
                )),
                Body::Pair(x, y) if len > 1 => {
                    for k in 1..len {
                        if !has(x, start, k) || !has(y, start + k, len - k) {
                            continue;
                        }
                        let lefts = go(x, start, k, actions, schemas, count, memo);
                        let rights = go(y, start + k, len - k, actions, schemas, count, memo);
                        for (l, pl) in lefts.iter() {
                            for (r, pr) in rights.iter() {
                                out.push((
                                    ParseNode {
                                        task: task.to_string(),
                                        schema: idx,
                                        span: (start + 1, start + len),
                                        expansion: Expansion::Split(Box::new(l.clone()), Box::new(r.clone())),
                                    },
                                    s.prob * pl * pr,
                                ));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        let out = Rc::new(out);
        memo.insert((task, start, len), out.clone());
        out
    }

    if total == 0.0 {
        return Ok(Vec::new());
    }
    let mut memo = Memo::new();
    let all = go(top, 0, n, actions, &schemas, &count, &mut memo);
    Ok(all
        .iter()
        .map(|(node, p)| (ParseTree { root: node.clone(), log_prob: p.ln() }, *p))
        .collect())
}
