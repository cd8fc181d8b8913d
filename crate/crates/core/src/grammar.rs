//! The pHTN data model in Chomsky normal form.
//!
//! A [`Grammar`] holds a primitive alphabet, an ordered list of tasks (the
//! first one is the top-level task) and a list of probabilistic reduction
//! schemas. Each schema reduces a task either to one primitive or to an
//! ordered pair of tasks.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::Rng as _;

use crate::rng::{derive_seed, rng_from_seed};

/// Per-task probability mass must sum to one within this tolerance.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default bound on derivation depth when sampling.
pub const DEFAULT_MAX_DEPTH: usize = 64;

/// Upper bound on the number of primitives a single sampled derivation may
/// emit. Exceeding it is reported the same way as exceeding the depth bound.
pub const MAX_SAMPLED_LEN: usize = 1 << 16;

const MAX_RESAMPLE_ATTEMPTS: u64 = 1000;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Body {
    Primitive(String),
    Pair(String, String),
}

impl Body {
    pub fn pair(left: impl Into<String>, right: impl Into<String>) -> Self {
        Body::Pair(left.into(), right.into())
    }

    pub fn primitive(action: impl Into<String>) -> Self {
        Body::Primitive(action.into())
    }
}

impl fmt::Display for Body {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Body::Primitive(a) => write!(f, "{a}"),
            Body::Pair(x, y) => write!(f, "{x} {y}"),
        }
    }
}

/// A reduction schema `head -> body` with probability `prob`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub head: String,
    pub body: Body,
    pub prob: f64,
}

impl Schema {
    pub fn new(head: impl Into<String>, body: Body, prob: f64) -> Self {
        Schema { head: head.into(), body, prob }
    }

    pub fn is_recursive(&self) -> bool {
        matches!(&self.body, Body::Pair(x, y) if *x == self.head || *y == self.head)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {} , {:?}", self.head, self.body, self.prob)
    }
}

/// A non-empty sequence of primitive action symbols.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Plan(Vec<String>);

impl Plan {
    pub fn new<I, S>(actions: I) -> Result<Self, GrammarError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let actions: Vec<String> = actions.into_iter().map(Into::into).collect();
        if actions.is_empty() {
            return Err(GrammarError::EmptyPlan);
        }
        Ok(Plan(actions))
    }

    /// Split on whitespace.
    pub fn parse(text: &str) -> Result<Self, GrammarError> {
        Plan::new(text.split_whitespace())
    }

    pub fn actions(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedPlan {
    pub plan: Plan,
    pub weight: f64,
}

impl WeightedPlan {
    pub fn new(plan: Plan, weight: f64) -> Result<Self, GrammarError> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(GrammarError::BadWeight(weight));
        }
        Ok(WeightedPlan { plan, weight })
    }

    pub fn unit(plan: Plan) -> Self {
        WeightedPlan { plan, weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GrammarError {
    #[error("plan must contain at least one action")]
    EmptyPlan,
    #[error("weight must be positive and finite, got {0}")]
    BadWeight(f64),
    #[error("task {0} has zero total probability mass")]
    ZeroMass(String),
    #[error("invalid grammar: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("grammar is recursive; its language is infinite")]
    Recursive,
    #[error("grammar derives more than {0} plans")]
    TooManyPlans(usize),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One broken grammar invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    InvalidToken { symbol: String },
    DuplicateSymbol { symbol: String },
    NoTasks,
    UnknownHead { schema: usize, head: String },
    UndeclaredSymbol { schema: usize, symbol: String },
    WrongKind { schema: usize, symbol: String, expected: &'static str },
    ProbabilityOutOfRange { schema: usize, prob: f64 },
    DuplicateSchema { schema: usize },
    Distribution { task: String, total: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidToken { symbol } => write!(f, "invalid symbol token {symbol:?}"),
            Violation::DuplicateSymbol { symbol } => write!(f, "symbol {symbol} declared twice"),
            Violation::NoTasks => write!(f, "grammar declares no tasks"),
            Violation::UnknownHead { schema, head } => {
                write!(f, "schema #{schema}: head {head} is not a declared task")
            }
            Violation::UndeclaredSymbol { schema, symbol } => {
                write!(f, "schema #{schema}: symbol {symbol} is not declared")
            }
            Violation::WrongKind { schema, symbol, expected } => {
                write!(f, "schema #{schema}: symbol {symbol} must be a {expected}")
            }
            Violation::ProbabilityOutOfRange { schema, prob } => {
                write!(f, "schema #{schema}: probability {prob} outside [0, 1]")
            }
            Violation::DuplicateSchema { schema } => {
                write!(f, "schema #{schema} duplicates an earlier (head, body)")
            }
            Violation::Distribution { task, total } => {
                write!(f, "task {task}: schema probabilities sum to {total}, not 1")
            }
        }
    }
}

/// True when `token` can be used as a symbol name.
pub fn is_valid_token(token: &str) -> bool {
    !token.is_empty()
        && !token.contains("->")
        && token.chars().all(|c| !c.is_whitespace() && !c.is_control() && c != ',')
}

#[derive(Clone, Debug)]
pub struct Grammar {
    pub primitives: Vec<String>,
    /// Ordered; the first entry is the top-level task.
    pub tasks: Vec<String>,
    pub schemas: Vec<Schema>,
}

impl Grammar {
    pub fn new(primitives: Vec<String>, tasks: Vec<String>, schemas: Vec<Schema>) -> Self {
        Grammar { primitives, tasks, schemas }
    }

    pub fn top(&self) -> Option<&str> {
        self.tasks.first().map(String::as_str)
    }

    pub fn is_task(&self, name: &str) -> bool {
        self.tasks.iter().any(|t| t == name)
    }

    pub fn is_primitive(&self, name: &str) -> bool {
        self.primitives.iter().any(|p| p == name)
    }

    /// Indices of the schemas headed by `task`, in list order.
    pub fn schemas_of<'a>(&'a self, task: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.schemas.iter().enumerate().filter(move |(_, s)| s.head == task).map(|(i, _)| i)
    }

    pub fn is_recursive(&self) -> bool {
        has_cycle(self)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(self)
    }

    pub fn normalize(&self) -> Result<Grammar, GrammarError> {
        normalize(self)
    }
}

/// Equality ignores the order of primitives, schemas and all tasks but the top.
impl PartialEq for Grammar {
    fn eq(&self, other: &Self) -> bool {
        fn sorted<T: Clone + Ord>(v: &[T]) -> Vec<T> {
            let mut v = v.to_vec();
            v.sort();
            v
        }
        fn schema_key(s: &Schema) -> (String, Body, u64) {
            (s.head.clone(), s.body.clone(), s.prob.to_bits())
        }
        self.top() == other.top()
            && sorted(&self.tasks) == sorted(&other.tasks)
            && sorted(&self.primitives) == sorted(&other.primitives)
            && {
                let mut a: Vec<_> = self.schemas.iter().map(schema_key).collect();
                let mut b: Vec<_> = other.schemas.iter().map(schema_key).collect();
                a.sort();
                b.sort();
                a == b
            }
    }
}

pub fn validate(grammar: &Grammar) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut kinds: HashMap<&str, &'static str> = HashMap::new();
    for (name, kind) in grammar
        .primitives
        .iter()
        .map(|p| (p, "primitive"))
        .chain(grammar.tasks.iter().map(|t| (t, "task")))
    {
        if !is_valid_token(name) {
            out.push(Violation::InvalidToken { symbol: name.clone() });
        }
        if kinds.insert(name.as_str(), kind).is_some() {
            out.push(Violation::DuplicateSymbol { symbol: name.clone() });
        }
    }
    if grammar.tasks.is_empty() {
        out.push(Violation::NoTasks);
    }

    let mut seen: HashSet<(&str, &Body)> = HashSet::new();
    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    let check = |schema: usize, symbol: &str, expected: &'static str, out: &mut Vec<Violation>| {
        match kinds.get(symbol) {
            None => out.push(Violation::UndeclaredSymbol { schema, symbol: symbol.to_string() }),
            Some(k) if *k != expected => {
                out.push(Violation::WrongKind { schema, symbol: symbol.to_string(), expected })
            }
            _ => {}
        }
    };
    for (i, s) in grammar.schemas.iter().enumerate() {
        if kinds.get(s.head.as_str()) != Some(&"task") {
            out.push(Violation::UnknownHead { schema: i, head: s.head.clone() });
        }
        match &s.body {
            Body::Primitive(a) => check(i, a, "primitive", &mut out),
            Body::Pair(x, y) => {
                check(i, x, "task", &mut out);
                check(i, y, "task", &mut out);
            }
        }
        if !(0.0..=1.0).contains(&s.prob) {
            out.push(Violation::ProbabilityOutOfRange { schema: i, prob: s.prob });
        }
        if !seen.insert((s.head.as_str(), &s.body)) {
            out.push(Violation::DuplicateSchema { schema: i });
        }
        *totals.entry(s.head.as_str()).or_insert(0.0) += s.prob;
    }
    // Report distributions in task declaration order.
    for task in &grammar.tasks {
        if let Some(&total) = totals.get(task.as_str()) {
            if (total - 1.0).abs() > SUM_TOLERANCE || total.is_nan() {
                out.push(Violation::Distribution { task: task.clone(), total });
            }
        }
    }
    out
}

/// Divide every schema probability by its head's total mass.
pub fn normalize(grammar: &Grammar) -> Result<Grammar, GrammarError> {
    let mut totals: HashMap<&str, f64> = HashMap::new();
    for s in &grammar.schemas {
        *totals.entry(s.head.as_str()).or_insert(0.0) += s.prob;
    }
    let mut heads: Vec<&str> = Vec::new();
    for s in &grammar.schemas {
        if !heads.contains(&s.head.as_str()) {
            heads.push(s.head.as_str());
        }
    }
    for h in heads {
        if totals[h] <= 0.0 || !totals[h].is_finite() {
            return Err(GrammarError::ZeroMass(h.to_string()));
        }
    }
    let schemas = grammar
        .schemas
        .iter()
        .map(|s| Schema { prob: s.prob / totals[s.head.as_str()], ..s.clone() })
        .collect();
    Ok(Grammar { schemas, ..grammar.clone() })
}

fn has_cycle(grammar: &Grammar) -> bool {
    let mut edges: HashMap<&str, Vec<&str>> = HashMap::new();
    for s in &grammar.schemas {
        if let Body::Pair(x, y) = &s.body {
            edges.entry(s.head.as_str()).or_default().extend([x.as_str(), y.as_str()]);
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: HashMap<&str, u8> = HashMap::new();
    fn visit<'a>(n: &'a str, edges: &HashMap<&'a str, Vec<&'a str>>, state: &mut HashMap<&'a str, u8>) -> bool {
        match state.get(n) {
            Some(1) => return true,
            Some(2) => return false,
            _ => {}
        }
        state.insert(n, 1);
        if let Some(next) = edges.get(n) {
            for &m in next {
                if visit(m, edges, state) {
                    return true;
                }
            }
        }
        state.insert(n, 2);
        false
    }
    let heads: Vec<&str> = edges.keys().copied().collect();
    heads.into_iter().any(|h| visit(h, &edges, &mut state))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("derivation exceeded depth {0}")]
    DepthExceeded(usize),
    #[error("task {0} has no schemas to expand")]
    DeadEnd(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("no derivation within bounds after {0} attempts")]
    Exhausted(u64),
}

/// A validated grammar prepared for repeated top-down sampling.
#[derive(Debug, Clone)]
pub struct Sampler<'g> {
    grammar: &'g Grammar,
    by_head: HashMap<&'g str, Vec<usize>>,
}

impl<'g> Sampler<'g> {
    pub fn new(grammar: &'g Grammar) -> Result<Self, GrammarError> {
        let violations = validate(grammar);
        if !violations.is_empty() {
            return Err(GrammarError::Invalid(violations));
        }
        let mut by_head: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, s) in grammar.schemas.iter().enumerate() {
            by_head.entry(s.head.as_str()).or_default().push(i);
        }
        Ok(Sampler { grammar, by_head })
    }

    /// One top-down derivation. Schemas are chosen by a single uniform draw
    /// per expanded task, tasks expanded leftmost first.
    pub fn sample(&self, seed: u64, max_depth: usize) -> Result<Plan, SampleError> {
        let mut rng = rng_from_seed(seed);
        let top = self.grammar.tasks[0].as_str();
        let mut stack: Vec<(&str, usize)> = vec![(top, 0)];
        let mut out: Vec<String> = Vec::new();
        while let Some((task, depth)) = stack.pop() {
            if depth >= max_depth {
                return Err(SampleError::DepthExceeded(max_depth));
            }
            let options = self
                .by_head
                .get(task)
                .ok_or_else(|| SampleError::DeadEnd(task.to_string()))?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = None;
            for &i in options {
                let p = self.grammar.schemas[i].prob;
                if p <= 0.0 {
                    continue;
                }
                chosen = Some(i);
                acc += p;
                if u < acc {
                    break;
                }
            }
            let chosen = chosen.ok_or_else(|| SampleError::DeadEnd(task.to_string()))?;
            match &self.grammar.schemas[chosen].body {
                Body::Primitive(a) => {
                    out.push(a.clone());
                    if out.len() > MAX_SAMPLED_LEN {
                        return Err(SampleError::DepthExceeded(max_depth));
                    }
                }
                Body::Pair(x, y) => {
                    stack.push((y.as_str(), depth + 1));
                    stack.push((x.as_str(), depth + 1));
                }
            }
        }
        Ok(Plan(out))
    }

    /// Sample with resampling: on a depth overflow the next attempt uses a
    /// fresh seed derived from the failed one.
    pub fn sample_bounded(&self, seed: u64, max_depth: usize) -> Result<Plan, SampleError> {
        let mut s = seed;
        for attempt in 0..MAX_RESAMPLE_ATTEMPTS {
            match self.sample(s, max_depth) {
                Err(SampleError::DepthExceeded(_)) => s = derive_seed(s, attempt),
                other => return other,
            }
        }
        Err(SampleError::Exhausted(MAX_RESAMPLE_ATTEMPTS))
    }

    /// `count` plans; plan `i` uses the stream `derive_seed(seed, i)`.
    pub fn sample_many(&self, count: usize, seed: u64, max_depth: usize) -> Result<Vec<Plan>, SampleError> {
        (0..count as u64).map(|i| self.sample_bounded(derive_seed(seed, i), max_depth)).collect()
    }
}

/// Sample one plan from `grammar`. Returns `DepthExceeded` when the
/// derivation grows deeper than `max_depth`; callers resample with a derived
/// seed (see [`Sampler::sample_bounded`]).
pub fn sample_plan(grammar: &Grammar, seed: u64, max_depth: usize) -> Result<Plan, SampleError> {
    Sampler::new(grammar)?.sample(seed, max_depth)
}

pub fn sample_plans(grammar: &Grammar, count: usize, seed: u64, max_depth: usize) -> Result<Vec<Plan>, SampleError> {
    Sampler::new(grammar)?.sample_many(count, seed, max_depth)
}

/// Every plan a non-recursive grammar derives, with its total derivation
/// probability (summed over all parses). Sorted by descending probability,
/// then lexicographically.
pub fn derivable_plans(grammar: &Grammar, limit: usize) -> Result<Vec<(Plan, f64)>, GrammarError> {
    if has_cycle(grammar) {
        return Err(GrammarError::Recursive);
    }
    let mut memo: HashMap<String, BTreeMap<Vec<String>, f64>> = HashMap::new();
    fn lang(
        g: &Grammar,
        task: &str,
        limit: usize,
        memo: &mut HashMap<String, BTreeMap<Vec<String>, f64>>,
    ) -> Result<BTreeMap<Vec<String>, f64>, GrammarError> {
        if let Some(l) = memo.get(task) {
            return Ok(l.clone());
        }
        let mut out: BTreeMap<Vec<String>, f64> = BTreeMap::new();
        for s in g.schemas.iter().filter(|s| s.head == task && s.prob > 0.0) {
            match &s.body {
                Body::Primitive(a) => *out.entry(vec![a.clone()]).or_insert(0.0) += s.prob,
                Body::Pair(x, y) => {
                    let lx = lang(g, x, limit, memo)?;
                    let ly = lang(g, y, limit, memo)?;
                    for (sx, px) in &lx {
                        for (sy, py) in &ly {
                            let mut k = sx.clone();
                            k.extend(sy.iter().cloned());
                            *out.entry(k).or_insert(0.0) += s.prob * px * py;
                            if out.len() > limit {
                                return Err(GrammarError::TooManyPlans(limit));
                            }
                        }
                    }
                }
            }
        }
        memo.insert(task.to_string(), out.clone());
        Ok(out)
    }
    let top = grammar.top().ok_or(GrammarError::Invalid(vec![Violation::NoTasks]))?;
    let l = lang(grammar, top, limit, &mut memo)?;
    let mut v: Vec<(Plan, f64)> = l.into_iter().map(|(k, p)| (Plan(k), p)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(v)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn travel() -> Grammar {
        let s = |h: &str, b: Body, p: f64| Schema::new(h, b, p);
        Grammar::new(
            ["Buyticket", "Getin", "Getout", "Hitchhike"].map(String::from).to_vec(),
            ["Travel", "A1", "A2", "A3", "B1", "B2"].map(String::from).to_vec(),
            vec![
                s("Travel", Body::pair("A2", "B1"), 0.2),
                s("Travel", Body::pair("A1", "B2"), 0.8),
                s("B1", Body::pair("A1", "A3"), 1.0),
                s("B2", Body::pair("A2", "A3"), 1.0),
                s("A1", Body::primitive("Buyticket"), 1.0),
                s("A2", Body::primitive("Getin"), 1.0),
                s("A3", Body::primitive("Getout"), 1.0),
            ],
        )
    }
}
