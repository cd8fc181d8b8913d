//! Greedy structure hypothesizer.
//!
//! Starting from one wrapper task per primitive, the hypothesizer repeatedly
//! adds one schema and rewrites every training sequence with all schemas
//! found so far, until each sequence has been reduced to the top task:
//!
//! 1. If the shortest remaining sequence has at most two symbols, the top
//!    task gets a schema covering it directly.
//! 2. Otherwise, if a simple repetition `Z X X .. X` (or `X X .. X Z`) is
//!    frequent and long enough, `Z -> Z X` (or `Z -> X Z`) is added.
//! 3. Otherwise the most frequent adjacent pair `X Y` gets a new task.
//!
//! Probabilities are finally drawn uniformly at random and normalized.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng as _;

use crate::grammar::{normalize, Body, Grammar, Schema, WeightedPlan};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ShConfig {
    /// Absolute floor on the mean repetition length.
    pub min_rec_len: f64,
    /// The mean repetition length must also reach this fraction of the mean
    /// remaining-sequence length.
    pub min_rec_len_factor: f64,
    /// Minimum weighted occurrences per weighted remaining sequence.
    pub min_rec_freq: f64,
    pub seed: u64,
}

impl Default for ShConfig {
    fn default() -> Self {
        ShConfig { min_rec_len: 3.0, min_rec_len_factor: 0.25, min_rec_freq: 0.1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StructureError {
    #[error("no training plans")]
    NoPlans,
    #[error("no sequence with at least two symbols")]
    NoPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSequence {
    pub symbols: Vec<String>,
    pub weight: f64,
}

/// Training sequences after rewriting by the schemas found so far.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewriteState {
    pub sequences: Vec<WeightedSequence>,
}

impl RewriteState {
    pub fn from_sequences<I, S>(seqs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: IntoIterator,
        S::Item: Into<String>,
    {
        RewriteState {
            sequences: seqs
                .into_iter()
                .map(|(s, w)| WeightedSequence { symbols: s.into_iter().map(Into::into).collect(), weight: w })
                .collect(),
        }
    }

    fn total_weight(&self) -> f64 {
        self.sequences.iter().map(|s| s.weight).sum()
    }

    fn mean_length(&self) -> f64 {
        let w = self.total_weight();
        if w <= 0.0 {
            return 0.0;
        }
        self.sequences.iter().map(|s| s.weight * s.symbols.len() as f64).sum::<f64>() / w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    /// `Z X X .. X`, giving `Z -> Z X`.
    Left,
    /// `X X .. X Z`, giving `Z -> X Z`.
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecursionCandidate {
    pub anchor: String,
    pub repeated: String,
    pub direction: Direction,
    /// Weighted number of maximal runs found.
    pub count: f64,
    /// Weighted mean run length.
    pub mean_length: f64,
}

impl RecursionCandidate {
    fn score(&self) -> f64 {
        self.count * self.mean_length
    }
}

/// Most frequent adjacent ordered pair, counted without overlap left to
/// right and weighted by multiplicity. Ties go to the lexicographically
/// smallest `(left, right)`.
pub fn most_frequent_pair(state: &RewriteState) -> Result<((String, String), f64), StructureError> {
    let mut counts: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for seq in &state.sequences {
        let s = &seq.symbols;
        // last start index counted for each pair in this sequence
        let mut last: HashMap<(&str, &str), usize> = HashMap::new();
        for i in 0..s.len().saturating_sub(1) {
            let key = (s[i].as_str(), s[i + 1].as_str());
            if let Some(&j) = last.get(&key) {
                if j + 1 == i {
                    continue;
                }
            }
            last.insert(key, i);
            *counts.entry(key).or_insert(0.0) += seq.weight;
        }
    }
    let mut best: Option<((&str, &str), f64)> = None;
    for (k, c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    best.map(|((x, y), c)| ((x.to_string(), y.to_string()), c)).ok_or(StructureError::NoPair)
}

/// Finds maximal runs of one repeated symbol (two or more) next to a
/// different anchor symbol and returns the candidate with the largest
/// `count * mean_length`, provided it passes the thresholds in `config`.
pub fn best_simple_recursion(state: &RewriteState, config: &ShConfig) -> Option<RecursionCandidate> {
    // (anchor, repeated, direction) -> (weighted runs, weighted total length)
    let mut stats: BTreeMap<(Direction, &str, &str), (f64, f64)> = BTreeMap::new();
    for seq in &state.sequences {
        let s = &seq.symbols;
        let mut i = 0;
        while i < s.len() {
            let mut j = i + 1;
            while j < s.len() && s[j] == s[i] {
                j += 1;
            }
            let run = j - i;
            if run >= 2 {
                let x = s[i].as_str();
                if i > 0 {
                    let e = stats.entry((Direction::Left, s[i - 1].as_str(), x)).or_insert((0.0, 0.0));
                    e.0 += seq.weight;
                    e.1 += seq.weight * run as f64;
                }
                if j < s.len() {
                    let e = stats.entry((Direction::Right, s[j].as_str(), x)).or_insert((0.0, 0.0));
                    e.0 += seq.weight;
                    e.1 += seq.weight * run as f64;
                }
            }
            i = j;
        }
    }
    let mut best: Option<RecursionCandidate> = None;
    for ((direction, anchor, repeated), (count, total)) in stats {
        let cand = RecursionCandidate {
            anchor: anchor.to_string(),
            repeated: repeated.to_string(),
            direction,
            count,
            mean_length: total / count,
        };
        if best.as_ref().is_none_or(|b| cand.score() > b.score()) {
            best = Some(cand);
        }
    }
    let best = best?;
    let weight = state.total_weight();
    let min_len = config.min_rec_len.max(config.min_rec_len_factor * state.mean_length());
    let freq = if weight > 0.0 { best.count / weight } else { 0.0 };
    (best.mean_length >= min_len && freq >= config.min_rec_freq).then_some(best)
}

/// Draws every schema probability uniformly from (0, 1] and normalizes per
/// head task.
pub fn initialize_probabilities(grammar: &Grammar, seed: u64) -> Grammar {
    let mut rng = rng_from_seed(seed);
    let schemas = grammar
        .schemas
        .iter()
        .map(|s| Schema { prob: 1.0 - rng.random::<f64>(), ..s.clone() })
        .collect();
    normalize(&Grammar { schemas, ..grammar.clone() }).expect("uniform draws are positive")
}

struct Builder {
    used_names: HashSet<String>,
    next_wrapper: usize,
    next_pair: usize,
    tasks: Vec<String>,
    top: String,
    /// Non-top schemas in creation order: (head, body).
    rules: Vec<(String, Body)>,
    top_rules: Vec<Body>,
    /// Tasks whose whole sequences reduced to a single symbol; the top task
    /// inherits their bodies.
    aliases: Vec<String>,
    wrapper_of: HashMap<String, String>,
    pair_index: HashMap<(String, String), String>,
}

fn fresh_name(used: &mut HashSet<String>, prefix: &str, counter: &mut usize) -> String {
    loop {
        *counter += 1;
        let name = format!("{prefix}{counter}");
        if used.insert(name.clone()) {
            return name;
        }
    }
}

impl Builder {
    fn add_top(&mut self, body: Body) {
        if !self.top_rules.contains(&body) {
            self.top_rules.push(body);
        }
    }

    /// Rewrite one sequence exhaustively with all non-top rules.
    fn rewrite(&self, seq: &mut Vec<String>) {
        loop {
            let mut changed = false;
            for (head, body) in &self.rules {
                let Body::Pair(x, y) = body else { continue };
                let mut out = Vec::with_capacity(seq.len());
                let mut i = 0;
                while i < seq.len() {
                    if i + 1 < seq.len() && seq[i] == *x && seq[i + 1] == *y {
                        out.push(head.clone());
                        i += 2;
                        changed = true;
                    } else {
                        out.push(seq[i].clone());
                        i += 1;
                    }
                }
                *seq = out;
            }
            if !changed {
                break;
            }
        }
    }

    fn rewrite_all(&self, state: &mut RewriteState) {
        for s in &mut state.sequences {
            self.rewrite(&mut s.symbols);
        }
        let top = &self.top;
        let top_rules = &self.top_rules;
        let aliases = &self.aliases;
        state.sequences.retain(|s| match s.symbols.as_slice() {
            [z] => !aliases.contains(z) && z != top,
            [x, y] => !top_rules.contains(&Body::Pair(x.clone(), y.clone())),
            _ => true,
        });
    }

    fn finish(mut self) -> Grammar {
        // the top task inherits every body of the aliased tasks as they stand now
        for z in self.aliases.clone() {
            let bodies: Vec<Body> = self.rules.iter().filter(|(h, _)| *h == z).map(|(_, b)| b.clone()).collect();
            for b in bodies {
                self.add_top(b);
            }
        }
        let mut schemas: Vec<Schema> = self.top_rules.iter().map(|b| Schema::new(self.top.clone(), b.clone(), 1.0)).collect();
        schemas.extend(self.rules.iter().map(|(h, b)| Schema::new(h.clone(), b.clone(), 1.0)));

        // drop tasks the top cannot reach (a wrapper whose only use was copied onto the top)
        let mut reach: HashSet<&str> = HashSet::from([self.top.as_str()]);
        let mut frontier = vec![self.top.as_str()];
        while let Some(t) = frontier.pop() {
            for s in schemas.iter().filter(|s| s.head == t) {
                if let Body::Pair(x, y) = &s.body {
                    for c in [x.as_str(), y.as_str()] {
                        if reach.insert(c) {
                            frontier.push(c);
                        }
                    }
                }
            }
        }
        let mut tasks = vec![self.top.clone()];
        tasks.extend(self.tasks.iter().filter(|t| reach.contains(t.as_str())).cloned());
        let schemas: Vec<Schema> = schemas.iter().filter(|s| reach.contains(s.head.as_str())).cloned().collect();
        let mut primitives: Vec<String> = self.wrapper_of.keys().cloned().collect();
        primitives.sort();
        normalize(&Grammar::new(primitives, tasks, schemas)).expect("every head has a schema")
    }
}

/// Hypothesize a grammar covering every plan in `plans`.
///
/// Duplicate plans are merged with summed weights. The result is normalized
/// with random initial probabilities drawn from `config.seed`.
pub fn hypothesize(plans: &[WeightedPlan], config: &ShConfig) -> Result<Grammar, StructureError> {
    if plans.is_empty() {
        return Err(StructureError::NoPlans);
    }
    let mut merged: Vec<WeightedSequence> = Vec::new();
    let mut index: HashMap<&[String], usize> = HashMap::new();
    for wp in plans {
        match index.get(wp.plan.actions()) {
            Some(&i) => merged[i].weight += wp.weight,
            None => {
                index.insert(wp.plan.actions(), merged.len());
                merged.push(WeightedSequence { symbols: wp.plan.actions().to_vec(), weight: wp.weight });
            }
        }
    }

    let mut used_names: HashSet<String> = HashSet::new();
    for s in &merged {
        used_names.extend(s.symbols.iter().cloned());
    }
    let mut b = Builder {
        used_names,
        next_wrapper: 0,
        next_pair: 0,
        tasks: Vec::new(),
        top: String::new(),
        rules: Vec::new(),
        top_rules: Vec::new(),
        aliases: Vec::new(),
        wrapper_of: HashMap::new(),
        pair_index: HashMap::new(),
    };
    b.top = if b.used_names.insert("T".to_string()) {
        "T".to_string()
    } else {
        fresh_name(&mut b.used_names, "T", &mut 0)
    };

    // one wrapper task per primitive, in order of first appearance
    for s in &mut merged {
        for a in &mut s.symbols {
            let z = match b.wrapper_of.get(a.as_str()) {
                Some(z) => z.clone(),
                None => {
                    let z = fresh_name(&mut b.used_names, "A", &mut b.next_wrapper);
                    b.wrapper_of.insert(a.clone(), z.clone());
                    b.tasks.push(z.clone());
                    b.rules.push((z.clone(), Body::Primitive(a.clone())));
                    z
                }
            };
            *a = z;
        }
    }
    let mut state = RewriteState { sequences: merged };
    b.rewrite_all(&mut state);

    while !state.sequences.is_empty() {
        let shortest = state
            .sequences
            .iter()
            .min_by_key(|s| s.symbols.len())
            .map(|s| s.symbols.clone())
            .expect("non-empty");
        if shortest.len() <= 2 {
            match shortest.as_slice() {
                [x, y] => b.add_top(Body::Pair(x.clone(), y.clone())),
                [z] => {
                    if !b.aliases.contains(z) {
                        b.aliases.push(z.clone());
                    }
                }
                _ => unreachable!("sequences are never empty"),
            }
        } else if let Some(c) = best_simple_recursion(&state, config) {
            let body = match c.direction {
                Direction::Left => Body::Pair(c.anchor.clone(), c.repeated.clone()),
                Direction::Right => Body::Pair(c.repeated.clone(), c.anchor.clone()),
            };
            b.rules.push((c.anchor.clone(), body));
        } else {
            let ((x, y), _) = most_frequent_pair(&state)?;
            let key = (x.clone(), y.clone());
            if !b.pair_index.contains_key(&key) {
                let z = fresh_name(&mut b.used_names, "S", &mut b.next_pair);
                b.tasks.push(z.clone());
                b.rules.push((z.clone(), Body::Pair(x, y)));
                b.pair_index.insert(key, z);
            }
        }
        b.rewrite_all(&mut state);
    }

    let skeleton = b.finish();
    Ok(initialize_probabilities(&skeleton, config.seed))
}
