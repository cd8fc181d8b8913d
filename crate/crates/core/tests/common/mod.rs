#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use phtn_core::grammar::{Body, Grammar, Plan, Schema};
use phtn_core::rng::rng_from_seed;
use rand::Rng as _;

pub fn fixture(name: &str) -> PathBuf {
    // Shared with the CLI crate's tests, so resolve from the crates/ directory.
    let crates = PathBuf::from(env!("CARGO_MANIFEST_DIR")).parent().unwrap().to_path_buf();
    crates.join("core").join("fixtures").join(name)
}

/// A random CNF grammar with up to `max_tasks` tasks and a small alphabet.
/// Tasks may be recursive and ambiguous; every task has at least one
/// primitive schema so that sampling terminates quickly.
pub fn random_grammar(seed: u64, max_tasks: usize) -> Grammar {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(1..=max_tasks);
    let k = rng.random_range(1..=3usize);
    let tasks: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
    let primitives: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
    let mut schemas = Vec::new();
    for t in &tasks {
        let mut bodies = BTreeSet::new();
        bodies.insert(Body::primitive(&primitives[rng.random_range(0..k)]));
        for _ in 0..rng.random_range(0..=3usize) {
            if rng.random_bool(0.25) {
                bodies.insert(Body::primitive(&primitives[rng.random_range(0..k)]));
            } else {
                bodies.insert(Body::pair(&tasks[rng.random_range(0..n)], &tasks[rng.random_range(0..n)]));
            }
        }
        let raw: Vec<f64> = bodies.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let z: f64 = raw.iter().sum();
        for (b, w) in bodies.into_iter().zip(raw) {
            schemas.push(Schema::new(t.clone(), b, w / z));
        }
    }
    Grammar::new(primitives, tasks, schemas)
}

/// A random plan of length 1..=max_len over the grammar's primitives.
pub fn random_plan(grammar: &Grammar, seed: u64, max_len: usize) -> Plan {
    let mut rng = rng_from_seed(seed);
    let len = rng.random_range(1..=max_len);
    let k = grammar.primitives.len();
    Plan::new((0..len).map(|_| grammar.primitives[rng.random_range(0..k)].clone())).unwrap()
}
