//! Hard-assignment EM over Viterbi parses.
//!
//! Each iteration parses every training plan with the current grammar, counts
//! how often each schema appears in the chosen trees (weighted by plan
//! weight) and sets `θ(Z -> ·) = M[Z -> ·] / M[Z]`.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::grammar::{normalize, Body, Grammar, GrammarError, Plan, WeightedPlan};
use crate::parser::Parser;
use crate::rng::derive_seed;
use crate::structure::initialize_probabilities;

/// Absolute slack allowed when checking that the log-likelihood never drops.
pub const MONOTONE_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Schemas whose final θ is below this are removed.
    pub prune_eps: f64,
    /// Number of runs; the first starts from the given θs, later ones from
    /// random θs. The best final log-likelihood wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { tol: 1e-6, max_iters: 200, prune_eps: 1e-6, restarts: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmError {
    #[error("plan {index} is not parsable: {plan}")]
    Unparsable { index: usize, plan: Plan },
    #[error("log-likelihood decreased at iteration {iteration}: {previous} -> {current}")]
    NonMonotone { iteration: usize, previous: f64, current: f64 },
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

/// Weighted schema usage counts from one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    /// Indexed like `grammar.schemas`.
    pub schema_counts: Vec<f64>,
    /// Indexed like `grammar.tasks`.
    pub task_totals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmReport {
    /// Number of M-steps performed.
    pub iterations: usize,
    /// Total weighted log-likelihood before the first M-step and after each one.
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    pub pruned: usize,
    /// Which restart produced the returned grammar.
    pub restart: usize,
}

impl EmReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,log_likelihood\n");
        for (i, ll) in self.log_likelihoods.iter().enumerate() {
            let _ = writeln!(out, "{i},{ll:?}");
        }
        out
    }

    pub fn final_log_likelihood(&self) -> f64 {
        self.log_likelihoods.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Viterbi-parses every plan and accumulates weighted schema counts.
///
/// Parsing runs in parallel; the reduction walks plans in input order so the
/// result does not depend on the thread count.
pub fn em_estep_counts(grammar: &Grammar, plans: &[WeightedPlan]) -> Result<(CountTable, f64), EmError> {
    let parser = Parser::new(grammar);
    let parses: Vec<Option<(f64, Vec<usize>)>> = plans.par_iter().map(|wp| parser.best_schemas(&wp.plan)).collect();

    let mut schema_counts = vec![0.0; grammar.schemas.len()];
    let mut total = 0.0;
    for (index, (wp, parse)) in plans.iter().zip(parses).enumerate() {
        let Some((ll, used)) = parse else {
            return Err(EmError::Unparsable { index, plan: wp.plan.clone() });
        };
        total += wp.weight * ll;
        for s in used {
            schema_counts[s] += wp.weight;
        }
    }
    let task_totals = grammar
        .tasks
        .iter()
        .map(|t| grammar.schemas_of(t).map(|s| schema_counts[s]).sum())
        .collect();
    Ok((CountTable { schema_counts, task_totals }, total))
}

/// θ := M[Z -> ·] / M[Z]; heads with M[Z] = 0 keep their previous θs.
pub fn m_step(grammar: &Grammar, counts: &CountTable) -> Grammar {
    let mut next = grammar.clone();
    for (ti, task) in grammar.tasks.iter().enumerate() {
        let total = counts.task_totals[ti];
        if total <= 0.0 {
            continue;
        }
        for s in grammar.schemas_of(task) {
            next.schemas[s].prob = counts.schema_counts[s] / total;
        }
    }
    next
}

fn relative_improvement(previous: f64, current: f64) -> f64 {
    let gain = current - previous;
    if previous == 0.0 {
        gain
    } else {
        gain / previous.abs()
    }
}

fn run_once(start: &Grammar, plans: &[WeightedPlan], config: &EmConfig) -> Result<(Grammar, EmReport), EmError> {
    let mut grammar = start.clone();
    let (mut counts, mut ll) = em_estep_counts(&grammar, plans)?;
    let mut report = EmReport { log_likelihoods: vec![ll], ..EmReport::default() };
    while report.iterations < config.max_iters {
        let next = m_step(&grammar, &counts);
        let (next_counts, next_ll) = em_estep_counts(&next, plans)?;
        report.iterations += 1;
        if next_ll < ll - MONOTONE_SLACK {
            return Err(EmError::NonMonotone { iteration: report.iterations, previous: ll, current: next_ll });
        }
        report.log_likelihoods.push(next_ll);
        let improvement = relative_improvement(ll, next_ll);
        grammar = next;
        counts = next_counts;
        ll = next_ll;
        if improvement < config.tol {
            report.converged = true;
            break;
        }
    }
    Ok((grammar, report))
}

/// Drops schemas with θ below `eps`, renormalizes and removes tasks no longer
/// reachable from the top task. Returns the new grammar and the number of
/// schemas removed.
pub fn prune(grammar: &Grammar, eps: f64) -> Result<(Grammar, usize), GrammarError> {
    let kept: Vec<_> = grammar.schemas.iter().filter(|s| s.prob >= eps).cloned().collect();
    let mut pruned = grammar.schemas.len() - kept.len();
    let g = normalize(&Grammar { schemas: kept, ..grammar.clone() })?;

    let Some(top) = g.top() else { return Ok((g, pruned)) };
    let mut reachable: HashSet<&str> = HashSet::from([top]);
    let mut stack = vec![top];
    while let Some(t) = stack.pop() {
        for s in g.schemas_of(t) {
            if let Body::Pair(x, y) = &g.schemas[s].body {
                for c in [x.as_str(), y.as_str()] {
                    if reachable.insert(c) {
                        stack.push(c);
                    }
                }
            }
        }
    }
    let tasks: Vec<String> = g.tasks.iter().filter(|t| reachable.contains(t.as_str())).cloned().collect();
    let schemas: Vec<_> = g.schemas.iter().filter(|s| reachable.contains(s.head.as_str())).cloned().collect();
    pruned += g.schemas.len() - schemas.len();
    Ok((Grammar { primitives: g.primitives.clone(), tasks, schemas }, pruned))
}

/// Runs hard EM from `grammar` on `plans`, then prunes.
pub fn em_fit(grammar: &Grammar, plans: &[WeightedPlan], config: &EmConfig) -> Result<(Grammar, EmReport), EmError> {
    let mut best: Option<(Grammar, EmReport)> = None;
    for r in 0..config.restarts.max(1) {
        let start = if r == 0 { grammar.clone() } else { initialize_probabilities(grammar, derive_seed(config.seed, r as u64)) };
        let (g, mut report) = run_once(&start, plans, config)?;
        report.restart = r;
        if best.as_ref().is_none_or(|(_, b)| report.final_log_likelihood() > b.final_log_likelihood()) {
            best = Some((g, report));
        }
    }
    let (g, mut report) = best.expect("at least one run");
    let (g, pruned) = prune(&g, config.prune_eps)?;
    report.pruned = pruned;
    Ok((g, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{validate, Schema};

    fn two_way(p: f64) -> Grammar {
        Grammar::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            ["T", "A", "B", "C", "D"].map(String::from).to_vec(),
            vec![
                Schema::new("T", Body::pair("A", "B"), p),
                Schema::new("T", Body::pair("C", "D"), 1.0 - p),
                Schema::new("A", Body::primitive("a"), 1.0),
                Schema::new("B", Body::primitive("b"), 1.0),
                Schema::new("C", Body::primitive("c"), 1.0),
                Schema::new("D", Body::primitive("d"), 1.0),
            ],
        )
    }

    fn wp(text: &str, w: f64) -> WeightedPlan {
        WeightedPlan::new(Plan::parse(text).unwrap(), w).unwrap()
    }

    #[test]
    fn three_to_one_counts() {
        let plans = vec![wp("a b", 1.0), wp("a b", 1.0), wp("a b", 1.0), wp("c d", 1.0)];
        let (g, report) = em_fit(&two_way(0.5), &plans, &EmConfig::default()).unwrap();
        assert!((g.schemas[0].prob - 0.75).abs() < 1e-12);
        assert!((g.schemas[1].prob - 0.25).abs() < 1e-12);
        assert!(report.converged);
        assert_eq!(report.iterations, 2);
        assert!(validate(&g).is_empty());
    }

    #[test]
    fn weighted_plan_counts_like_copies() {
        let plans = vec![wp("a b", 3.0), wp("c d", 1.0)];
        let (g, _) = em_fit(&two_way(0.5), &plans, &EmConfig::default()).unwrap();
        assert!((g.schemas[0].prob - 0.75).abs() < 1e-12);
    }

    #[test]
    fn ambiguous_plan_counts_best_parse_only() {
        // both T bodies derive "a b"
        let g = Grammar::new(
            vec!["a".into(), "b".into()],
            ["T", "A", "B", "C", "D"].map(String::from).to_vec(),
            vec![
                Schema::new("T", Body::pair("A", "B"), 0.6),
                Schema::new("T", Body::pair("C", "D"), 0.4),
                Schema::new("A", Body::primitive("a"), 1.0),
                Schema::new("B", Body::primitive("b"), 1.0),
                Schema::new("C", Body::primitive("a"), 1.0),
                Schema::new("D", Body::primitive("b"), 1.0),
            ],
        );
        let (counts, ll) = em_estep_counts(&g, &[wp("a b", 1.0)]).unwrap();
        assert_eq!(counts.schema_counts, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(counts.task_totals, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
        assert!((ll - 0.6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn weight_multiplies_path_counts() {
        let (counts, _) = em_estep_counts(&two_way(0.5), &[wp("a b", 5.0)]).unwrap();
        assert_eq!(counts.schema_counts, vec![5.0, 0.0, 5.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn unused_alternative_is_pruned() {
        let g = crate::grammar::fixtures::travel();
        let plans = vec![wp("Buyticket Getin Getout", 1.0)];
        let (fit, report) = em_fit(&g, &plans, &EmConfig::default()).unwrap();
        assert!(fit.schemas.iter().all(|s| s.prob == 1.0));
        assert!(report.log_likelihoods.iter().skip(1).all(|&l| l == 0.0));
        // the unused Travel alternative and its subtree are pruned
        assert_eq!(report.pruned, 2);
        assert_eq!(fit.tasks, ["Travel", "A1", "A2", "A3", "B2"]);
    }

    #[test]
    fn fixed_point_is_unchanged() {
        let plans = vec![wp("a b", 3.0), wp("c d", 1.0)];
        let g = two_way(0.75);
        let (fit, report) = em_fit(&g, &plans, &EmConfig::default()).unwrap();
        assert_eq!(fit, g);
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
    }

    #[test]
    fn unparsable_plan_is_named() {
        let err = em_estep_counts(&two_way(0.5), &[wp("a b", 1.0), wp("b a", 1.0)]).unwrap_err();
        assert!(matches!(err, EmError::Unparsable { index: 1, .. }));
    }

    #[test]
    fn unused_head_keeps_theta() {
        let g = Grammar::new(
            vec!["a".into(), "b".into()],
            ["T", "A", "B"].map(String::from).to_vec(),
            vec![
                Schema::new("T", Body::pair("A", "A"), 0.5),
                Schema::new("T", Body::pair("B", "B"), 0.5),
                Schema::new("A", Body::primitive("a"), 1.0),
                Schema::new("B", Body::primitive("b"), 0.3),
                Schema::new("B", Body::pair("B", "B"), 0.7),
            ],
        );
        let (counts, _) = em_estep_counts(&g, &[wp("a a", 1.0)]).unwrap();
        let next = m_step(&g, &counts);
        assert_eq!(next.schemas[3].prob, 0.3);
        assert_eq!(next.schemas[4].prob, 0.7);
        assert_eq!(next.schemas[0].prob, 1.0);
    }

    #[test]
    fn restarts_keep_the_best_run() {
        let plans = vec![wp("a b", 3.0), wp("c d", 1.0)];
        let config = EmConfig { restarts: 4, seed: 9, ..EmConfig::default() };
        let (g, report) = em_fit(&two_way(0.5), &plans, &config).unwrap();
        assert!((g.schemas[0].prob - 0.75).abs() < 1e-12);
        assert!(report.restart < 4);
    }

    #[test]
    fn report_csv() {
        let r = EmReport { log_likelihoods: vec![-2.0, -1.5], iterations: 1, ..Default::default() };
        assert_eq!(r.to_csv(), "iteration,log_likelihood\n0,-2.0\n1,-1.5\n");
    }
}
