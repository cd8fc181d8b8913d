//! Evaluation harness: random oracle grammars, sampled KL divergence, a
//! simulator for feasibility-constrained choices and the preference game.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::em::EmConfig;
use crate::grammar::{Body, Grammar, Plan, SampleError, Sampler, Schema, WeightedPlan, DEFAULT_MAX_DEPTH};
use crate::parser::Parser;
use crate::rescale::{self, vote, Cluster, ObservationRecord, Preference, PreferenceEnsemble};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::structure::{hypothesize, ShConfig};
use crate::LearnError;

/// Attempts at drawing a pair the oracle does not consider a tie.
pub const MAX_PAIR_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    /// Number of tasks.
    pub n: usize,
    pub recursive: bool,
    /// Fraction of schemas that are recursive; used only if `recursive`.
    pub recursive_fraction: f64,
    /// Primitive alphabet size; `None` gives every leaf task its own action.
    pub primitives: Option<usize>,
    /// Range of schemas per task, inclusive.
    pub min_alternatives: usize,
    pub max_alternatives: usize,
    /// Leaf tasks get between one and this many primitive schemas.
    pub max_leaf_alternatives: usize,
    pub seed: u64,
}

impl OracleSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        OracleSpec {
            n,
            recursive: false,
            recursive_fraction: 0.1,
            primitives: None,
            min_alternatives: 1,
            max_alternatives: 3,
            max_leaf_alternatives: 1,
            seed,
        }
    }

    pub fn recursive(mut self, fraction: f64) -> Self {
        self.recursive = true;
        self.recursive_fraction = fraction;
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("an oracle needs at least two tasks, got {0}")]
    TooFewTasks(usize),
    #[error("bad alternative range {0}..={1}")]
    Alternatives(usize, usize),
    #[error("recursive fraction must lie in [0, 1), got {0}")]
    Fraction(f64),
    #[error("primitive count must be positive")]
    NoPrimitives,
    #[error("no oracle with at least two plans in {0} draws")]
    NoChoice(u64),
}

fn push_unique(bodies: &mut Vec<Body>, body: Body) -> bool {
    if bodies.contains(&body) {
        false
    } else {
        bodies.push(body);
        true
    }
}

/// Generates a random grammar shaped as a binary and-or tree rooted at `N0`.
///
/// Tasks are expanded breadth-first. While unused tasks remain, the task
/// being expanded gets between `min_alternatives` and `max_alternatives`
/// schemas, each splitting into two unused tasks; the remaining tasks are
/// leaves with one primitive each. If a single unused task is left over, it
/// is paired with a random later task. With `recursive`, extra schemas
/// `Z -> Z X` or `Z -> X Z` with `X` after `Z` are added.
pub fn gen_oracle(spec: &OracleSpec) -> Result<Grammar, OracleError> {
    let n = spec.n;
    if n < 2 {
        return Err(OracleError::TooFewTasks(n));
    }
    if spec.min_alternatives == 0 || spec.min_alternatives > spec.max_alternatives {
        return Err(OracleError::Alternatives(spec.min_alternatives, spec.max_alternatives));
    }
    if spec.recursive && !(0.0..1.0).contains(&spec.recursive_fraction) {
        return Err(OracleError::Fraction(spec.recursive_fraction));
    }
    if spec.primitives == Some(0) {
        return Err(OracleError::NoPrimitives);
    }
    let mut rng = rng_from_seed(spec.seed);
    let tasks: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
    let mut bodies: Vec<Vec<Body>> = vec![Vec::new(); n];

    let mut next = 1;
    let mut leaves = 0;
    for i in 0..n {
        if next < n {
            let k = rng.random_range(spec.min_alternatives..=spec.max_alternatives);
            let k = k.min((n - next).div_ceil(2));
            for _ in 0..k {
                let x = next;
                let y = if next + 1 < n { next + 1 } else { rng.random_range(i + 1..n) };
                next = (next + 2).min(n);
                push_unique(&mut bodies[i], Body::pair(&tasks[x], &tasks[y]));
            }
        } else {
            let k = spec.primitives.map_or(leaves, |p| leaves % p);
            bodies[i].push(Body::primitive(format!("a{k}")));
            leaves += 1;
        }
    }
    let primitive_count = spec.primitives.unwrap_or(leaves);
    let primitives: Vec<String> = (0..primitive_count).map(|k| format!("a{k}")).collect();
    if spec.max_leaf_alternatives > 1 {
        for i in 0..n {
            if matches!(bodies[i][0], Body::Primitive(_)) {
                let k = rng.random_range(1..=spec.max_leaf_alternatives);
                for _ in 1..k {
                    let a = primitives.choose(&mut rng).expect("non-empty").clone();
                    push_unique(&mut bodies[i], Body::primitive(a));
                }
            }
        }
    }

    if spec.recursive {
        let total: usize = bodies.iter().map(Vec::len).sum();
        let f = spec.recursive_fraction;
        let wanted = ((f * total as f64 / (1.0 - f)).round() as usize).max(1);
        let mut added = 0;
        let mut tries = 0;
        while added < wanted && tries < 100 * wanted {
            tries += 1;
            let z = rng.random_range(0..n - 1);
            let x = rng.random_range(z + 1..n);
            let body = if rng.random_bool(0.5) {
                Body::pair(&tasks[z], &tasks[x])
            } else {
                Body::pair(&tasks[x], &tasks[z])
            };
            if push_unique(&mut bodies[z], body) {
                added += 1;
            }
        }
    }

    let mut schemas = Vec::new();
    for (i, bs) in bodies.into_iter().enumerate() {
        let draws: Vec<f64> = bs.iter().map(|_| 1.0 - rng.random::<f64>()).collect();
        let sum: f64 = draws.iter().sum();
        for (body, d) in bs.into_iter().zip(draws) {
            schemas.push(Schema::new(&tasks[i], body, d / sum));
        }
    }
    Ok(Grammar::new(primitives, tasks, schemas))
}

/// Draws at most this many oracles when looking for one with a choice.
pub const MAX_ORACLE_REDRAWS: u64 = 100;

/// Like [`gen_oracle`], but redraws until the oracle derives at least two
/// distinct plans. Attempt `r > 0` uses `derive_seed(spec.seed, r)`.
/// Recursive oracles always qualify.
pub fn gen_oracle_with_choice(spec: &OracleSpec) -> Result<Grammar, OracleError> {
    for r in 0..MAX_ORACLE_REDRAWS {
        let seed = if r == 0 { spec.seed } else { derive_seed(spec.seed, r) };
        let g = gen_oracle(&OracleSpec { seed, ..spec.clone() })?;
        match crate::grammar::derivable_plans(&g, 2) {
            Ok(plans) if plans.len() < 2 => continue,
            _ => return Ok(g),
        }
    }
    Err(OracleError::NoChoice(MAX_ORACLE_REDRAWS))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KlError {
    #[error("sampled supports do not intersect (overlap {overlap})")]
    EmptyIntersection { overlap: f64 },
    #[error(transparent)]
    Sample(#[from] SampleError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    /// In nats.
    pub kl: f64,
    /// Jaccard overlap of the sampled supports.
    pub overlap: f64,
}

fn empirical(grammar: &Grammar, count: usize, seed: u64) -> Result<BTreeMap<Plan, f64>, SampleError> {
    let sampler = Sampler::new(grammar)?;
    let mut counts = BTreeMap::new();
    for i in 0..count {
        let plan = sampler.sample_bounded(derive_seed(seed, i as u64), DEFAULT_MAX_DEPTH)?;
        *counts.entry(plan).or_insert(0.0) += 1.0;
    }
    Ok(counts)
}

/// KL divergence of `q` from `p`, both restricted to their common support and
/// renormalized there.
pub fn restricted_kl(p: &BTreeMap<Plan, f64>, q: &BTreeMap<Plan, f64>) -> Result<KlEstimate, KlError> {
    let common: Vec<&Plan> = p.keys().filter(|k| q.contains_key(*k)).collect();
    let union = p.len() + q.len() - common.len();
    let overlap = if union == 0 { 0.0 } else { common.len() as f64 / union as f64 };
    if common.is_empty() {
        return Err(KlError::EmptyIntersection { overlap: 0.0 });
    }
    let zp: f64 = common.iter().map(|k| p[*k]).sum();
    let zq: f64 = common.iter().map(|k| q[*k]).sum();
    let mut kl = 0.0;
    for k in common {
        let a = p[k] / zp;
        let b = q[k] / zq;
        kl += a * (a / b).ln();
    }
    Ok(KlEstimate { kl: kl.max(0.0), overlap })
}

/// Samples `samples` plans from each grammar and compares the empirical
/// distributions on their common support.
pub fn estimate_kl(oracle: &Grammar, learned: &Grammar, samples: usize, seed: u64) -> Result<KlEstimate, KlError> {
    let p = empirical(oracle, samples, derive_seed(seed, 0))?;
    let q = empirical(learned, samples, derive_seed(seed, 1))?;
    restricted_kl(&p, &q)
}

pub fn conciseness_ratio(oracle: &Grammar, learned: &Grammar) -> f64 {
    learned.tasks.len() as f64 / oracle.tasks.len() as f64
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("plan universe has {0} distinct plans, need at least 2")]
    SmallUniverse(usize),
    #[error("power-law exponent must be finite and non-negative, got {0}")]
    Exponent(f64),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("oracle cannot parse a plan it generated: {0}")]
    Unparsable(Plan),
}

/// Distinct oracle samples, least likely first, with power-law weights on
/// their rank.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityModel {
    pub universe: Vec<Plan>,
    /// Sums to one; `weights[k] ∝ (k + 1)^-exponent`.
    pub weights: Vec<f64>,
    pub exponent: f64,
}

impl FeasibilityModel {
    pub fn new(universe: Vec<Plan>, exponent: f64) -> Result<Self, SimulationError> {
        if !(exponent.is_finite() && exponent >= 0.0) {
            return Err(SimulationError::Exponent(exponent));
        }
        if universe.len() < 2 {
            return Err(SimulationError::SmallUniverse(universe.len()));
        }
        let raw: Vec<f64> = (1..=universe.len()).map(|k| (k as f64).powf(-exponent)).collect();
        let z: f64 = raw.iter().sum();
        Ok(FeasibilityModel { universe, weights: raw.into_iter().map(|w| w / z).collect(), exponent })
    }

    /// Draws `samples` plans from `oracle`, keeps the first occurrence of each
    /// and reverses the order.
    pub fn from_oracle(oracle: &Grammar, samples: usize, exponent: f64, seed: u64) -> Result<Self, SimulationError> {
        let sampler = Sampler::new(oracle).map_err(SampleError::from)?;
        let mut seen = BTreeSet::new();
        let mut universe = Vec::new();
        for i in 0..samples {
            let plan = sampler.sample_bounded(derive_seed(seed, i as u64), DEFAULT_MAX_DEPTH)?;
            if seen.insert(plan.clone()) {
                universe.push(plan);
            }
        }
        universe.reverse();
        Self::new(universe, exponent)
    }

    fn index_distribution(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.weights).expect("weights are positive")
    }

    /// `size` distinct universe indices, drawn by weight without replacement,
    /// returned in universe order.
    pub fn sample_set(&self, rng: &mut Rng, size: usize) -> Vec<usize> {
        let indices: Vec<usize> = (0..self.universe.len()).collect();
        let mut chosen: Vec<usize> = indices
            .choose_multiple_weighted(rng, size, |&i| self.weights[i])
            .expect("weights are positive")
            .copied()
            .collect();
        chosen.sort_unstable();
        chosen
    }
}

fn oracle_log_likelihoods(oracle: &Grammar, plans: &[Plan]) -> Result<Vec<f64>, SimulationError> {
    let parser = Parser::new(oracle);
    plans
        .iter()
        .map(|p| parser.log_likelihood(p).ok_or_else(|| SimulationError::Unparsable(p.clone())))
        .collect()
}

/// Generates records against an existing feasibility model.
pub fn simulate_records_in(
    oracle: &Grammar,
    feasibility: &FeasibilityModel,
    record_count: usize,
    seed: u64,
) -> Result<Vec<ObservationRecord>, SimulationError> {
    let lls = oracle_log_likelihoods(oracle, &feasibility.universe)?;
    let size = feasibility.universe.len();
    let mut rng = rng_from_seed(seed);
    let mut records = Vec::with_capacity(record_count);
    for _ in 0..record_count {
        let z: f64 = rng.sample(StandardNormal);
        let k = ((size as f64 * z.abs() / 2.0).round() as usize).clamp(2, size);
        let set = feasibility.sample_set(&mut rng, k);
        let best = set.iter().map(|&i| lls[i]).fold(f64::NEG_INFINITY, f64::max);
        let choice = WeightedIndex::new(set.iter().map(|&i| (lls[i] - best).exp())).expect("best plan has weight one");
        let chosen = set[choice.sample(&mut rng)];
        let feasible = set.iter().map(|&i| feasibility.universe[i].clone()).collect();
        records.push(ObservationRecord::new(feasibility.universe[chosen].clone(), feasible).expect("chosen drawn from set"));
    }
    Ok(records)
}

/// Builds a feasibility model from `universe_samples` oracle draws and
/// simulates `record_count` choices under it.
pub fn simulate_records(
    oracle: &Grammar,
    universe_samples: usize,
    record_count: usize,
    exponent: f64,
    seed: u64,
) -> Result<(Vec<ObservationRecord>, FeasibilityModel), SimulationError> {
    let model = FeasibilityModel::from_oracle(oracle, universe_samples, exponent, derive_seed(seed, 0))?;
    let records = simulate_records_in(oracle, &model, record_count, derive_seed(seed, 1))?;
    Ok((records, model))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameResult {
    pub pairs: usize,
    pub wins: usize,
    pub losses: usize,
    pub abstentions: usize,
    pub score: f64,
}

impl GameResult {
    pub fn from_points(points: &[i8]) -> Self {
        let wins = points.iter().filter(|&&p| p > 0).count();
        let losses = points.iter().filter(|&&p| p < 0).count();
        let pairs = points.len();
        let score = if pairs == 0 { 0.0 } else { (wins as f64 - losses as f64) / pairs as f64 };
        GameResult { pairs, wins, losses, abstentions: pairs - wins - losses, score }
    }
}

/// +1 if the subject agrees with the oracle, -1 if it disagrees, 0 if it
/// abstains.
pub fn game_points(oracle_answer: Preference, subject_answer: Preference) -> i8 {
    match subject_answer {
        Preference::Unknown => 0,
        a if a == oracle_answer => 1,
        _ => -1,
    }
}

fn oracle_answer(a: f64, b: f64) -> Preference {
    if a > b {
        Preference::First
    } else if b > a {
        Preference::Second
    } else {
        Preference::Unknown
    }
}

/// Asks oracle and subject about `pairs` random plan pairs drawn from the
/// feasibility model's power law. Pair `i` uses the stream
/// `derive_seed(seed, i)`; pairs the oracle cannot separate are redrawn.
pub fn play_game(
    oracle: &Grammar,
    subject: &PreferenceEnsemble,
    pairs: usize,
    feasibility: &FeasibilityModel,
    seed: u64,
) -> Result<GameResult, SimulationError> {
    let universe = &feasibility.universe;
    let truth = oracle_log_likelihoods(oracle, universe)?;
    let parsers: Vec<Parser> = subject.models.iter().map(Parser::new).collect();
    let learned: Vec<Vec<Option<f64>>> =
        universe.par_iter().map(|p| parsers.iter().map(|m| m.log_likelihood(p)).collect()).collect();
    let dist = feasibility.index_distribution();

    let points: Vec<i8> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            for _ in 0..MAX_PAIR_ATTEMPTS {
                let a = dist.sample(&mut rng);
                let b = dist.sample(&mut rng);
                if a == b {
                    continue;
                }
                let answer = oracle_answer(truth[a], truth[b]);
                if answer == Preference::Unknown {
                    continue;
                }
                let said = vote(learned[a].iter().copied().zip(learned[b].iter().copied()));
                return game_points(answer, said);
            }
            0
        })
        .collect();
    Ok(GameResult::from_points(&points))
}

/// Learns from records with no rescaling: every chosen plan counts once in a
/// single cluster.
pub fn learn_baseline(records: &[ObservationRecord], sh: &ShConfig, em: &EmConfig, seed: u64) -> Result<PreferenceEnsemble, LearnError> {
    let mut cluster = Cluster::default();
    for r in records {
        *cluster.weights.entry(r.chosen.clone()).or_insert(0.0) += 1.0;
    }
    PreferenceEnsemble::from_clusters(&[cluster], sh, em, seed)
}

/// Sizes and settings shared by the experiment runners.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub sh: ShConfig,
    pub em: EmConfig,
    /// Training plans per task.
    pub train_per_task: usize,
    /// KL samples per task and model.
    pub kl_per_task: usize,
    /// Observation records per task.
    pub records_per_task: usize,
    /// Universe samples per task.
    pub universe_per_task: usize,
    /// Game pairs per task.
    pub pairs_per_task: usize,
    pub epsilon: f64,
    pub exponent: f64,
    pub recursive: bool,
    pub recursive_fraction: f64,
    pub min_alternatives: usize,
    pub max_alternatives: usize,
    pub max_leaf_alternatives: usize,
    pub primitives: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sh: ShConfig::default(),
            em: EmConfig::default(),
            train_per_task: 10,
            kl_per_task: 100,
            records_per_task: 50,
            universe_per_task: 100,
            pairs_per_task: 100,
            epsilon: rescale::DEFAULT_EPSILON,
            exponent: 1.0,
            recursive: false,
            recursive_fraction: 0.1,
            min_alternatives: 1,
            max_alternatives: 3,
            max_leaf_alternatives: 1,
            primitives: None,
        }
    }
}

impl ExperimentConfig {
    pub fn oracle_spec(&self, n: usize, seed: u64) -> OracleSpec {
        OracleSpec {
            n,
            recursive: self.recursive,
            recursive_fraction: self.recursive_fraction,
            primitives: self.primitives,
            min_alternatives: self.min_alternatives,
            max_alternatives: self.max_alternatives,
            max_leaf_alternatives: self.max_leaf_alternatives,
            seed,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Kl(#[from] KlError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningOutcome {
    pub kl_before_em: f64,
    pub kl_after_em: f64,
    pub conciseness: f64,
    pub em_iterations: usize,
    pub log_likelihoods: Vec<f64>,
}

/// SH + EM on plans sampled from `oracle`; KL is measured before and after
/// EM with the same sampling seed.
pub fn learning_trial(oracle: &Grammar, config: &ExperimentConfig, seed: u64) -> Result<LearningOutcome, ExperimentError> {
    let t = oracle.tasks.len();
    let plans: Vec<WeightedPlan> = Sampler::new(oracle)
        .map_err(SampleError::from)?
        .sample_many(config.train_per_task * t, derive_seed(seed, 1), DEFAULT_MAX_DEPTH)?
        .into_iter()
        .map(WeightedPlan::unit)
        .collect();
    let sh = ShConfig { seed: derive_seed(seed, 2), ..config.sh.clone() };
    let em = EmConfig { seed: derive_seed(seed, 3), ..config.em.clone() };
    let initial = hypothesize(&plans, &sh).map_err(LearnError::from)?;
    let (learned, report) = crate::em::em_fit(&initial, &plans, &em).map_err(LearnError::from)?;
    let kl_seed = derive_seed(seed, 4);
    let samples = config.kl_per_task * t;
    let before = estimate_kl(oracle, &initial, samples, kl_seed)?;
    let after = estimate_kl(oracle, &learned, samples, kl_seed)?;
    Ok(LearningOutcome {
        kl_before_em: before.kl,
        kl_after_em: after.kl,
        conciseness: conciseness_ratio(oracle, &learned),
        em_iterations: report.iterations,
        log_likelihoods: report.log_likelihoods,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameOutcome {
    pub rescaled: GameResult,
    pub baseline: GameResult,
    pub clusters: usize,
}

/// Simulated records from `oracle`, then the rescaled ensemble and the
/// single-cluster baseline play the same game.
pub fn game_trial(oracle: &Grammar, config: &ExperimentConfig, seed: u64) -> Result<GameOutcome, ExperimentError> {
    game_trial_sized(oracle, config, oracle.tasks.len(), seed)
}

/// [`game_trial`] with the size factor `t` given explicitly instead of
/// taken from the oracle's task count.
pub fn game_trial_sized(oracle: &Grammar, config: &ExperimentConfig, t: usize, seed: u64) -> Result<GameOutcome, ExperimentError> {
    let (records, feasibility) = simulate_records(
        oracle,
        config.universe_per_task * t,
        config.records_per_task * t,
        config.exponent,
        derive_seed(seed, 5),
    )?;
    let ens_config = rescale::EnsembleConfig {
        sh: config.sh.clone(),
        em: config.em.clone(),
        epsilon: config.epsilon,
        seed: derive_seed(seed, 6),
    };
    let rescaled = PreferenceEnsemble::learn(&records, &ens_config)?;
    let baseline = learn_baseline(&records, &config.sh, &config.em, derive_seed(seed, 6))?;
    let pairs = config.pairs_per_task * t;
    let game_seed = derive_seed(seed, 7);
    Ok(GameOutcome {
        rescaled: play_game(oracle, &rescaled, pairs, &feasibility, game_seed)?,
        baseline: play_game(oracle, &baseline, pairs, &feasibility, game_seed)?,
        clusters: rescaled.models.len(),
    })
}

/// One row of the experiment CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub n: usize,
    pub trial: usize,
    pub kl_before_em: f64,
    pub kl_after_em: f64,
    pub conciseness: f64,
    pub score_rescaled: f64,
    pub score_baseline: f64,
}

pub const CSV_HEADER: &str = "n,trial,kl_before_em,kl_after_em,conciseness,score_rescaled,score_baseline";

impl TrialRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            self.n, self.trial, self.kl_before_em, self.kl_after_em, self.conciseness, self.score_rescaled, self.score_baseline
        )
    }

    pub fn from_csv(line: &str) -> Option<TrialRow> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        Some(TrialRow {
            n: f[0].parse().ok()?,
            trial: f[1].parse().ok()?,
            kl_before_em: f[2].parse().ok()?,
            kl_after_em: f[3].parse().ok()?,
            conciseness: f[4].parse().ok()?,
            score_rescaled: f[5].parse().ok()?,
            score_baseline: f[6].parse().ok()?,
        })
    }
}

/// Full trial on a fresh random oracle: learning metrics and both game
/// scores. Failed measurements are reported as NaN.
pub fn run_trial(n: usize, trial: usize, config: &ExperimentConfig, seed: u64) -> Result<TrialRow, ExperimentError> {
    let trial_seed = derive_seed(seed, trial as u64);
    let oracle = gen_oracle(&config.oracle_spec(n, derive_seed(trial_seed, 0)))?;
    let learning = learning_trial(&oracle, config, trial_seed);
    let game = game_trial(&oracle, config, trial_seed);
    let (kl_before_em, kl_after_em, conciseness) = match learning {
        Ok(l) => (l.kl_before_em, l.kl_after_em, l.conciseness),
        Err(ExperimentError::Kl(_)) => (f64::NAN, f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };
    let (score_rescaled, score_baseline) = match game {
        Ok(g) => (g.rescaled.score, g.baseline.score),
        Err(ExperimentError::Simulation(SimulationError::SmallUniverse(_))) => (f64::NAN, f64::NAN),
        Err(e) => return Err(e),
    };
    Ok(TrialRow { n, trial, kl_before_em, kl_after_em, conciseness, score_rescaled, score_baseline })
}

/// Per-`n` means of every CSV column, ignoring NaN.
pub fn summarize(rows: &[TrialRow]) -> String {
    let mut by_n: BTreeMap<usize, Vec<&TrialRow>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r.n).or_default().push(r);
    }
    let mean = |xs: Vec<f64>| {
        let xs: Vec<f64> = xs.into_iter().filter(|x| !x.is_nan()).collect();
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let mut out = String::new();
    let _ = writeln!(out, "{:>4} {:>6} {:>12} {:>12} {:>11} {:>14} {:>14}", "n", "trials", "kl_before_em", "kl_after_em", "conciseness", "score_rescaled", "score_baseline");
    for (n, rs) in by_n {
        let _ = writeln!(
            out,
            "{:>4} {:>6} {:>12.4} {:>12.4} {:>11.4} {:>14.4} {:>14.4}",
            n,
            rs.len(),
            mean(rs.iter().map(|r| r.kl_before_em).collect()),
            mean(rs.iter().map(|r| r.kl_after_em).collect()),
            mean(rs.iter().map(|r| r.conciseness).collect()),
            mean(rs.iter().map(|r| r.score_rescaled).collect()),
            mean(rs.iter().map(|r| r.score_baseline).collect()),
        );
    }
    out
}
