//! Learning preferences from choices made under feasibility constraints.
//!
//! Records that share (nested) feasible sets are pooled into clusters whose
//! weights are comparable. Overlapping clusters are then chained together by
//! averaging the weight ratios of their shared plans, and one grammar is
//! learned per remaining cluster. Queries are answered by majority vote.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::em::{em_fit, EmConfig, EmReport};
use crate::grammar::{Grammar, Plan, WeightedPlan};
use crate::parser::Parser;
use crate::rng::derive_seed;
use crate::structure::{hypothesize, ShConfig};
use crate::LearnError;

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Tolerance on `O(a, c) = O(a, b) * O(b, c)` for [`reconstruct_prior`].
pub const ODDS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("record has no feasible plans")]
    Empty,
    #[error("chosen plan is not among the feasible plans: {0}")]
    ChosenNotFeasible(Plan),
}

/// One observed choice: `chosen` was picked among `feasible`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationRecord {
    pub chosen: Plan,
    /// Distinct plans in first-seen order; includes `chosen`.
    pub feasible: Vec<Plan>,
}

impl ObservationRecord {
    pub fn new(chosen: Plan, feasible: Vec<Plan>) -> Result<Self, RecordError> {
        if feasible.is_empty() {
            return Err(RecordError::Empty);
        }
        let mut seen = BTreeSet::new();
        let feasible: Vec<Plan> = feasible.into_iter().filter(|p| seen.insert(p.clone())).collect();
        if !seen.contains(&chosen) {
            return Err(RecordError::ChosenNotFeasible(chosen));
        }
        Ok(ObservationRecord { chosen, feasible })
    }

    /// The chosen plan plus alternatives; the chosen plan is added to the
    /// feasible set if it is missing.
    pub fn with_alternatives(chosen: Plan, alternatives: Vec<Plan>) -> Self {
        let mut feasible = vec![chosen.clone()];
        feasible.extend(alternatives);
        ObservationRecord::new(chosen, feasible).expect("chosen plan is feasible")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cluster {
    pub weights: BTreeMap<Plan, f64>,
}

impl Cluster {
    pub fn from_pairs<I: IntoIterator<Item = (Plan, f64)>>(pairs: I) -> Self {
        Cluster { weights: pairs.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn contains(&self, plan: &Plan) -> bool {
        self.weights.contains_key(plan)
    }

    pub fn weight(&self, plan: &Plan) -> Option<f64> {
        self.weights.get(plan).copied()
    }

    fn intersection_size(&self, other: &Cluster) -> usize {
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.weights.keys().filter(|p| large.contains(p)).count()
    }

    pub fn weighted_plans(&self) -> Vec<WeightedPlan> {
        self.weights.iter().map(|(p, &w)| WeightedPlan { plan: p.clone(), weight: w }).collect()
    }
}

/// Groups records whose feasible sets are nested within an existing cluster.
///
/// Each record joins the first cluster (in creation order) whose plan set
/// contains, or is contained in, its feasible set. New feasible plans enter
/// at weight `epsilon`; the chosen plan's weight goes up by one, or is set to
/// one if it still only carries `epsilon`.
pub fn cluster_records(records: &[ObservationRecord], epsilon: f64) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for r in records {
        let matched = clusters.iter().position(|c| {
            let subset = r.feasible.iter().all(|p| c.contains(p));
            let superset = c.weights.keys().all(|p| r.feasible.contains(p));
            subset || superset
        });
        match matched {
            Some(i) => {
                let c = &mut clusters[i];
                for p in &r.feasible {
                    c.weights.entry(p.clone()).or_insert(epsilon);
                }
                let w = c.weights.get_mut(&r.chosen).expect("chosen is feasible");
                if *w >= 1.0 {
                    *w += 1.0;
                } else {
                    *w = 1.0;
                }
            }
            None => {
                let mut c = Cluster::default();
                for p in &r.feasible {
                    c.weights.insert(p.clone(), epsilon);
                }
                c.weights.insert(r.chosen.clone(), 1.0);
                clusters.push(c);
            }
        }
    }
    clusters
}

/// Mean of `w_c(p) / w_d(p)` over plans shared by `c` and `d`.
pub fn scale_factor(c: &Cluster, d: &Cluster) -> Option<f64> {
    let ratios: Vec<f64> = c.weights.iter().filter_map(|(p, wc)| d.weight(p).map(|wd| wc / wd)).collect();
    (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
}

/// Merges intersecting clusters until all are pairwise disjoint.
///
/// Each round picks the intersecting pair with the largest intersection
/// (ties: earliest pair in creation order). The earlier cluster absorbs the
/// later one: shared plans keep the absorbing cluster's weights and the
/// others are rescaled by the average weight ratio on the shared plans.
pub fn merge_clusters(clusters: Vec<Cluster>) -> Vec<Cluster> {
    let mut clusters = clusters;
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let k = clusters[i].intersection_size(&clusters[j]);
                if k > 0 && best.is_none_or(|(_, _, b)| k > b) {
                    best = Some((i, j, k));
                }
            }
        }
        let Some((i, j, _)) = best else { return clusters };
        let d = clusters.remove(j);
        let c = &mut clusters[i];
        let scale = scale_factor(c, &d).expect("clusters intersect");
        for (p, w) in d.weights {
            c.weights.entry(p).or_insert(w * scale);
        }
    }
}

/// One grammar per final cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceEnsemble {
    pub models: Vec<Grammar>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preference {
    First,
    Second,
    Unknown,
}

impl Preference {
    pub fn flip(self) -> Self {
        match self {
            Preference::First => Preference::Second,
            Preference::Second => Preference::First,
            Preference::Unknown => Preference::Unknown,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub sh: ShConfig,
    pub em: EmConfig,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { sh: ShConfig::default(), em: EmConfig::default(), epsilon: DEFAULT_EPSILON, seed: 0 }
    }
}

/// SH followed by EM on one weighted corpus with the given seed.
pub fn learn_weighted(plans: &[WeightedPlan], sh: &ShConfig, em: &EmConfig, seed: u64) -> Result<(Grammar, EmReport), LearnError> {
    let sh = ShConfig { seed, ..sh.clone() };
    let em = EmConfig { seed: derive_seed(seed, 1), ..em.clone() };
    let initial = hypothesize(plans, &sh)?;
    Ok(em_fit(&initial, plans, &em)?)
}

impl PreferenceEnsemble {
    /// Learns one grammar for each already merged cluster. Cluster `i` uses
    /// the seed `derive_seed(seed, i)`.
    pub fn from_clusters(clusters: &[Cluster], sh: &ShConfig, em: &EmConfig, seed: u64) -> Result<Self, LearnError> {
        let models = clusters
            .par_iter()
            .enumerate()
            .map(|(i, c)| learn_weighted(&c.weighted_plans(), sh, em, derive_seed(seed, i as u64)).map(|(g, _)| g))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PreferenceEnsemble { models })
    }

    /// Clusters, merges and learns one grammar per final cluster.
    pub fn learn(records: &[ObservationRecord], config: &EnsembleConfig) -> Result<Self, LearnError> {
        let clusters = merge_clusters(cluster_records(records, config.epsilon));
        Self::from_clusters(&clusters, &config.sh, &config.em, config.seed)
    }

    /// Majority vote over models that can parse both plans and assign them
    /// different likelihoods.
    pub fn prefer(&self, p: &Plan, q: &Plan) -> Preference {
        vote(self.models.iter().map(|g| {
            let parser = Parser::new(g);
            (parser.log_likelihood(p), parser.log_likelihood(q))
        }))
    }
}

/// Majority vote from per-model log-likelihood pairs. A model abstains if it
/// cannot parse one of the plans or scores them equally.
pub fn vote<I: IntoIterator<Item = (Option<f64>, Option<f64>)>>(likelihoods: I) -> Preference {
    let mut votes_p = 0usize;
    let mut votes_q = 0usize;
    for pair in likelihoods {
        let (Some(lp), Some(lq)) = pair else { continue };
        if lp > lq {
            votes_p += 1;
        } else if lq > lp {
            votes_q += 1;
        }
    }
    match votes_p.cmp(&votes_q) {
        std::cmp::Ordering::Greater => Preference::First,
        std::cmp::Ordering::Less => Preference::Second,
        std::cmp::Ordering::Equal => Preference::Unknown,
    }
}

pub fn learn_ensemble(records: &[ObservationRecord], config: &EnsembleConfig) -> Result<PreferenceEnsemble, LearnError> {
    PreferenceEnsemble::learn(records, config)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OddsError {
    #[error("no odds given")]
    Empty,
    #[error("odds must be positive and finite: O({0}, {1}) = {2}")]
    BadValue(Plan, Plan, f64),
    #[error("odds missing for ({0}, {1})")]
    Missing(Plan, Plan),
    #[error("inconsistent odds through ({0}, {1}, {2})")]
    Inconsistent(Plan, Plan, Plan),
}

/// Recovers `P(φ) = 1 / (1 + Σ_{φ' ≠ φ} O(φ', φ))` from pairwise odds
/// `O(a, b) = P(a) / P(b)`. Either direction of each pair suffices; a missing
/// direction is taken as the reciprocal.
pub fn reconstruct_prior(odds: &BTreeMap<(Plan, Plan), f64>) -> Result<BTreeMap<Plan, f64>, OddsError> {
    let mut plans: BTreeSet<&Plan> = BTreeSet::new();
    for ((a, b), &o) in odds {
        if !(o > 0.0 && o.is_finite()) {
            return Err(OddsError::BadValue(a.clone(), b.clone(), o));
        }
        plans.insert(a);
        plans.insert(b);
    }
    if plans.is_empty() {
        return Err(OddsError::Empty);
    }
    let get = |a: &Plan, b: &Plan| -> Result<f64, OddsError> {
        if a == b {
            return Ok(1.0);
        }
        if let Some(&o) = odds.get(&(a.clone(), b.clone())) {
            return Ok(o);
        }
        odds.get(&(b.clone(), a.clone())).map(|o| 1.0 / o).ok_or_else(|| OddsError::Missing(a.clone(), b.clone()))
    };
    let plans: Vec<&Plan> = plans.into_iter().collect();
    for &a in &plans {
        for &b in &plans {
            for &c in &plans {
                let (ab, bc, ac) = (get(a, b)?, get(b, c)?, get(a, c)?);
                if (ac - ab * bc).abs() > ODDS_TOLERANCE * ac.max(1.0) {
                    return Err(OddsError::Inconsistent(a.clone(), b.clone(), c.clone()));
                }
            }
        }
    }
    let mut prior = BTreeMap::new();
    for &p in &plans {
        let mut denom = 1.0;
        for &q in &plans {
            if q != p {
                denom += get(q, p)?;
            }
        }
        prior.insert(p.clone(), 1.0 / denom);
    }
    Ok(prior)
}
