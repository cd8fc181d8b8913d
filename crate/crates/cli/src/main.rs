use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use phtn_core::em::{EmConfig, EmError};
use phtn_core::eval::{
    self, estimate_kl, gen_oracle, gen_oracle_with_choice, play_game, run_trial, simulate_records, summarize,
    ExperimentConfig, FeasibilityModel, KlError, OracleSpec, TrialRow, CSV_HEADER,
};
use phtn_core::grammar::{Grammar, Plan, Sampler, WeightedPlan, DEFAULT_MAX_DEPTH};
use phtn_core::io::{self, FORMAT_VERSION};
use phtn_core::parser::Parser as ChartParser;
use phtn_core::rescale::{cluster_records, learn_weighted, merge_clusters, Preference, PreferenceEnsemble, DEFAULT_EPSILON};
use phtn_core::rng::derive_seed;
use phtn_core::structure::ShConfig;

const MANIFEST: &str = "manifest.txt";

/// Learn probabilistic hierarchical task networks from plan traces.
#[derive(Debug, Parser)]
#[command(name = "phtn", version, about)]
struct Cli {
    /// Seed for every random choice. Required by randomized subcommands.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap. With 1, all reductions run serially.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// File format version to read and write.
    #[arg(long, global = true, default_value_t = FORMAT_VERSION)]
    format_version: u32,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random oracle grammar.
    GenOracle(GenOracleArgs),
    /// Sample a plan corpus or observation records from a grammar.
    Sample(SampleArgs),
    /// Learn a grammar from a plan corpus (structure hypothesis, then EM).
    Learn(LearnArgs),
    /// Cluster observation records and learn one grammar per cluster.
    RescaleLearn(RescaleLearnArgs),
    /// Print the most probable parse tree of each plan.
    Parse(ParseArgs),
    /// Estimate the KL divergence of a learned grammar from an oracle.
    Kl(KlArgs),
    /// Play the preference game against an oracle.
    Game(GameArgs),
    /// Ask an ensemble which of two plans it prefers.
    Query(QueryArgs),
    /// Aggregate experiment CSVs into a table and optional SVG chart.
    Report(ReportArgs),
    /// Run full trials on random oracles and write a CSV.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Args)]
struct ShArgs {
    /// Minimum mean repetition length, relative to the mean sequence length.
    #[arg(long, default_value_t = ShConfig::default().min_rec_len_factor)]
    sh_min_rec_len_factor: f64,
    /// Minimum repetition frequency per weighted sequence.
    #[arg(long, default_value_t = ShConfig::default().min_rec_freq)]
    sh_min_rec_freq: f64,
}

impl ShArgs {
    fn config(&self) -> ShConfig {
        ShConfig {
            min_rec_len_factor: self.sh_min_rec_len_factor,
            min_rec_freq: self.sh_min_rec_freq,
            ..ShConfig::default()
        }
    }

    fn describe(&self, out: &mut Vec<String>) {
        let c = self.config();
        out.push(format!("sh.min_rec_len: {:?}", c.min_rec_len));
        out.push(format!("sh.min_rec_len_factor: {:?}", c.min_rec_len_factor));
        out.push(format!("sh.min_rec_freq: {:?}", c.min_rec_freq));
    }
}

#[derive(Debug, Clone, Args)]
struct EmArgs {
    /// Relative log-likelihood improvement that counts as converged.
    #[arg(long, default_value_t = EmConfig::default().tol)]
    em_tol: f64,
    #[arg(long, default_value_t = EmConfig::default().max_iters)]
    em_max_iters: usize,
    /// Schemas whose final probability is below this are dropped.
    #[arg(long, default_value_t = EmConfig::default().prune_eps)]
    em_prune_eps: f64,
    /// EM runs; the first keeps the initial probabilities.
    #[arg(long, default_value_t = EmConfig::default().restarts)]
    em_restarts: usize,
}

impl EmArgs {
    fn config(&self) -> EmConfig {
        EmConfig {
            tol: self.em_tol,
            max_iters: self.em_max_iters,
            prune_eps: self.em_prune_eps,
            restarts: self.em_restarts,
            seed: 0,
        }
    }

    fn describe(&self, out: &mut Vec<String>) {
        out.push(format!("em.tol: {:?}", self.em_tol));
        out.push(format!("em.max_iters: {}", self.em_max_iters));
        out.push(format!("em.prune_eps: {:?}", self.em_prune_eps));
        out.push(format!("em.restarts: {}", self.em_restarts));
    }
}

#[derive(Debug, Clone, Args)]
struct OracleArgs {
    /// Number of tasks.
    #[arg(long, default_value_t = 10)]
    tasks: usize,
    /// Add recursive schemas.
    #[arg(long)]
    recursive: bool,
    /// Share of recursive schemas when --recursive is set.
    #[arg(long, default_value_t = 0.1)]
    recursive_fraction: f64,
    #[arg(long, default_value_t = 1)]
    min_alternatives: usize,
    #[arg(long, default_value_t = 3)]
    max_alternatives: usize,
    #[arg(long, default_value_t = 1)]
    max_leaf_alternatives: usize,
    /// Primitive alphabet size; by default every leaf gets its own action.
    #[arg(long)]
    primitives: Option<usize>,
}

impl OracleArgs {
    fn spec(&self, seed: u64) -> OracleSpec {
        OracleSpec {
            n: self.tasks,
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

#[derive(Debug, Args)]
struct GenOracleArgs {
    #[command(flatten)]
    oracle: OracleArgs,
    /// Redraw until the oracle derives at least two distinct plans.
    #[arg(long)]
    require_choice: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(short, long)]
    grammar: PathBuf,
    /// Number of plans to sample.
    #[arg(long, conflicts_with = "records")]
    count: Option<usize>,
    /// Number of observation records to simulate instead of plans.
    #[arg(long)]
    records: Option<usize>,
    /// Oracle samples that make up the plan universe for records.
    #[arg(long, default_value_t = 1000)]
    universe_samples: usize,
    /// Power-law exponent of feasibility over the universe.
    #[arg(long, default_value_t = 1.0)]
    exponent: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct LearnArgs {
    #[arg(short, long)]
    corpus: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Where to write the per-iteration log-likelihood CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    sh: ShArgs,
    #[command(flatten)]
    em: EmArgs,
}

#[derive(Debug, Args)]
struct RescaleLearnArgs {
    #[arg(short, long)]
    records: PathBuf,
    /// Directory for cluster grammars and the manifest; created if missing.
    #[arg(short, long)]
    output: PathBuf,
    /// Weight of feasible plans that were never chosen.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[command(flatten)]
    sh: ShArgs,
    #[command(flatten)]
    em: EmArgs,
}

#[derive(Debug, Args)]
struct ParseArgs {
    #[arg(short, long)]
    grammar: PathBuf,
    /// A plan as space-separated actions.
    #[arg(long, required_unless_present = "corpus")]
    plan: Option<String>,
    /// Parse every plan of a corpus instead.
    #[arg(long, conflicts_with = "plan")]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KlArgs {
    #[arg(long)]
    oracle: PathBuf,
    #[arg(long)]
    learned: PathBuf,
    /// Samples drawn from each grammar.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

#[derive(Debug, Args)]
struct GameArgs {
    #[arg(long)]
    oracle: PathBuf,
    /// Ensemble directories or single grammar files; each plays separately.
    #[arg(long, required = true, num_args = 1..)]
    subject: Vec<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 1000)]
    universe_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    exponent: f64,
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// Ensemble directory or single grammar file.
    #[arg(long)]
    ensemble: PathBuf,
    #[arg(long)]
    p: String,
    #[arg(long)]
    q: String,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Experiment CSV files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Also draw the per-n means as an SVG chart.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Comma-separated task counts.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 10)]
    train_per_task: usize,
    #[arg(long, default_value_t = 100)]
    kl_per_task: usize,
    #[arg(long, default_value_t = 50)]
    records_per_task: usize,
    #[arg(long, default_value_t = 100)]
    universe_per_task: usize,
    #[arg(long, default_value_t = 100)]
    pairs_per_task: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    exponent: f64,
    #[arg(long)]
    recursive: bool,
    #[arg(long, default_value_t = 0.1)]
    recursive_fraction: f64,
    #[command(flatten)]
    sh: ShArgs,
    #[command(flatten)]
    em: EmArgs,
    #[arg(short, long)]
    output: PathBuf,
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let numerical = error.chain().any(|e| {
            matches!(e.downcast_ref::<EmError>(), Some(EmError::NonMonotone { .. }))
                || matches!(e.downcast_ref::<KlError>(), Some(KlError::EmptyIntersection { .. }))
        });
        Failure { code: if numerical { 3 } else { 2 }, error }
    }
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.format_version != FORMAT_VERSION {
        return Err(usage(anyhow!("unsupported format version {} (only {FORMAT_VERSION})", cli.format_version)));
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage(anyhow!("--threads must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| usage(e.into()))?;
    }
    let seed = || cli.seed.ok_or_else(|| usage(anyhow!("this subcommand needs --seed")));
    match &cli.command {
        Command::GenOracle(a) => {
            let seed = seed()?;
            let mut header = base_header("gen-oracle", seed);
            header.push(format!("tasks: {}", a.oracle.tasks));
            header.push(format!("recursive: {}", a.oracle.recursive));
            let spec = a.oracle.spec(seed);
            let g = if a.require_choice { gen_oracle_with_choice(&spec) } else { gen_oracle(&spec) }.map_err(|e| usage(e.into()))?;
            write(&a.output, &io::write_grammar_with_comments(&g, &header))?;
        }
        Command::Sample(a) => cmd_sample(a, seed()?)?,
        Command::Learn(a) => cmd_learn(a, seed()?)?,
        Command::RescaleLearn(a) => cmd_rescale_learn(a, seed()?)?,
        Command::Parse(a) => cmd_parse(a)?,
        Command::Kl(a) => {
            let seed = seed()?;
            let oracle = read_grammar(&a.oracle)?;
            let learned = read_grammar(&a.learned)?;
            let est = estimate_kl(&oracle, &learned, a.samples, seed).context("estimating KL")?;
            println!("kl {:?}", est.kl);
            println!("overlap {:?}", est.overlap);
        }
        Command::Game(a) => cmd_game(a, seed()?)?,
        Command::Query(a) => {
            let ens = read_ensemble(&a.ensemble)?;
            let p = parse_plan(&a.p)?;
            let q = parse_plan(&a.q)?;
            let answer = match ens.prefer(&p, &q) {
                Preference::First => "p",
                Preference::Second => "q",
                Preference::Unknown => "unknown",
            };
            println!("{answer}");
        }
        Command::Report(a) => cmd_report(a)?,
        Command::Experiment(a) => cmd_experiment(a, seed()?)?,
    }
    Ok(())
}

fn base_header(command: &str, seed: u64) -> Vec<String> {
    vec![
        format!("phtn {} {}", env!("CARGO_PKG_VERSION"), command),
        format!("seed: {seed}"),
    ]
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    Ok(io::write_file(path, text).map_err(anyhow::Error::from)?)
}

fn read_grammar(path: &Path) -> Result<Grammar, Failure> {
    Ok(io::read_grammar_file(path).map_err(anyhow::Error::from)?)
}

fn parse_plan(text: &str) -> Result<Plan, Failure> {
    Plan::parse(text).map_err(|e| usage(anyhow!("bad plan {text:?}: {e}")))
}

fn cmd_sample(a: &SampleArgs, seed: u64) -> Result<(), Failure> {
    let g = read_grammar(&a.grammar)?;
    let mut header = base_header("sample", seed);
    header.push(format!("grammar: {}", a.grammar.display()));
    match (a.count, a.records) {
        (Some(count), None) => {
            header.push(format!("count: {count}"));
            let sampler = Sampler::new(&g).map_err(anyhow::Error::from)?;
            let plans = sampler.sample_many(count, seed, DEFAULT_MAX_DEPTH).map_err(anyhow::Error::from)?;
            let plans: Vec<WeightedPlan> = plans.into_iter().map(WeightedPlan::unit).collect();
            write(&a.output, &io::write_corpus_with_comments(&plans, &header))
        }
        (None, Some(records)) => {
            header.push(format!("records: {records}"));
            header.push(format!("universe_samples: {}", a.universe_samples));
            header.push(format!("exponent: {:?}", a.exponent));
            let (records, _) =
                simulate_records(&g, a.universe_samples, records, a.exponent, seed).map_err(anyhow::Error::from)?;
            write(&a.output, &io::write_records_with_comments(&records, &header))
        }
        _ => Err(usage(anyhow!("give exactly one of --count or --records"))),
    }
}

fn cmd_learn(a: &LearnArgs, seed: u64) -> Result<(), Failure> {
    let corpus = io::read_corpus_file(&a.corpus).map_err(anyhow::Error::from)?;
    if corpus.plans.is_empty() {
        return Err(anyhow!("{}: corpus has no plans", a.corpus.display()).into());
    }
    let (g, report) =
        learn_weighted(&corpus.plans, &a.sh.config(), &a.em.config(), seed).context("learning from corpus")?;
    let mut header = base_header("learn", seed);
    header.push(format!("corpus: {}", a.corpus.display()));
    a.sh.describe(&mut header);
    a.em.describe(&mut header);
    header.push(format!("em.iterations: {}", report.iterations));
    header.push(format!("em.converged: {}", report.converged));
    header.push(format!("log_likelihood: {:?}", report.final_log_likelihood()));
    write(&a.output, &io::write_grammar_with_comments(&g, &header))?;
    if let Some(log) = &a.log {
        write(log, &report.to_csv())?;
    }
    Ok(())
}

fn cmd_rescale_learn(a: &RescaleLearnArgs, seed: u64) -> Result<(), Failure> {
    let records = io::read_records_file(&a.records).map_err(anyhow::Error::from)?;
    if records.is_empty() {
        return Err(anyhow!("{}: no observation records", a.records.display()).into());
    }
    let clusters = merge_clusters(cluster_records(&records, a.epsilon));
    let ens = PreferenceEnsemble::from_clusters(&clusters, &a.sh.config(), &a.em.config(), seed)
        .context("learning cluster grammars")?;
    std::fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let mut header = base_header("rescale-learn", seed);
    header.push(format!("records: {}", a.records.display()));
    header.push(format!("epsilon: {:?}", a.epsilon));
    a.sh.describe(&mut header);
    a.em.describe(&mut header);
    let mut manifest = String::new();
    let _ = writeln!(manifest, "{}", io::FORMAT_HEADER);
    for line in &header {
        let _ = writeln!(manifest, "# {line}");
    }
    for (i, (g, c)) in ens.models.iter().zip(&clusters).enumerate() {
        let name = format!("cluster-{i}.phtn");
        let comments = [header.clone(), vec![format!("cluster: {i}"), format!("plans: {}", c.len())]].concat();
        write(&a.output.join(&name), &io::write_grammar_with_comments(g, &comments))?;
        let _ = writeln!(manifest, "{name}");
    }
    write(&a.output.join(MANIFEST), &manifest)
}

/// A directory with a manifest, or a single grammar file.
fn read_ensemble(path: &Path) -> Result<PreferenceEnsemble, Failure> {
    if !path.is_dir() {
        return Ok(PreferenceEnsemble { models: vec![read_grammar(path)?] });
    }
    let manifest = path.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let mut models = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        models.push(read_grammar(&path.join(line))?);
    }
    if models.is_empty() {
        return Err(anyhow!("{}: manifest lists no grammars", manifest.display()).into());
    }
    Ok(PreferenceEnsemble { models })
}

fn cmd_parse(a: &ParseArgs) -> Result<(), Failure> {
    let g = read_grammar(&a.grammar)?;
    let plans = match (&a.plan, &a.corpus) {
        (Some(p), _) => vec![parse_plan(p)?],
        (None, Some(c)) => {
            io::read_corpus_file(c).map_err(anyhow::Error::from)?.plans.into_iter().map(|w| w.plan).collect()
        }
        (None, None) => return Err(usage(anyhow!("give --plan or --corpus"))),
    };
    let parser = ChartParser::new(&g);
    let mut failed = Vec::new();
    for plan in &plans {
        match parser.parse(plan) {
            Some(tree) => {
                print!("{}", tree.to_text());
                println!("probability {:?}", tree.probability());
            }
            None => {
                println!("unparsable {plan}");
                failed.push(plan.to_string());
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow!("{} plan(s) have no parse: {}", failed.len(), failed.join("; ")).into())
    }
}

fn cmd_game(a: &GameArgs, seed: u64) -> Result<(), Failure> {
    let oracle = read_grammar(&a.oracle)?;
    let feasibility = FeasibilityModel::from_oracle(&oracle, a.universe_samples, a.exponent, derive_seed(seed, 0))
        .map_err(anyhow::Error::from)?;
    println!("subject,pairs,wins,losses,abstentions,score");
    for path in &a.subject {
        let ens = read_ensemble(path)?;
        let r = play_game(&oracle, &ens, a.pairs, &feasibility, derive_seed(seed, 1)).map_err(anyhow::Error::from)?;
        println!("{},{},{},{},{},{:?}", path.display(), r.pairs, r.wins, r.losses, r.abstentions, r.score);
    }
    Ok(())
}

fn read_rows(paths: &[PathBuf]) -> Result<Vec<TrialRow>, Failure> {
    let mut rows = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') || line.trim() == CSV_HEADER {
                continue;
            }
            let row = TrialRow::from_csv(line)
                .ok_or_else(|| anyhow!("{}:{}:1: malformed experiment row", path.display(), i + 1))?;
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(anyhow!("no experiment rows in the inputs").into());
    }
    Ok(rows)
}

fn cmd_report(a: &ReportArgs) -> Result<(), Failure> {
    let rows = read_rows(&a.inputs)?;
    print!("{}", summarize(&rows));
    if let Some(svg) = &a.svg {
        write(svg, &chart(&rows))?;
    }
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let xs: Vec<f64> = xs.filter(|x| !x.is_nan()).collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Line chart of the per-n means of every metric.
fn chart(rows: &[TrialRow]) -> String {
    type Metric = (&'static str, &'static str, fn(&TrialRow) -> f64);
    let metrics: [Metric; 5] = [
        ("kl_before_em", "#d62728", |r| r.kl_before_em),
        ("kl_after_em", "#1f77b4", |r| r.kl_after_em),
        ("conciseness", "#2ca02c", |r| r.conciseness),
        ("score_rescaled", "#9467bd", |r| r.score_rescaled),
        ("score_baseline", "#8c564b", |r| r.score_baseline),
    ];
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let series: Vec<Vec<(usize, f64)>> = metrics
        .iter()
        .map(|(_, _, f)| {
            sizes.iter().filter_map(|&n| mean(rows.iter().filter(|r| r.n == n).map(f)).map(|m| (n, m))).collect()
        })
        .collect();
    let all = series.iter().flatten().map(|p| p.1);
    let lo = all.clone().fold(0.0f64, f64::min);
    let hi = all.fold(1.0f64, f64::max);
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let (nmin, nmax) = (sizes[0] as f64, *sizes.last().unwrap() as f64);
    let x = |n: usize| if nmax > nmin { pad + (n as f64 - nmin) / (nmax - nmin) * (w - 2.0 * pad) } else { w / 2.0 };
    let y = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{pad} {pad} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = h - pad,
        r = w - pad
    );
    for &n in &sizes {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{n}</text>"#, x(n), h - pad + 15.0);
    }
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, pad - 5.0, y(v) + 4.0);
    }
    for (i, ((name, color, _), pts)) in metrics.iter().zip(&series).enumerate() {
        let path: Vec<String> = pts.iter().map(|&(n, v)| format!("{:.1},{:.1}", x(n), y(v))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, path.join(" "));
        let ly = pad + 14.0 * i as f64;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{name}</text>"#, w - pad - 90.0);
    }
    out.push_str("</svg>\n");
    out
}

fn cmd_experiment(a: &ExperimentArgs, seed: u64) -> Result<(), Failure> {
    if a.sizes.is_empty() || a.trials == 0 {
        return Err(usage(anyhow!("need at least one size and one trial")));
    }
    let config = ExperimentConfig {
        sh: a.sh.config(),
        em: a.em.config(),
        train_per_task: a.train_per_task,
        kl_per_task: a.kl_per_task,
        records_per_task: a.records_per_task,
        universe_per_task: a.universe_per_task,
        pairs_per_task: a.pairs_per_task,
        epsilon: a.epsilon,
        exponent: a.exponent,
        recursive: a.recursive,
        recursive_fraction: a.recursive_fraction,
        ..ExperimentConfig::default()
    };
    let jobs: Vec<(usize, usize)> = a.sizes.iter().flat_map(|&n| (0..a.trials).map(move |t| (n, t))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, t)| run_trial(n, t, &config, derive_seed(seed, n as u64)))
        .collect::<Result<Vec<_>, eval::ExperimentError>>()
        .context("running trials")?;
    let mut header = base_header("experiment", seed);
    header.push(format!("sizes: {:?}", a.sizes));
    header.push(format!("trials: {}", a.trials));
    header.push(format!(
        "per_task: train {} kl {} records {} universe {} pairs {}",
        a.train_per_task, a.kl_per_task, a.records_per_task, a.universe_per_task, a.pairs_per_task
    ));
    header.push(format!("epsilon: {:?}", a.epsilon));
    header.push(format!("exponent: {:?}", a.exponent));
    header.push(format!("recursive: {} ({:?})", a.recursive, a.recursive_fraction));
    a.sh.describe(&mut header);
    a.em.describe(&mut header);
    let mut out = String::new();
    for line in &header {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "{CSV_HEADER}");
    for r in &rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    write(&a.output, &out)?;
    let missing = rows.iter().filter(|r| r.kl_after_em.is_nan()).count();
    if missing > 0 {
        eprintln!("warning: {missing} trial(s) had no KL estimate (disjoint sampled supports)");
    }
    Ok(())
}
