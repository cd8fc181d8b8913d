use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn phtn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phtn")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn parse_prints_tree_and_probability() {
    let g = fixture("travel.phtn");
    let o = phtn(&["parse", "-g", s(&g), "--plan", "Buyticket Getin Getout"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("Travel 1 1-3\n"), "{out}");
    let p: f64 = out.lines().last().unwrap().strip_prefix("probability ").unwrap().parse().unwrap();
    assert!((p - 0.8).abs() < 1e-12);
}

#[test]
fn unparsable_plan_is_a_data_error() {
    let g = fixture("travel.phtn");
    let o = phtn(&["parse", "-g", s(&g), "--plan", "Getout Getin"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn learn_two_plan_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    std::fs::write(&corpus, "Buyticket Getin Getout\nBuyticket Getin Getout Getin Getout Getin Getout\n").unwrap();
    let out = dir.path().join("g.phtn");
    let o = phtn(&["--seed", "1", "learn", "-c", s(&corpus), "-o", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("# seed: 1\n"));
    assert!(text.contains("# em.tol: "));
    let p = phtn(&["parse", "-g", s(&out), "--corpus", s(&corpus)]);
    assert!(p.status.success());
    assert_eq!(stdout(&p).matches("probability").count(), 2);
}

#[test]
fn empty_corpus_fails() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    std::fs::write(&corpus, "# format: phtn/1\n").unwrap();
    let o = phtn(&["--seed", "1", "learn", "-c", s(&corpus), "-o", s(&dir.path().join("g"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn format_errors_carry_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.phtn");
    std::fs::write(&g, "tasks: T\nT -> a , 2.0\n").unwrap();
    let o = phtn(&["parse", "-g", s(&g), "--plan", "a"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("g.phtn:2:"), "{err}");
}

#[test]
fn kl_of_a_grammar_with_itself_is_small() {
    let g = fixture("logistics.phtn");
    let o = phtn(&["--seed", "3", "kl", "--oracle", s(&g), "--learned", s(&g), "--samples", "2000"]);
    assert!(o.status.success());
    let kl: f64 = stdout(&o).lines().next().unwrap().strip_prefix("kl ").unwrap().parse().unwrap();
    assert!((0.0..0.02).contains(&kl), "{kl}");
}

#[test]
fn usage_errors() {
    assert_eq!(phtn(&["learn", "--bogus"]).status.code(), Some(1));
    assert_eq!(phtn(&[]).status.code(), Some(1));
    let g = fixture("travel.phtn");
    // Randomized subcommands need a seed.
    assert_eq!(phtn(&["sample", "-g", s(&g), "--count", "3", "-o", "/dev/null"]).status.code(), Some(1));
    assert_eq!(phtn(&["--format-version", "2", "parse", "-g", s(&g), "--plan", "Getin"]).status.code(), Some(1));
    assert_eq!(phtn(&["--threads", "0", "parse", "-g", s(&g), "--plan", "Getin"]).status.code(), Some(1));
}

#[test]
fn help_succeeds_for_every_subcommand() {
    for sub in ["gen-oracle", "sample", "learn", "rescale-learn", "parse", "kl", "game", "query", "report", "experiment"] {
        let o = phtn(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("--seed"), "{sub}");
    }
    assert!(phtn(&["--version"]).status.success());
}

const RECORDS: &str = "\
chosen: Gobytrain
alt: Gobybike

chosen: Gobytrain
alt: Gobybike

chosen: Gobytrain
alt: Gobybike

chosen: Gobytrain
alt: Gobybike

chosen: Gobytrain
alt: Gobybike

chosen: Gobybike
alt: Gobytrain

chosen: Gobyplane
alt: Gobytrain

chosen: Gobyplane
alt: Gobytrain

chosen: Gobyplane
alt: Gobytrain

chosen: Gobytrain
alt: Gobyplane
";

#[test]
fn rescale_learn_orders_merged_preferences() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.txt");
    std::fs::write(&records, RECORDS).unwrap();
    let ens = dir.path().join("ens");
    let o = phtn(&["--seed", "5", "rescale-learn", "-r", s(&records), "-o", s(&ens)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(ens.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>(), ["cluster-0.phtn"]);
    let query = |p: &str, q: &str| stdout(&phtn(&["query", "--ensemble", s(&ens), "--p", p, "--q", q]));
    assert_eq!(query("Gobyplane", "Gobytrain"), "p\n");
    assert_eq!(query("Gobybike", "Gobytrain"), "q\n");
    assert_eq!(query("Gobyplane", "Gobybike"), "p\n");
}

#[test]
fn query_across_disjoint_clusters_is_unknown() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.txt");
    std::fs::write(&records, "chosen: a b\nalt: b a\n\nchosen: c d\nalt: d c\n").unwrap();
    let ens = dir.path().join("ens");
    assert!(phtn(&["--seed", "5", "rescale-learn", "-r", s(&records), "-o", s(&ens)]).status.success());
    let o = phtn(&["query", "--ensemble", s(&ens), "--p", "a b", "--q", "c d"]);
    assert_eq!(stdout(&o), "unknown\n");
    let o = phtn(&["query", "--ensemble", s(&ens), "--p", "a b", "--q", "b a"]);
    assert_eq!(stdout(&o), "p\n");
}

#[test]
fn game_against_the_oracle_itself() {
    let g = fixture("logistics.phtn");
    let o = phtn(&["--seed", "2", "game", "--oracle", s(&g), "--subject", s(&g), "--pairs", "200", "--universe-samples", "500"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let score: f64 = out.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(score, 1.0, "{out}");
}

#[test]
fn experiment_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("e.csv");
    let svg = dir.path().join("e.svg");
    let o = phtn(&["--seed", "9", "experiment", "--sizes", "6", "--trials", "3", "-o", s(&csv)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("6,")).count(), 3);
    let r = phtn(&["report", s(&csv), "--svg", s(&svg)]);
    assert!(r.status.success());
    assert!(stdout(&r).contains("kl_after_em"));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let g = fixture("gold_miner.phtn");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = phtn(&["--threads", "1", "--seed", "11", "sample", "-g", s(&g), "--records", "40", "--universe-samples", "200", "-o", s(&out)]);
        assert!(o.status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.txt"), run("b.txt"));
    let a = phtn(&["--threads", "1", "--seed", "11", "gen-oracle", "--tasks", "9", "-o", s(&dir.path().join("o1"))]);
    let b = phtn(&["--threads", "4", "--seed", "11", "gen-oracle", "--tasks", "9", "-o", s(&dir.path().join("o2"))]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(std::fs::read(dir.path().join("o1")).unwrap(), std::fs::read(dir.path().join("o2")).unwrap());
}
