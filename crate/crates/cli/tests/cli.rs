use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prefixhh"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn prefixhh")
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let text = format!(
        "seed = 3\nrounds = 4\ndimension_limit = 1000000\noutput_dir = \"out\"\n{extra}\n[budget]\nepsilon_agg = 1.0\ndelta = 1e-6\n[synthetic]\nn_devices = 1000\nvocab_size = 100\n"
    );
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn smoke_run_is_fast_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let start = Instant::now();
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs_f64() < 10.0);
    let out_dir = dir.path().join("out");
    let results = String::from_utf8(read(&out_dir, "results.csv")).unwrap();
    assert!(results.starts_with("rank,word,true_freq,est_freq,window_marginal_W50,is_false_positive"));
    let rounds = String::from_utf8(read(&out_dir, "rounds.csv")).unwrap();
    assert!(rounds.starts_with("round,prefix_count,segment_length,tau_final,kept,domain_size"));
    let summary = String::from_utf8(read(&out_dir, "summary.txt")).unwrap();
    for key in ["discovered_count", "fp_ratio", "weight_ratio", "utility_loss", "epsilon_local", "achieved_epsilon_agg"] {
        assert!(summary.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key} missing");
    }
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    // A large local epsilon so the run actually discovers words.
    let cfg = write_config(dir.path(), "epsilon_local = 6.0");
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "4", "4"].iter().enumerate() {
        let od = dir.path().join(format!("o{i}"));
        let out = bin()
            .env("PREFIXHH_THREADS", threads)
            .args(["run", "--config", cfg.to_str().unwrap(), "--output-dir", od.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(["results.csv", "rounds.csv", "summary.txt"].map(|f| read(&od, f)));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[1], outputs[2]);
    let summary = String::from_utf8(outputs[0][2].clone()).unwrap();
    assert!(!summary.contains("discovered_count = 0\n"), "{summary}");
}

#[test]
fn missing_dataset_is_a_usage_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.toml");
    std::fs::write(
        &p,
        "dataset = \"missing.tsv\"\nrounds = 2\ndimension_limit = 1000\n[budget]\nepsilon_agg = 1.0\ndelta = 1e-6\n",
    )
    .unwrap();
    let out = run(&["run", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.tsv"));
}

#[test]
fn bad_thread_setting_is_a_usage_error() {
    let out = bin().env("PREFIXHH_THREADS", "zero").args(["accountant", "--eps-agg", "1", "--delta", "1e-6", "--rounds", "1", "--devices", "100000"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn eps_l(stdout: &[u8]) -> f64 {
    let text = String::from_utf8_lossy(stdout);
    text.lines()
        .find_map(|l| l.strip_prefix("epsilon_local = "))
        .expect("epsilon_local line")
        .parse()
        .unwrap()
}

#[test]
fn accountant_prints_reference_and_is_monotone() {
    let args = ["accountant", "--eps-agg", "1", "--delta", "1e-6", "--devices", "1600000", "--rounds"];
    let four = run(&[&args[..], &["4"]].concat());
    assert!(four.status.success());
    assert!(eps_l(&four.stdout) > 0.0);
    assert!(String::from_utf8_lossy(&four.stdout).contains("reference (numerical bound) epsilon_local = 7.39"));
    let one = eps_l(&run(&[&args[..], &["1"]].concat()).stdout);
    let six = eps_l(&run(&[&args[..], &["6"]].concat()).stdout);
    assert!(one > six);
    let again = run(&[&args[..], &["4"]].concat());
    assert_eq!(four.stdout, again.stdout);
}

#[test]
fn infeasible_budget_exits_3() {
    let out = run(&["accountant", "--eps-agg", "1e-6", "--delta", "1e-6", "--rounds", "50", "--devices", "100"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.tsv");
    let b = dir.path().join("b.tsv");
    for p in [&a, &b] {
        let out = run(&["gen", "--devices", "5000", "--vocab", "500", "--zipf", "1.1", "--seed", "7", "--out", p.to_str().unwrap()]);
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let stdout = run(&["gen", "--devices", "5000", "--vocab", "500", "--zipf", "1.1", "--seed", "7"]).stdout;
    assert_eq!(stdout, std::fs::read(&a).unwrap());
}

#[test]
fn baselines_run_and_reject_unknown_methods() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let c = cfg.to_str().unwrap();
    let out = run(&["baseline", "--config", c, "--method", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    for method in ["triehh", "triehhpp", "central-laplace", "central-gaussian"] {
        let od = dir.path().join(method);
        let mut args = vec!["baseline", "--config", c, "--method", method, "--output-dir", od.to_str().unwrap()];
        if method == "triehh" {
            args.extend(["--theta", "10", "--rate", "0.0079", "--rounds", "12"]);
        }
        let first = run(&args);
        assert!(first.status.success(), "{method}: {}", String::from_utf8_lossy(&first.stderr));
        let a = read(&od, "results.csv");
        let summary = String::from_utf8(read(&od, "summary.txt")).unwrap();
        assert!(summary.contains(&format!("method = {method}")));
        assert!(run(&args).status.success());
        assert_eq!(a, read(&od, "results.csv"));
    }
    // TrieHH without a rate is a config error.
    let out = run(&["baseline", "--config", c, "--method", "triehh"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tsv_dataset_with_deny_list() {
    let dir = tempfile::tempdir().unwrap();
    let mut tsv = String::new();
    for i in 0..3000 {
        let w = ["the", "and", "cat"][i % 3];
        tsv.push_str(&format!("u{i}\t{w}\t1\n"));
    }
    std::fs::write(dir.path().join("d.tsv"), tsv).unwrap();
    std::fs::write(dir.path().join("deny.txt"), "the\n").unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "dataset = \"d.tsv\"\ndeny_list = \"deny.txt\"\ncodebook_mode = \"fixed_width\"\nepsilon_local = 8.0\nrounds = 4\ndimension_limit = 100000\n[budget]\nepsilon_agg = 1.0\ndelta = 1e-6\n",
    )
    .unwrap();
    let out = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = String::from_utf8(read(&dir.path().join("out"), "results.csv")).unwrap();
    assert!(results.contains(",the,") && results.contains("deny_list"), "{results}");
    assert!(results.contains(",and,") && results.contains(",cat,"), "{results}");
}
