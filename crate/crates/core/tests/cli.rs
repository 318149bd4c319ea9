use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn choimle(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_choimle"))
        .args(args)
        .current_dir(dir)
        .env_remove("CHOIMLE_SEED")
        .output()
        .expect("spawn choimle")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn truth_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = choimle(dir.path(), &["truth"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["dim_in"], 2);
    assert_eq!(v["dim_out"], 4);
    let s00 = v["mat"][0][0][0].as_f64().unwrap();
    assert!((s00 - 4.0 / 6.0).abs() < 1e-15);

    let o = choimle(dir.path(), &["truth", "--format", "csv", "-o", "truth.csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.len() == 8));
    for r in &rows {
        for x in r {
            let sixths = x * 6.0;
            assert!((sixths - sixths.round()).abs() < 1e-12, "{x}");
        }
    }
}

#[test]
fn bad_format_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = choimle(dir.path(), &["truth", "--format", "xml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("xml"));
}

#[test]
fn gen_data_line_count_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let o = choimle(
            dir.path(),
            &["gen-data", "--samples", "10000", "--seed", "1", "-o", name],
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = fs::read(dir.path().join("b.jsonl")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 10_000);

    let o = choimle(dir.path(), &["gen-data", "--samples", "5", "--seed", "1", "--header"]);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 6);
    assert_eq!(text.lines().next().unwrap(), r#"{"k":5,"seed":1}"#);
    // records do not depend on how many follow them
    let first: Vec<_> = String::from_utf8(b)
        .unwrap()
        .lines()
        .take(5)
        .map(String::from)
        .collect();
    let short: Vec<_> = text.lines().skip(1).map(String::from).collect();
    assert_eq!(first, short);
}

#[test]
fn gen_data_rejects_zero_samples() {
    let dir = tempfile::tempdir().unwrap();
    let o = choimle(dir.path(), &["gen-data", "--samples", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_data_csv_has_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = choimle(dir.path(), &["gen-data", "--samples", "20", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "theta,phi,alpha,beta,gamma,delta,a,b");
    assert_eq!(lines.count(), 20);
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run_env = |seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_choimle"))
            .args(["gen-data", "--samples", "10"])
            .env("CHOIMLE_SEED", seed)
            .current_dir(dir.path())
            .output()
            .unwrap()
    };
    let via_env = run_env("77");
    let via_flag = choimle(dir.path(), &["gen-data", "--samples", "10", "--seed", "77"]);
    assert_eq!(via_env.stdout, via_flag.stdout);
    assert_ne!(run_env("78").stdout, via_flag.stdout);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.conf"), "# defaults\nsamples = 12\nseed=5\n").unwrap();
    let o = choimle(dir.path(), &["--config", "run.conf", "gen-data"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 12);
    let explicit = choimle(dir.path(), &["gen-data", "--samples", "12", "--seed", "5"]);
    assert_eq!(o.stdout, explicit.stdout);

    let o = choimle(dir.path(), &["--config", "run.conf", "gen-data", "--samples", "3"]);
    assert_eq!(stdout(&o).lines().count(), 3);

    fs::write(dir.path().join("bad.conf"), "sampels = 12\n").unwrap();
    let o = choimle(dir.path(), &["--config", "bad.conf", "gen-data"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("sampels"));
}

#[test]
fn estimate_empty_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let o = choimle(dir.path(), &["estimate", "empty.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("empty"));
}

#[test]
fn estimate_reports_line_of_bad_record() {
    let dir = tempfile::tempdir().unwrap();
    let good = choimle(dir.path(), &["gen-data", "--samples", "3"]);
    let mut text = stdout(&good);
    text.push_str(r#"{"theta":0.1,"phi":0.0,"alpha":0.0,"beta":0.0,"gamma":0.0,"delta":0.0,"a":2,"b":1}"#);
    text.push('\n');
    fs::write(dir.path().join("bad.jsonl"), text).unwrap();
    let o = choimle(dir.path(), &["estimate", "bad.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("line 4"), "{msg}");
}

#[test]
fn estimate_budget_exhaustion_warns() {
    let dir = tempfile::tempdir().unwrap();
    choimle(
        dir.path(),
        &["gen-data", "--samples", "200", "--seed", "3", "-o", "d.jsonl"],
    );
    choimle(dir.path(), &["truth", "-o", "truth.json"]);
    let o = choimle(
        dir.path(),
        &[
            "estimate",
            "d.jsonl",
            "--max-evals",
            "65",
            "--truth",
            "truth.json",
            "-o",
            "est.json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("did not converge"));
    let summary = stdout(&o);
    assert!(summary.contains("evaluations=65"), "{summary}");
    assert!(summary.contains("error_vs_truth="));

    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("est.json")).unwrap()).unwrap();
    assert_eq!(v["diagnostics"]["evaluations"], 65);
    assert_eq!(v["diagnostics"]["converged"], false);
    assert_eq!(v["mat"].as_array().unwrap().len(), 8);
}

#[test]
fn estimate_rejects_too_small_budget() {
    let dir = tempfile::tempdir().unwrap();
    choimle(dir.path(), &["gen-data", "--samples", "10", "-o", "d.jsonl"]);
    let o = choimle(dir.path(), &["estimate", "d.jsonl", "--max-evals", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_passes_and_detects_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = choimle(dir.path(), &["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));

    let o = choimle(dir.path(), &["verify", "--samples", "200", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn scaling_single_trial_warns() {
    let dir = tempfile::tempdir().unwrap();
    let o = choimle(
        dir.path(),
        &[
            "scaling",
            "--grid",
            "40,80",
            "--trials",
            "1",
            "--max-evals",
            "400",
            "-o",
            "out",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("trial"));
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let trials = fs::read_to_string(dir.path().join("out/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 3);
}
