use std::path::Path;
use std::process::{Command, Output};

fn ofl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ofl"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"
seed = 1

[dataset]
source = "synthetic"
generator = "linear-regression"
dim = 3
heterogeneity = 0.5
clients = 5
steps = 40

[model]
family = "linear"

[method]
variant = "ofediq"
eta = 0.1
period = 2
p = 0.5
quantize = true
levels = 3
blocks = 2

[output]
stem = "iq"
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn help_works_for_every_subcommand() {
    for sub in ["run", "optimize", "bounds", "quantcheck", "compare"] {
        let o = ofl(&[sub, "--help"]);
        assert!(o.status.success(), "{sub}");
        assert!(stdout(&o).contains("Usage"));
    }
}

#[test]
fn run_without_config_is_a_usage_error() {
    assert_eq!(ofl(&["run"]).status.code(), Some(2));
}

#[test]
fn run_writes_metrics_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "iq.toml", CONFIG);
    let out_dir = dir.path().join("out");
    let o = ofl(&[
        "run",
        "--config",
        &cfg,
        "--out-dir",
        out_dir.to_str().unwrap(),
        "-T",
        "30",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out_dir.join("iq.csv")).unwrap();
    assert!(csv.starts_with("t,cum_loss,metric,cum_bits,participants\n"));
    assert_eq!(csv.lines().count(), 31);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("iq.json")).unwrap()).unwrap();
    assert_eq!(meta["summary"]["steps"], 30);
    assert_eq!(meta["seed"], 1);
}

#[test]
fn quantize_without_levels_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", &CONFIG.replace("levels = 3\n", ""));
    let o = ofl(&[
        "run",
        "--config",
        &cfg,
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("iq.csv").exists());
}

#[test]
fn optimize_reports_the_reference_plan() {
    let o = ofl(&["optimize", "--gamma", "0.1", "--D", "34826", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["levels"], 17);
    assert_eq!(v["blocks"], 1134);
    assert!((v["p"].as_f64().unwrap() - 0.5151).abs() < 1e-4);
}

#[test]
fn bounds_for_partial_averaging() {
    let o = ofl(&[
        "bounds", "--method", "ofedavg", "--p", "0.1", "--D", "100", "--K", "10", "--json",
    ]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["alpha_table1"].as_f64().unwrap() - 20.0).abs() < 1e-12);
    assert!((v["comm_cost"]["ccr"].as_f64().unwrap() - 90.0).abs() < 1e-9);
}

#[test]
fn bounds_rejects_half_a_quantizer() {
    let o = ofl(&[
        "bounds", "--method", "ofediq", "--p", "0.5", "--s", "3", "--D", "10", "--K", "4",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn quantcheck_exit_codes() {
    let ok = ofl(&[
        "quantcheck",
        "--s",
        "1",
        "--b",
        "1",
        "--D",
        "2",
        "--vector",
        "3,4",
        "--trials",
        "20000",
    ]);
    assert!(ok.status.success());
    assert!(stdout(&ok).contains("PASS"));
    // a slack well below the true error must be reported as a violation
    let strict = ofl(&[
        "quantcheck",
        "--s",
        "1",
        "--b",
        "1",
        "--D",
        "2",
        "--vector",
        "3,4",
        "--trials",
        "20000",
        "--slack",
        "0.1",
    ]);
    assert_eq!(strict.status.code(), Some(3));
    let bad = ofl(&["quantcheck", "--s", "0", "--b", "1", "--D", "2"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn compare_writes_seed_averaged_table() {
    let dir = tempfile::tempdir().unwrap();
    let iq = write_config(dir.path(), "iq.toml", CONFIG);
    let avg = CONFIG
        .replace("variant = \"ofediq\"", "variant = \"ofedavg\"")
        .replace("period = 2\n", "")
        .replace("quantize = true\nlevels = 3\nblocks = 2\n", "");
    let avg = write_config(dir.path(), "avg.toml", &avg);
    let out_dir = dir.path().join("cmp");
    let o = ofl(&[
        "compare",
        "--config",
        &iq,
        "--config",
        &avg,
        "--replicates",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out_dir.join("comparison.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("method,t,cum_loss,metric,cum_bits,participants,ccr")
    );
    assert_eq!(lines.count(), 80);
}
