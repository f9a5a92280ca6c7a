//! End-to-end CLI contract tests: artifacts, exit codes, reproducibility.

use std::path::Path;
use std::process::Command;

fn amsizer() -> Command {
    Command::new(env!("CARGO_BIN_EXE_amsizer"))
}

#[test]
fn analyze_writes_hierarchy_and_text() {
    let dir = tempfile::tempdir().unwrap();
    let out = amsizer()
        .args([
            "analyze",
            "--netlist",
            "builtin:ota",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["hierarchy.json", "hierarchy.txt", "graph.json"] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    let hierarchy: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("hierarchy.json")).unwrap())
            .unwrap();
    assert_eq!(hierarchy["modules"].as_array().unwrap().len(), 4);
    assert_eq!(hierarchy["stages"].as_array().unwrap().len(), 2);
}

#[test]
fn analyze_rejects_subckt_with_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let netlist = dir.path().join("bad.sp");
    std::fs::write(&netlist, ".subckt amp in out\nR1 in out 1k\n.ends\n").unwrap();
    let out = amsizer()
        .args([
            "analyze",
            "--netlist",
            netlist.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("subcircuit"));
}

#[test]
fn analyze_accepts_empty_netlist() {
    let dir = tempfile::tempdir().unwrap();
    let netlist = dir.path().join("empty.sp");
    std::fs::write(&netlist, "").unwrap();
    let out = amsizer()
        .args([
            "analyze",
            "--netlist",
            netlist.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn understand_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let outdir = dir.path().to_str().unwrap();
    // analyze first
    assert!(amsizer()
        .args(["analyze", "--netlist", "builtin:ota", "--out", outdir])
        .status()
        .unwrap()
        .success());
    let hierarchy = dir.path().join("hierarchy.json");

    // converged -> exit 0
    let ok = amsizer()
        .args([
            "understand",
            "--hierarchy",
            hierarchy.to_str().unwrap(),
            "--advisor",
            "builtin:ota",
            "--out",
            outdir,
        ])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    for file in ["checklist.json", "tying.json", "transcript.json"] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }

    // missing stub fixture -> exit 1 with a message
    let missing = amsizer()
        .args([
            "understand",
            "--hierarchy",
            hierarchy.to_str().unwrap(),
            "--advisor",
            "stub:/nonexistent/fixture.json",
            "--out",
            outdir,
        ])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(!missing.stderr.is_empty());

    // advisor that never reaches the threshold -> exit 2; --best-effort -> 0
    let weak_fixture = dir.path().join("weak.json");
    std::fs::write(
        &weak_fixture,
        serde_json::json!({
            "version": 1,
            "entries": [
                {"match": {"purpose": "hypothesize"},
                 "response": {"device_roles": {"M1": {"role": "input pair transistor",
                                                        "confidence": 0.2}}}},
                {"match": {"purpose": "refine"}, "response": {}}
            ]
        })
        .to_string(),
    )
    .unwrap();
    let unconverged = amsizer()
        .args([
            "understand",
            "--hierarchy",
            hierarchy.to_str().unwrap(),
            "--advisor",
            &format!("stub:{}", weak_fixture.display()),
            "--out",
            outdir,
        ])
        .output()
        .unwrap();
    assert_eq!(unconverged.status.code(), Some(2));
    let best_effort = amsizer()
        .args([
            "understand",
            "--hierarchy",
            hierarchy.to_str().unwrap(),
            "--advisor",
            &format!("stub:{}", weak_fixture.display()),
            "--best-effort",
            "--out",
            outdir,
        ])
        .output()
        .unwrap();
    assert_eq!(best_effort.status.code(), Some(0));
}

fn run_optimize(dir: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec![
        "optimize",
        "--netlist",
        "builtin:ota",
        "--evaluator",
        "mock:ota",
        "--advisor",
        "builtin:ota",
        "--seed",
        "1,2",
        "--out",
    ];
    let out = dir.to_str().unwrap();
    args.push(out);
    args.extend_from_slice(extra);
    amsizer().args(&args).output().unwrap()
}

#[test]
fn optimize_writes_reports_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_optimize(dir.path(), &["--plot"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "aggregate.json",
        "plot.svg",
        "tying.json",
        "hierarchy.json",
        "seed_1/report.json",
        "seed_1/history.csv",
        "seed_1/meta.json",
        "seed_2/report.json",
    ] {
        assert!(dir.path().join(file).exists(), "missing {file}");
    }
    // The SVG references every seed's curve.
    let svg = std::fs::read_to_string(dir.path().join("plot.svg")).unwrap();
    assert!(svg.contains("seed 1") && svg.contains("seed 2"));
    // stdout carries the aggregate table
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("samples-to-feas"));
}

#[test]
fn optimize_same_seed_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_optimize(a.path(), &[]).status.success());
    assert!(run_optimize(b.path(), &[]).status.success());
    for file in ["seed_1/report.json", "seed_1/history.csv", "aggregate.json"] {
        let ra = std::fs::read(a.path().join(file)).unwrap();
        let rb = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(ra, rb, "{file} differs between identical runs");
    }
}

#[test]
fn optimize_single_objective_mode_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_optimize(dir.path(), &["--mode", "single:Gain"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("seed_1/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["mode"], "single-objective");
    assert_eq!(report["status"], "completed");
}

#[test]
fn optimize_with_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"
netlist = "builtin:sacmp"
evaluator = "mock:sacmp"
advisor = "builtin:sacmp"
seeds = [7]
out = "{}"

[optimizer]
n_iter = 10
candidates = 300
"#,
            dir.path().join("run").display()
        ),
    )
    .unwrap();
    let out = amsizer()
        .args(["optimize", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run/seed_7/report.json").exists());
}

#[test]
fn optimize_rejects_bad_config_before_any_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let out = amsizer()
        .args([
            "optimize",
            "--netlist",
            "builtin:ota",
            "--evaluator",
            "mock:nonexistent",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("aggregate.json").exists());
}

#[test]
fn report_reaggregates_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_optimize(dir.path(), &[]).status.success());
    let out = amsizer()
        .args(["report", "--run", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("feasible 2/2"), "stdout: {stdout}");
}
