use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn klsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_klsynth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn deceptive_against_beta_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let model = fixture("fork.json");
    let reference = fixture("fork_beta.json");
    let o = klsynth(&[
        "synth-deceptive",
        "--model",
        s(&model),
        "--ref",
        s(&reference),
        "--phi-agent",
        "F s3",
        "--nu-agent",
        "0.2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let want = 0.2 * 2f64.ln() + 0.8 * (0.8f64 / 0.9).ln();
    let sol = json(&out.join("solution.json"));
    let kl = sol["kl_value"].as_f64().unwrap();
    assert!((kl - want).abs() < 1e-6, "{kl}");
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn unreachable_task_exits_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let model = fixture("fork.json");
    let o = klsynth(&[
        "synth-deceptive",
        "--model",
        s(&model),
        "--ref",
        r#"{"policy":[{"state":"s0","actions":[["alpha",1.0]]}]}"#,
        "--phi-agent",
        "F s3",
        "--nu-agent",
        "0.1",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max achievable"));
    assert!(!out.exists());
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(klsynth(&["synth-deceptive"]).status.code(), Some(1));
    let model = fixture("fork.json");
    let o = klsynth(&["validate", "--model", s(&model), "--phi-agent", "F (s3"]);
    assert_eq!(o.status.code(), Some(1));
    let o = klsynth(&["validate", "--model", s(&model), "--phi-agent", "F nowhere"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn single_cell_gridworld() {
    let o = klsynth(&["gridworld", "--rows", "1", "--cols", "1"]);
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["states"].as_array().unwrap().len(), 1);
    assert_eq!(m["actions"].as_array().unwrap().len(), 4);
}

#[test]
fn experiment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let model_dir = dir.path().join("model");
    assert!(klsynth(&["random-mdp", "--out", s(&model_dir)])
        .status
        .success());
    let cfg = model_dir.join("experiment.json");
    let mut text = json(&cfg);
    text["batches"] = 5.into();
    text["paths_per_batch"] = 20.into();
    std::fs::write(&cfg, text.to_string()).unwrap();
    let csv: Vec<String> = ["a", "b"]
        .iter()
        .map(|n| {
            let out = dir.path().join(n);
            let o = klsynth(&["detect", "--config", s(&cfg), "--out", s(&out)]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            assert!(out.join("summary.json").exists());
            std::fs::read_to_string(out.join("experiment.csv")).unwrap()
        })
        .collect();
    assert_eq!(csv[0], csv[1]);
    assert_eq!(csv[0].lines().count(), 1 + 4 * 5);

    let out = dir.path().join("c");
    assert!(klsynth(&[
        "simulate",
        "--config",
        s(&cfg),
        "--seed",
        "8",
        "--out",
        s(&out)
    ])
    .status
    .success());
    assert_ne!(
        std::fs::read_to_string(out.join("experiment.csv")).unwrap(),
        csv[0]
    );
}

#[test]
fn zero_batches_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"model": {"random": {}}, "batches": 0}"#).unwrap();
    let out = dir.path().join("out");
    let o = klsynth(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("experiment.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn ccp_from_two_starts() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture("mixing.json");
    let agent = fixture("mixing_gamma.json");
    let mut finals = Vec::new();
    for start in ["mixing_init_alpha.json", "mixing_init_beta.json"] {
        let out = dir.path().join(start);
        let init = fixture(start);
        let o = klsynth(&[
            "synth-reference",
            "--model",
            s(&model),
            "--phi-agent",
            "F q1 | F q2",
            "--nu-agent",
            "1",
            "--method",
            "ccp",
            "--agent",
            s(&agent),
            "--init",
            s(&init),
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
        let last = trace
            .lines()
            .last()
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse::<f64>()
            .unwrap();
        finals.push(last);
        assert!(out.join("policy.json").exists());
    }
    assert!((finals[0] - 1.2982).abs() < 1e-3, "{finals:?}");
    assert!((finals[1] - 1.2241).abs() < 1e-3, "{finals:?}");
}

#[test]
fn ccp_needs_an_agent() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture("mixing.json");
    let out = dir.path().join("o");
    let o = klsynth(&[
        "synth-reference",
        "--model",
        s(&model),
        "--phi-agent",
        "F q1 | F q2",
        "--nu-agent",
        "1",
        "--method",
        "ccp",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn relaxation_report() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture("mixing.json");
    let out = dir.path().join("o");
    let o = klsynth(&[
        "synth-reference",
        "--model",
        s(&model),
        "--phi-agent",
        "F q1 | F q2",
        "--nu-agent",
        "1",
        "--method",
        "relax",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("report.json"));
    assert!((report["min_agent_prob"].as_f64().unwrap() - 0.3).abs() < 1e-6);
    assert!(
        report["best_response_kl"].as_f64().unwrap()
            >= report["bernoulli_bound"].as_f64().unwrap() - 1e-6
    );
}
