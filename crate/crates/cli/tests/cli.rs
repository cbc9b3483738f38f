use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn algopilot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_algopilot")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn corpus_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.txt"), dir.path().join("b.txt"));
    let stats = json(&algopilot(&["gen-corpus", "--count", "300", "--sizes", "6,8", "--seed", "4", "--out", path(&a)]));
    assert_eq!(stats["generated"], 300);
    json(&algopilot(&["gen-corpus", "--count", "300", "--sizes", "6,8", "--seed", "4", "--out", path(&b)]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let model = dir.path().join("m.tlm");
    let trained = json(&algopilot(&["train-tlm", "--corpus", path(&a), "--order", "6", "--out", path(&model)]));
    assert_eq!(trained["order"], 6);
    let eval = json(&algopilot(&["eval-tlm", "--model", path(&model), "--corpus", path(&a)]));
    let loss = eval["mean_loss"].as_f64().unwrap();
    assert!(loss > 0.0 && loss < 3.0, "{loss}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let code = |args: &[&str]| algopilot(args).status.code().unwrap();

    assert_eq!(code(&["gen-corpus", "--count", "5", "--sizes", "5", "--out", path(&out)]), 2);
    assert_eq!(code(&["train-agent", "--guided"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["eval-tlm", "--model", path(&dir.path().join("missing")), "--corpus", path(&out)]), 1);

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "len6 Compare 0 1 less\nlen6 Swap\n").unwrap();
    let failed = algopilot(&["train-tlm", "--corpus", path(&bad), "--out", path(&out)]);
    assert_eq!(failed.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&failed.stderr).contains(":2:"), "line number reported");
    assert_eq!(code(&["export-prompt", "--trajectory", path(&bad), "--out", path(&out)]), 3);

    let junk = dir.path().join("junk.tlm");
    std::fs::write(&junk, b"not a model").unwrap();
    assert_eq!(code(&["eval-tlm", "--model", path(&junk), "--corpus", path(&bad)]), 3);
}

#[test]
fn prompt_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("prompt.txt");
    json(&algopilot(&[
        "export-prompt",
        "--trajectory",
        path(&fixture("len8_example_trajectory.txt")),
        "--out",
        path(&out),
    ]));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(fixture("len8_example_prompt.txt")).unwrap());
}

#[test]
fn train_then_evaluate_agent() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.cfg");
    std::fs::write(
        &config,
        "# small smoke run\nagent.preset = desk\nagent.episodes = 30\nagent.layers = 1\nagent.dim = 8\nagent.heads = 2\nagent.ffn_dim = 16\nenv.sizes = 6\nseed = 3\n",
    )
    .unwrap();
    let run = |name: &str| {
        let metrics = dir.path().join(format!("{name}.ndjson"));
        let checkpoint = dir.path().join(format!("{name}.pol"));
        let summary = json(&algopilot(&[
            "train-agent",
            "--config",
            path(&config),
            "--metrics",
            path(&metrics),
            "--checkpoint",
            path(&checkpoint),
        ]));
        assert_eq!(summary["episodes"], 30);
        (std::fs::read(&metrics).unwrap(), checkpoint, metrics)
    };
    let (m1, checkpoint, metrics) = run("a");
    let (m2, _, _) = run("b");
    assert_eq!(m1, m2, "same config, same metrics");
    assert_eq!(String::from_utf8(m1).unwrap().lines().count(), 30);

    let eval = json(&algopilot(&["eval-agent", "--checkpoint", path(&checkpoint), "--sizes", "6", "--episodes", "5"]));
    assert_eq!(eval["sizes"][0]["n"], 6);
    assert!((eval["sizes"][0]["quicksort_expected_total"].as_f64().unwrap() - 27.45).abs() < 0.01);

    let series = json(&algopilot(&["analyze", "--metrics", path(&metrics), "--window", "10"]));
    assert_eq!(series["series"].as_array().unwrap().len(), 3);
}

#[test]
fn analyze_against_bubble_reference() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.txt");
    std::fs::write(&t, "len6 Compare 0 1 more Swap\n").unwrap();
    let report = json(&algopilot(&[
        "analyze",
        "--trajectory",
        path(&t),
        "--reference",
        "bubble",
        "--array",
        "2,1,3,4,5,6",
    ]));
    // the reference adds 14 more compares after the first swap
    assert_eq!(report["count"], 14);
    assert_eq!(report["extra"].as_array().unwrap().len(), 0);
}

#[test]
fn offline_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.txt");
    std::fs::write(&p, "prompt").unwrap();
    let out = json(&algopilot(&["synthesize", "--prompt", path(&p), "--offline"]));
    assert!(out["completion"].as_str().unwrap().contains("def "));
}
