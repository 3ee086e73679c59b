use std::path::Path;
use std::process::{Command, Output};

fn ogl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ogl"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env("OGL_OUTPUT_DIR", cwd.join("runs"))
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstderr: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn preset_lists_and_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let list = ogl(&["preset"], dir.path());
    assert_ok(&list);
    assert!(stdout(&list).lines().any(|l| l == "mnist-er-6-p1"));
    let one = ogl(&["preset", "churn-luxembourg"], dir.path());
    assert_ok(&one);
    let v: serde_json::Value = serde_json::from_str(&stdout(&one)).unwrap();
    assert_eq!(v["name"], "churn-luxembourg");
}

#[test]
fn bad_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--preset", "nope"][..],
        &["run", "--preset", "synthetic-smoke", "--policy", "greedy"],
        &["run", "--preset", "synthetic-smoke", "--policy", "mtune:missing.bin"],
        &["report", "--in", "empty-dir-that-does-not-exist"],
        &["frobnicate"],
    ] {
        let o = ogl(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn run_writes_outputs_and_report_summarizes_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dp");
    let o = ogl(
        &["run", "--preset", "synthetic-smoke", "--policy", "dp", "--seed", "3", "--record-messages", "--out"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1), "--out needs a value");
    let o = ogl(
        &[
            "run",
            "--preset",
            "synthetic-smoke",
            "--policy",
            "dp",
            "--seed",
            "3",
            "--record-messages",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_ok(&o);
    for f in ["metrics.csv", "energy_events.csv", "messages.csv", "manifest.csv", "run.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let run: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["seed"], 3);
    assert_eq!(run["scheme"], "dp");

    let fed = ogl(&["run", "--preset", "synthetic-smoke", "--scheme", "fedavg", "--seed", "3"], dir.path());
    assert_ok(&fed);
    let fed_dir = dir.path().join("runs/synthetic-smoke/fedavg/seed-3");
    let fed_run: serde_json::Value = serde_json::from_slice(&std::fs::read(fed_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(fed_run["manifest_hash"], run["manifest_hash"], "baselines see the gossip partition");

    let report = ogl(&["report", "--in", dir.path().join("runs").to_str().unwrap()], dir.path());
    assert_ok(&report);
    let text = stdout(&report);
    assert!(text.starts_with("scheme,metric,n,mean,half_width,confidence"));
    assert!(text.lines().any(|l| l.starts_with("fedavg,mean_acc,1,")));
}

#[test]
fn corpus_train_inspect_and_run_with_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let corpus = p("corpus.csv");
    assert_ok(&ogl(
        &["corpus", "generate", "--preset", "synthetic-smoke", "--configs", "2", "--rollouts", "2", "--out", &corpus],
        dir.path(),
    ));
    let header = std::fs::read_to_string(&corpus).unwrap();
    assert!(header.starts_with("h,d,s,own_loss"));
    assert!(header.lines().count() > 100);

    let model = p("m.bin");
    let train = ogl(
        &[
            "mtune",
            "train",
            "--corpus",
            &corpus,
            "--out",
            &model,
            "--folds",
            "3",
            "--max-epochs",
            "30",
            "--report",
            &p("cv.json"),
        ],
        dir.path(),
    );
    assert_ok(&train);
    assert!(stdout(&train).contains("over 3 folds"));
    let cv: serde_json::Value = serde_json::from_slice(&std::fs::read(p("cv.json")).unwrap()).unwrap();
    assert_eq!(cv["fold_best_mse"].as_array().unwrap().len(), 3);

    let inspect = ogl(&["mtune", "inspect", "--model", &model], dir.path());
    assert_ok(&inspect);
    let text = stdout(&inspect);
    assert!(text.contains("layer 0: 10 -> 64") && text.contains("remaining_budget"));

    let run = ogl(&["run", "--preset", "synthetic-smoke", "--policy", &format!("mtune:{model}")], dir.path());
    assert_ok(&run);
    assert!(stdout(&run).contains(" ogl seed 1:"));
}

#[test]
fn suite_runs_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("suite.json");
    std::fs::write(
        &cfg,
        r#"{"preset": "synthetic-smoke", "schemes": ["dp", "random", "local-only"], "seeds": [1, 2], "threads": 2}"#,
    )
    .unwrap();
    let out = dir.path().join("suite");
    let o = ogl(&["suite", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], dir.path());
    assert_ok(&o);
    for label in ["dp", "random-gl", "local-only"] {
        for seed in [1, 2] {
            assert!(out.join(label).join(format!("seed-{seed}")).join("metrics.csv").is_file());
        }
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("random-gl,objective,2,")));
    let failures = std::fs::read_to_string(out.join("failures.csv")).unwrap();
    assert_eq!(failures.trim(), "scheme,seed,error");
}

#[test]
fn bad_suite_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("suite.json");
    std::fs::write(&cfg, r#"{"preset": "synthetic-smoke", "schemes": [], "seeds": [1]}"#).unwrap();
    let o = ogl(&["suite", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
