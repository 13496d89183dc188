use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use protograph_cli::report_accuracies;

fn protograph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protograph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config_value(dir: &Path, key: &str) -> String {
    let text = fs::read_to_string(dir.join("run_config.txt")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing from run_config.txt"))
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("# comment\nout={}\nseed=4\nchains=3\nepisodes=7\n", path(&out))).unwrap();
    let o = protograph(&["eval", "--config", path(&cfg), "--chains", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(config_value(&out, "seed"), "4");
    assert_eq!(config_value(&out, "chains"), "2");
    assert_eq!(config_value(&out, "episodes"), "7");
    let text = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(text.starts_with("# data="));
    assert!(text.contains("\nsetting,N,K,L,M,epsilon0,alpha,beta,measure,episodes,accuracy,ci95,seed\n"));
    assert_eq!(report_accuracies(&out.join("eval.csv")).unwrap().len(), 1);
}

#[test]
fn file_based_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[&str]| {
        let o = protograph(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    run(&["synth", "--out", path(d), "--seed", "2", "--relations", "20", "--dim", "6"]);
    for f in ["instances.tsv", "registry.tsv", "embeddings.tsv"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let g = d.join("g");
    run(&["build-graph", "--out", path(&g), "--embeddings", path(&d.join("embeddings.tsv")), "--knn", "4"]);
    let (inst, reg, emb, edges) = (
        d.join("instances.tsv"),
        d.join("registry.tsv"),
        d.join("embeddings.tsv"),
        g.join("graph.tsv"),
    );
    let inputs = [
        "--data",
        path(&inst),
        "--registry",
        path(&reg),
        "--embeddings",
        path(&emb),
        "--graph",
        path(&edges),
    ];
    let t = d.join("t");
    let mut args = vec!["train", "--out", path(&t), "--episodes", "30", "--eval-every", "10", "--val-episodes", "5"];
    args.extend(inputs);
    run(&args);
    let log = fs::read_to_string(t.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 31);
    assert!(log.lines().nth(1).unwrap().ends_with(','), "wall_ms is blank without --wall-clock");

    let ckpt = t.join("checkpoint.txt");
    for (cmd, file) in [("eval", "eval.json"), ("zero-shot", "zero_shot.json"), ("sweep", "sweep.json")] {
        let mut args = vec![cmd, "--out", path(&t), "--checkpoint", path(&ckpt), "--episodes", "10", "--format", "json"];
        args.extend(inputs);
        run(&args);
        let json = fs::read_to_string(t.join(file)).unwrap();
        assert!(json.contains("\"reports\""), "{file}");
    }
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = protograph(&["grad-check", "--cases", "4", "--d", "2", "--out", path(dir.path())]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 5);
}

#[test]
fn exit_codes_distinguish_usage_from_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert_eq!(protograph(&[]).status.code(), Some(2));
    assert_eq!(protograph(&["eval", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(protograph(&["eval", "--help"]).status.code(), Some(0));
    assert_eq!(protograph(&["eval", "--out", out, "--chains", "many"]).status.code(), Some(1));
    assert_eq!(protograph(&["eval", "--out", out, "--n-way", "50"]).status.code(), Some(1));
    let missing = protograph(&["eval", "--out", out, "--checkpoint", "/nonexistent/ckpt"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "not a pair\n").unwrap();
    assert_eq!(protograph(&["eval", "--config", path(&bad_cfg)]).status.code(), Some(1));
}

#[test]
fn thread_count_does_not_change_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = protograph(&["eval", "--out", path(out), "--episodes", "30", "--threads", threads]);
        assert!(o.status.success());
    }
    assert_eq!(
        report_accuracies(&a.join("eval.csv")).unwrap(),
        report_accuracies(&b.join("eval.csv")).unwrap()
    );
}
