use std::path::Path;
use std::process::{Command, Output};

fn pav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pav")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn help_lists_subcommands() {
    let out = pav(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["evolve", "build-sft", "build-dpo", "report", "dpo-loss", "make-negatives"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "sed = 3\n");
    let prompts = write(tmp.path(), "p.txt", "a cat\n");
    let out = pav(&["evolve", "--config", s(&cfg), "--prompts", s(&prompts), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_prompts_file_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pav(&["evolve", "--prompts", s(&tmp.path().join("nope.txt")), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn unreachable_backend_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "[retry]\nmax_attempts = 1\n[backends.operator]\nkind = \"http\"\nurl = \"http://127.0.0.1:9/v1/chat/completions\"\n",
    );
    let prompts = write(tmp.path(), "p.txt", "a cat\n");
    let out_dir = tmp.path().join("o");
    let out = pav(&["evolve", "--config", s(&cfg), "--prompts", s(&prompts), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
}

#[test]
fn batch_guards() {
    let tmp = tempfile::tempdir().unwrap();
    let prompts = write(tmp.path(), "p.txt", "a cat on a sofa\na boat at sea\n");
    let out_dir = tmp.path().join("o");
    let (p, o) = (s(&prompts), s(&out_dir));
    assert!(pav(&["evolve", "--prompts", p, "--out", o]).status.success());
    // existing batch without --resume
    assert_eq!(code(&pav(&["evolve", "--prompts", p, "--out", o])), 3);
    // changed config on resume
    let cfg = write(tmp.path(), "c.toml", "seed = 99\n");
    assert_eq!(code(&pav(&["evolve", "--config", s(&cfg), "--prompts", p, "--out", o, "--resume"])), 2);
    // changed prompts on resume
    let other = write(tmp.path(), "q.txt", "a dog\n");
    assert_eq!(code(&pav(&["evolve", "--prompts", s(&other), "--out", o, "--resume"])), 3);

    let report = pav(&["report", "--run", s(&out_dir.join("runs/run-0001"))]);
    assert!(report.status.success());
    let csv = String::from_utf8(report.stdout).unwrap();
    assert!(csv.starts_with("iteration,metric,mean\n1,VQ,"));
    assert_eq!(csv.lines().count(), 1 + 4 * 7);
}

#[test]
fn build_sft_on_empty_dir_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pav(&["build-sft", "--runs", s(tmp.path()), "--out", s(&tmp.path().join("sft.jsonl"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn dpo_loss_reports_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let fixtures = write(
        tmp.path(),
        "lp.jsonl",
        "{\"prompt\":\"a\",\"chosen_lp\":-3,\"rejected_lp\":-5,\"ref_chosen_lp\":-3,\"ref_rejected_lp\":-5}\n",
    );
    let summary = tmp.path().join("loss.json");
    let out = pav(&["dpo-loss", "--fixtures", s(&fixtures), "--out", s(&summary)]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(summary).unwrap()).unwrap();
    assert!((v["mean_loss"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(v["count"], 1);

    let bad = write(tmp.path(), "bad.jsonl", "not json\n");
    assert_eq!(code(&pav(&["dpo-loss", "--fixtures", s(&bad)])), 3);
}

#[test]
fn make_negatives_strategies() {
    let tmp = tempfile::tempdir().unwrap();
    let prompts = write(tmp.path(), "p.txt", "A cat sleeps on a sunny windowsill. Dust drifts in the light.\n");
    for strategy in ["fixed", "icl", "tuned_pair"] {
        let out_path = tmp.path().join(format!("{strategy}.jsonl"));
        let out = pav(&["make-negatives", "--prompts", s(&prompts), "--out", s(&out_path), "--strategy", strategy]);
        assert!(out.status.success(), "{strategy}: {}", String::from_utf8_lossy(&out.stderr));
        let line: serde_json::Value =
            serde_json::from_str(std::fs::read_to_string(&out_path).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(line["strategy"], strategy);
        assert!(line["negative"].as_str().unwrap().contains(','));
    }
}
