use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::io::Write;

const BIN: &str = env!("CARGO_BIN_EXE_segtune");

fn segtune(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn count_space_prints_breakdown() {
    let o = segtune(&["count-space"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("scheduler     1352736"));
    assert!(text.ends_with("total         8181347328\n"));
}

#[test]
fn exit_codes() {
    assert_eq!(segtune(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(segtune(&["sample", "--n", "x"]).status.code(), Some(1));
    assert_eq!(segtune(&["--help"]).status.code(), Some(0));
    assert_eq!(segtune(&["--version"]).status.code(), Some(0));
    let missing = segtune(&["tune", "--dataset", "polyp", "--budget-s", "10", "--checkpoint", "/nonexistent/ckpt.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

#[test]
fn sample_respects_seed_env() {
    let a = Command::new(BIN).args(["sample", "--n", "3"]).env("QTT_SEED", "5").output().unwrap();
    let b = segtune(&["sample", "--n", "3", "--seed", "5"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert_eq!(stdout(&a).lines().count(), 3);
    for line in stdout(&a).lines() {
        let c: segtune::Configuration = serde_json::from_str(line).unwrap();
        assert_eq!(c.canonical_json(), line);
    }
}

fn bench_fixture(dir: &Path) -> String {
    let d = dir.to_str().unwrap();
    assert!(segtune(&["gen-bench", "--tasks", "5", "--pairs", "6", "--seed", "2", "--out", d]).status.success());
    let ckpt = dir.join("ckpt.json");
    let curves = dir.join("curves.jsonl");
    let o = segtune(&[
        "meta-train", "--curves", curves.to_str().unwrap(), "--exclude", "polyp,lesion", "--steps", "10",
        "--out", ckpt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    ckpt.to_str().unwrap().to_string()
}

#[test]
fn subprocess_worker_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = bench_fixture(dir.path());
    let meta = dir.path().join("meta_features.json");
    let out = |f: &str| dir.path().join(f).to_str().unwrap().to_string();
    let worker_cmd = format!("{BIN} mock-worker --suite-seed 2");
    let common = ["tune", "--dataset", "lesion", "--budget-s", "25", "--checkpoint", &ckpt, "--meta-features", meta.to_str().unwrap()];
    let mut a: Vec<&str> = common.to_vec();
    let (oa, ob) = (out("a.json"), out("b.json"));
    a.extend(["--worker", "mock:2", "--out", &oa]);
    let mut b: Vec<&str> = common.to_vec();
    b.extend(["--worker", &worker_cmd, "--clock", "sim", "--out", &ob]);
    assert!(segtune(&a).status.success());
    let o = segtune(&b);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(oa).unwrap(), std::fs::read(ob).unwrap());
}

#[test]
fn bench_and_report() {
    let dir = tempfile::tempdir().unwrap();
    bench_fixture(dir.path());
    let curves = dir.path().join("curves.jsonl");
    let out = dir.path().join("bench");
    let o = segtune(&[
        "bench", "--datasets", "polyp,lesion", "--budgets", "10,20", "--seeds", "0,1", "--curves",
        curves.to_str().unwrap(), "--steps", "5", "--worker", "mock:2", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.starts_with("| Dataset | Zero-shot | 10 SEC | 20 SEC |\n"));
    assert_eq!(table.lines().count(), 4);
    assert_eq!(std::fs::read_dir(out.join("results")).unwrap().count(), 8);

    let r = segtune(&[
        "report", "--results", out.join("results").to_str().unwrap(), "--zero-shot",
        out.join("zero_shot.json").to_str().unwrap(), "--budgets", "10,20",
    ]);
    assert!(r.status.success());
    assert_eq!(stdout(&r), table);
}

#[test]
fn mock_worker_speaks_the_protocol() {
    let mut child = Command::new(BIN)
        .args(["mock-worker", "--suite-seed", "1"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let config = segtune::SearchSpace::standard().sample(0, 1).remove(0).canonical_json();
    let script = format!(
        "{{\"cmd\":\"init\",\"dataset_path\":\"polyp\",\"subsample_n\":100,\"seed\":0}}\n\
         {{\"cmd\":\"step\",\"config\":{config},\"epoch\":2,\"run_id\":\"r\"}}\n\
         {{\"cmd\":\"step\",\"config\":{config},\"epoch\":1,\"run_id\":\"r\"}}\n\
         not json\n\
         {{\"cmd\":\"zero_shot\"}}\n\
         {{\"cmd\":\"shutdown\"}}\n"
    );
    child.stdin.take().unwrap().write_all(script.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = stdout(&out).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let status: Vec<&str> = lines.iter().map(|v| v["status"].as_str().unwrap()).collect();
    assert_eq!(status, ["ok", "error", "ok", "error", "ok", "ok"]);
    assert!(lines[2]["val_iou"].as_f64().is_some());
    assert!(lines[2]["wall_clock_s"].as_f64().unwrap() > 0.0);
}
