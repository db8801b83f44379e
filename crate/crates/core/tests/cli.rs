use std::path::Path;
use std::process::{Command, Output};

fn roep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roep")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let o = roep(&["gen", "--level", "L1-1-vis", "--n", "3", "--seed", "1", "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.is_object());
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(roep(&["gen", "--level", "L9", "--n", "1"]).status.code(), Some(1));
    assert_eq!(roep(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(roep(&["eval", "--ckpt", "/nonexistent/x.ckpt", "--level", "L1-1-vis"]).status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let o = roep(&["gradcheck", "--instances", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn oracle_check_passes() {
    let o = roep(&["oracle-check", "--n", "300"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

fn write_tiny_config(path: &Path) {
    let mut text = String::from("seed = 4\nd_v = 8\nd_m = 8\naction_hidden = 8\nmetrics_every = 50\nwindow = 50\nholdout_per_pair = 2\n");
    for (i, level) in ["L1-1-vis", "L2-2-vis", "L3-2-occ", "L4-overall"].iter().enumerate() {
        text += &format!("[stage.{}]\nlevel = {level}\nepisodes = 100\n", i + 1);
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn train_eval_matrix_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    write_tiny_config(&cfg);
    let run = dir.path().join("run");
    let o = roep(&["train", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "Model_L1.ckpt", "Model_L2.ckpt", "Model_L3.ckpt", "Final.ckpt", "run.cfg", "holdout.txt"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let ckpt = run.join("Final.ckpt");
    let eval = |filter: &str| {
        let o = roep(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--level", "L3-2-occ", "--n", "40", "--filter", filter]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_str::<serde_json::Value>(&stdout(&o)).unwrap()
    };
    let report = eval("holdout-only");
    let text = report.to_string();
    assert!(text.contains("accuracy") && text.contains("avg_steps"), "{text}");
    assert_eq!(eval("all"), eval("all"));

    let o = roep(&["matrix", "--dir", run.to_str().unwrap(), "--n", "20"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    for row in ["Model_L1", "Model_L2", "Model_L3", "Final"] {
        assert!(table.contains(row), "{table}");
    }
}
