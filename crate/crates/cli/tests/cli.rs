use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn grnlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grnlab"))
        .args(args)
        .env_remove("GRNLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.json");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = grnlab(&["figure1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"version":1,"task":"linear_identity","arch":"v1","seed":1,"out_dir":"x","bogus":0}"#);
    assert_eq!(code(&grnlab(&["figure1", "--config", &cfg])), 2);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_grnlab"))
        .args(["verify", "grads"])
        .env("GRNLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn figure1_from_config_then_dump_weights() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"version":1,"task":"linear_random_map","arch":"v2","seed":4,"out_dir":{:?},
               "figure1":{{"d":6,"layers":3,"rank":1,"batch":8,"batches":12,"eval_examples":16}}}}"#,
            out.to_str().unwrap()
        ),
    );
    let o = grnlab(&["figure1", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 12);

    let ckpt = out.join("checkpoint.grnckpt");
    let csv_path = dir.path().join("w.csv");
    let o = grnlab(&["dump-weights", ckpt.to_str().unwrap(), "--out", csv_path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("block,role,column,count,median,p05,p95\n"));
    assert!(csv.contains("layer3,grn,"));
}

#[test]
fn flags_override_and_replay_matches() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = grnlab(&["figure1", "--seed", "9", "--arch", "resnet", "--out", out.to_str().unwrap(), "--task", "identity"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("metrics.jsonl")).unwrap()
    };
    // defaults are the full-size experiment; keep this test to equality
    assert_eq!(run("a"), run("b"));
}

#[test]
fn dump_weights_rejects_checkpoint_without_combinations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"version":1,"task":"linear_identity","arch":"resnet","seed":1,"out_dir":{:?},
               "figure1":{{"d":4,"layers":2,"rank":1,"batch":4,"batches":2,"eval_examples":4}}}}"#,
            out.to_str().unwrap()
        ),
    );
    assert_eq!(code(&grnlab(&["figure1", "--config", &cfg])), 0);
    let o = grnlab(&["dump-weights", out.join("checkpoint.grnckpt").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn theory_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = grnlab(&["theory-sweep", "--seed", "0", "--panel", "kappa", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 19);
    assert!(csv.starts_with("d,r_star,kappa,thr_v1,thr_v2,thr_v3,G1_lb,G2_lb,G3_lb\n"));
}

#[test]
fn verify_stein_reports_constant() {
    let dir = tempfile::tempdir().unwrap();
    let o = grnlab(&["verify", "stein", "--stein-samples", "200000", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["stein_constant"], "corrected");
    assert!(dir.path().join("verify_report.json").exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("selected Some(Corrected)"));
}

#[test]
fn lm_train_and_retrofit() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    fs::write(&corpus, "to be or not to be, that is the question. ".repeat(8)).unwrap();
    let base = dir.path().join("base");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"version":1,"task":"toy_lm","arch":"transformer","seed":2,"out_dir":{:?},
               "lm":{{"corpus":{:?},"d":8,"heads":2,"blocks":2,"seq_len":8,"batch":2,"steps":5,"eval_batches":1}}}}"#,
            base.to_str().unwrap(),
            corpus.to_str().unwrap()
        ),
    );
    let o = grnlab(&["train-lm", "--config", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let retro = dir.path().join("retro");
    let o = grnlab(&[
        "retrofit",
        "--config",
        &cfg,
        "--arch",
        "dca",
        "--baseline",
        base.join("checkpoint.grnckpt").to_str().unwrap(),
        "--out",
        retro.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let gap = (v["loss_before"].as_f64().unwrap() - v["loss_after"].as_f64().unwrap()).abs();
    assert!(gap <= 1e-6);

    let o = grnlab(&["train-lm", "--seed", "1", "--corpus", dir.path().join("none.txt").to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}
