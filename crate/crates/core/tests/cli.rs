use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_urbanprompt");

fn run(workdir: &Path, args: &[&str]) -> Output {
    let demo = concat!(env!("CARGO_MANIFEST_DIR"), "/../../demo/demo.toml");
    Command::new(BIN)
        .arg("--workdir")
        .arg(workdir)
        .args(["--config", demo])
        .args([
            "--set",
            "pretrain.epochs=3",
            "--set",
            "pretrain.transr.epochs=10",
            "--set",
            "prompt.epochs=10",
        ])
        .args(args)
        .env_remove("URBANPROMPT_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(workdir: &Path, args: &[&str]) -> String {
    let out = run(workdir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(w, &["synth"]);
    ok(w, &["build-graph"]);
    assert!(ok(w, &["validate"]).contains("0 violations"));
    ok(w, &["init-kg"]);
    ok(w, &["pretrain"]);
    for src in ["pretrained", "transr-node", "transr-graph", "random"] {
        ok(w, &["embed", "--source", src]);
    }
    ok(w, &["prompt-manual", "--preset", "P2"]);
    ok(w, &["prompt-tune", "--task", "road_density"]);
    ok(w, &["embed", "--source", "learnable"]);
    ok(w, &["eval", "--task", "poi_affine"]);
    ok(w, &["eval", "--task", "poi_affine", "--source", "manual:P2", "--protocol", "few-shot"]);
    ok(w, &["eval", "--task", "road_density", "--source", "learnable"]);
    ok(w, &["eval", "--task", "flow_volume", "--no-imagery"]);
    let report = ok(w, &["report"]);
    for row in ["manual:P2", "learnable", "pretrained/I"] {
        assert!(report.contains(row), "report misses {row}:\n{report}");
    }

    let emb = std::fs::read_to_string(w.join("embeddings/pretrained.csv")).unwrap();
    let rows: Vec<&str> = emb.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1 + 36);
    assert_eq!(rows[0].split(',').count(), 1 + 16);

    let json = std::fs::read_to_string(w.join("reports/kfold__poi_affine__pretrained.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["folds"].as_array().unwrap().len(), 5);
    assert_eq!(v["meta"]["config_hash"].as_str().unwrap().len(), 64);
    assert!(w.join("runs/pretrain.toml").exists());
}

#[test]
fn reruns_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for w in [a.path(), b.path()] {
        for cmd in [&["synth"][..], &["build-graph"], &["pretrain"], &["embed"]] {
            ok(w, cmd);
        }
    }
    let read = |w: &Path| std::fs::read_to_string(w.join("embeddings/pretrained.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn errors_exit_nonzero_with_kind() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    let out = run(w, &["validate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[io]"));

    ok(w, &["synth"]);
    let nodes = w.join("city/nodes.csv");
    let mut text = std::fs::read_to_string(&nodes).unwrap();
    text.push_str("stray_poi,poi,,0.0,0.0\n");
    std::fs::write(&nodes, text).unwrap();
    let out = run(w, &["build-graph"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[invalid-graph]"));

    let out = run(w, &["--set", "pretrain.epochs=oops", "synth"]);
    assert!(!out.status.success());
}
