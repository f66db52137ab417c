use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 4

[grid]
width = 5
height = 5

[game]
max_steps = 8

[patrol]
episodes = 4
batch = 8
warmup = 8

[alloc]
defender_k = 4
attacker_k = 2
hidden = 4
n_s = 2
iterations = 3
dataset_size = 40
ae_epochs = 1

[eval]
episodes = 5
heatmap_samples = 5
timing_runs = 1
sweep_levels = [[0.0, 0.0]]
"#;

fn gsg(config: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gsg"))
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "gsg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn subcommands_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();

    gsg(&cfg, &["gen-grid", "--out", path(&d.join("grid.json"))]);
    let grid: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("grid.json")).unwrap()).unwrap();
    assert_eq!(grid["width"], 5);

    gsg(&cfg, &["gen-dataset", "--side", "attacker", "--out", path(&d.join("att.gsga"))]);
    assert_eq!(gsg::alloc::Dataset::load(&d.join("att.gsga")).unwrap().len(), 40);

    let patrol = d.join("patrol");
    gsg(&cfg, &["train-patrol", "--out", path(&patrol)]);
    assert!(patrol.join("drone.ckpt").exists() && patrol.join("ranger.ckpt").exists());

    let alloc = d.join("alloc");
    for algo in ["combsgpo", "random"] {
        gsg(&cfg, &["train-alloc", "--algo", algo, "--patrol", path(&patrol), "--out", path(&alloc)]);
    }
    assert!(alloc.join("curve_combsgpo.csv").exists());

    let eval = d.join("eval.csv");
    let out = gsg(
        &cfg,
        &["evaluate", "--algo", "combsgpo", "--patrol", path(&patrol), "--checkpoints", path(&alloc), "--out", path(&eval)],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("over 5 episodes"));
    // the evaluation inside train-alloc and the standalone one share seeds
    assert_eq!(
        std::fs::read(&eval).unwrap(),
        std::fs::read(alloc.join("eval_combsgpo.csv")).unwrap()
    );

    let heat = d.join("heat");
    gsg(
        &cfg,
        &["heatmap", "--algo", "random", "--patrol", path(&patrol), "--checkpoints", path(&alloc), "--out", path(&heat), "--idle"],
    );
    assert!(heat.with_extension("csv").exists() && heat.with_extension("png").exists());

    let trace = d.join("ep.jsonl");
    gsg(&cfg, &["replay", path(&trace), "--patrol", path(&patrol)]);
    let out = gsg(&cfg, &["replay", path(&trace)]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("steps replayed"));

    gsg(&cfg, &["sweep", "--out", path(&d.join("sweep.csv"))]);
    assert_eq!(std::fs::read_to_string(d.join("sweep.csv")).unwrap().lines().count(), 2);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[alloc]\nalfa = 1.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gsg"))
        .arg("--config")
        .arg(&cfg)
        .args(["gen-grid", "--out", "x.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());

    let out = Command::new(env!("CARGO_BIN_EXE_gsg"))
        .args(["train-alloc", "--algo", "sgd", "--patrol", "p", "--out", "o"])
        .output()
        .unwrap();
    assert!(!out.status.success());

    let out = Command::new(env!("CARGO_BIN_EXE_gsg"))
        .args(["replay"])
        .arg(dir.path().join("missing.jsonl"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}
