use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use recapture::experiment::{ExperimentConfig, RunSummary};

const TINY: &str = r#"
protocol = "intra"
seed = 3

[corpus]
n_templates = 2
n_genuine_per_template = 10
n_recaptured_per_template = 10
image_size = [224, 224]

[embedder]
embed_dim = 8
hidden_dim = 8
channels = [2, 3, 3, 4]

[simnet]
hidden_dim = 16

[train]
epochs = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_recapture"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_every_artifact_and_reruns_from_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("out");
    let o = run(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["checkpoint", "history.csv", "metrics.csv", "roc.csv", "embeddings.csv", "summary.json"] {
        assert!(out.join(name).exists(), "missing {name}");
    }

    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let embeddings = std::fs::read_to_string(out.join("embeddings.csv")).unwrap();
    for line in embeddings.lines() {
        assert_eq!(line.split(',').count(), 4 + 8);
    }

    let summary: RunSummary = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.config.seed, 3);
    assert_eq!(summary.seeds.master, 3);
    assert_eq!(summary.config.embedder.init_seed, summary.seeds.embedder);

    let again = dir.path().join("again");
    let o = run(&["run", "--config", s(&out.join("summary.json")), "--out", s(&again)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let second: RunSummary = serde_json::from_str(&std::fs::read_to_string(again.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.metrics.len(), second.metrics.len());
    for (a, b) in summary.metrics.iter().zip(&second.metrics) {
        assert_eq!((&a.metric, &a.operating_point), (&b.metric, &b.operating_point));
        assert!((a.value - b.value).abs() <= 1e-6 || a.value == b.value, "{} {}", a.value, b.value);
    }
}

#[test]
fn staged_subcommands_share_an_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("staged");
    let common = ["--config", s(&cfg), "--out", s(&out)];
    let step = |sub: &str| {
        let o = bin().arg(sub).args(common).output().unwrap();
        assert_eq!(code(&o), 0, "{sub}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    };
    assert!(step("synth").contains("source: 40 images"));
    step("train");
    assert!(out.join("checkpoint").is_dir());
    assert!(step("evaluate").contains("auc"));
    step("verify");
    let report = std::fs::read_to_string(out.join("verification.json")).unwrap();
    assert!(report.contains("verdict"));

    let manifest = out.join("data/source/manifest.jsonl");
    let o = bin()
        .arg("export-embeddings")
        .args(common)
        .args(["--manifest", s(&manifest)])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(out.join("embeddings.csv")).unwrap().lines().count();
    assert_eq!(rows, 41);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("seeded");
    let o = run(&["synth", "--config", s(&cfg), "--seed", "11", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let a = std::fs::read(out.join("data/source/images/D1-T0-000.png")).unwrap();
    let out3 = dir.path().join("seed3");
    assert_eq!(code(&run(&["synth", "--config", s(&cfg), "--out", s(&out3)])), 0);
    let b = std::fs::read(out3.join("data/source/images/D1-T0-000.png")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn default_config_round_trips() {
    let o = run(&["default-config"]);
    assert_eq!(code(&o), 0);
    let parsed: ExperimentConfig = toml::from_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(parsed, ExperimentConfig::default());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "unknown.toml", "protocol = \"intra\"\nlearning_rate = 3\n");
    let o = run(&["run", "--config", s(&unknown), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    let bad_split = write_config(dir.path(), "split.toml", "[split]\nratios = [0.5, 0.2, 0.2]\n");
    let o = run(&["synth", "--config", s(&bad_split), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("split"));
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("out");
    assert_eq!(code(&run(&["train", "--config", s(&cfg), "--out", s(&out)])), 0);
    let weights = out.join("checkpoint/weights.bin");
    let bytes = std::fs::read(&weights).unwrap();
    std::fs::write(&weights, &bytes[..bytes.len() / 2]).unwrap();
    let o = run(&["evaluate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn training_errors_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "diverge.toml", &TINY.replace("epochs = 2", "epochs = 3\nlearning_rate = 1e308"));
    let o = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn io_errors_exit_with_5() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&run(&["run", "--config", s(&missing)])), 5);

    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = run(&["synth", "--config", s(&cfg), "--out", s(&blocker.join("sub"))]);
    assert_eq!(code(&o), 5);

    let o = run(&["evaluate", "--config", s(&cfg), "--out", s(&dir.path().join("empty"))]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
}
