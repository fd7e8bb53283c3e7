//! Exit codes and the cheap subcommands.

use std::path::Path;
use std::process::{Command, Output};

use advspeech::audio::{write_wav, Waveform};
use advspeech::dataset::{AttackKind, DatasetManifest, ExampleLabel, ManifestEntry, Split};

fn advspeech(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advspeech"))
        .arg("--dir")
        .arg(dir)
        .args(args)
        .env_remove("ADVSPEECH_SEED")
        .output()
        .expect("binary runs")
}

fn entry(id: &str, label: ExampleLabel, source: Option<&str>) -> ManifestEntry {
    ManifestEntry {
        id: id.into(),
        wav_path: format!("{id}.wav"),
        label,
        bucket: "yes".into(),
        target_class: source.map(|_| "no".into()),
        split: Split::Train,
        source_id: source.map(Into::into),
        attack_kind: if source.is_some() {
            AttackKind::BlackBox
        } else {
            AttackKind::None
        },
        duration_s: 0.5,
        speech_ratio: 0.9,
        vad: "energy".into(),
    }
}

#[test]
fn show_config_applies_overrides_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = advspeech(
        dir.path(),
        &["--seed", "7", "--set", "dataset_b.n_per_command=5", "show-config"],
    );
    assert!(out.status.success());
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["master_seed"], 7);
    assert_eq!(cfg["dataset_b"]["n_per_command"], 5);
    assert_eq!(cfg["preset"], "desk");
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_advspeech"))
        .args(["--dir", dir.path().to_str().unwrap(), "show-config"])
        .env("ADVSPEECH_SEED", "99")
        .output()
        .unwrap();
    let cfg: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg["master_seed"], 99);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--preset", "huge", "show-config"],
        vec!["--set", "no.such.key=1", "show-config"],
        vec!["--set", "detector.runs=0", "show-config"],
        vec!["--config", "/nonexistent/run.json", "show-config"],
        vec!["no-such-command"],
    ] {
        let out = advspeech(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = advspeech(dir.path(), &["--preset", "full", "show-config"]);
    let path = dir.path().join("run.json");
    std::fs::write(&path, &out.stdout).unwrap();
    let again = advspeech(dir.path(), &["--config", path.to_str().unwrap(), "show-config"]);
    assert!(again.status.success());
    assert_eq!(again.stdout, out.stdout);
}

#[test]
fn validate_manifest_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let w = Waveform::new(vec![0.1; 8000], 16000);
    for id in ["n1", "a1"] {
        write_wav(&w, dir.path().join(format!("{id}.wav"))).unwrap();
    }
    let path = dir.path().join("manifest.jsonl");
    let arg = path.to_str().unwrap();

    DatasetManifest {
        entries: vec![entry("n1", ExampleLabel::Normal, None)],
    }
    .write(&path)
    .unwrap();
    let out = advspeech(dir.path(), &["validate-manifest", arg]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("unbalanced"));

    DatasetManifest {
        entries: vec![
            entry("n1", ExampleLabel::Normal, None),
            entry("a1", ExampleLabel::Adversarial, Some("src1")),
        ],
    }
    .write(&path)
    .unwrap();
    let out = advspeech(dir.path(), &["validate-manifest", arg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));

    // the normal doubling as the attack source breaks exclusivity
    DatasetManifest {
        entries: vec![
            entry("n1", ExampleLabel::Normal, None),
            entry("a1", ExampleLabel::Adversarial, Some("n1")),
        ],
    }
    .write(&path)
    .unwrap();
    assert_eq!(advspeech(dir.path(), &["validate-manifest", arg]).status.code(), Some(4));
}

#[test]
fn classify_without_checkpoint_file_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("x.wav");
    write_wav(&Waveform::new(vec![0.0; 1600], 16000), &wav).unwrap();
    let out = advspeech(
        dir.path(),
        &["classify", wav.to_str().unwrap(), "--checkpoint", "/nonexistent/detector.ann"],
    );
    assert_eq!(out.status.code(), Some(4));
}
