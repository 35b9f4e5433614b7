use std::fs;
use std::path::Path;
use std::process::Command;

use softarm_cli::artifact::{read_json, RunDir, Stamped};
use softarm_cli::commands::eval::{run_eval, MetricsBody};
use softarm_cli::commands::sweep::{cell_run, run_sweep};
use softarm_cli::commands::train::run_train;
use softarm_cli::config::{ConfigError, ExperimentConfig, SweepAxis};
use tempfile::tempdir;

/// One-second episodes, a 16-neuron reservoir and two updates of two
/// environments: a run costs a few seconds.
const TINY: &str = r#"
schema_version = 1

[environment.task]
kind = "tracking"
horizon = 1.0

[reservoir]
kind = "esn"
size = 16

[learning]
n_envs = 2
steps_per_env = 2
updates = 4
[learning.ppo]
minibatch = 4

[output]
checkpoint_every = 1
trace_every = 2
eval_episodes = 3
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::parse(TINY).unwrap()
}

fn bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn unknown_key_is_named_with_its_path() {
    let text = format!("{TINY}\n[learning.ppo_extra]\n");
    let err = ExperimentConfig::parse(&text).unwrap_err();
    assert!(err.to_string().contains("learning"), "{err}");

    let err = ExperimentConfig::parse("schema_version = 1\n[learning.ppo]\nclip_range = 0.1\n").unwrap_err();
    match &err {
        ConfigError::Parse { path, message } => {
            assert_eq!(path, "learning.ppo.clip_range");
            assert!(message.contains("unknown field"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn schema_version_is_required_and_checked() {
    assert!(matches!(ExperimentConfig::parse("[learning]\nupdates = 3\n"), Err(ConfigError::Parse { .. })));
    assert!(matches!(ExperimentConfig::parse("schema_version = 7\n"), Err(ConfigError::Schema { found: 7 })));
}

#[test]
fn empty_sweep_axis_is_rejected() {
    let text = "schema_version = 1\n[sweep]\naxis = \"backbone_modulus\"\nvalues = []\nseeds = [0]\n";
    match ExperimentConfig::parse(text) {
        Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, "sweep.values"),
        other => panic!("expected an invalid-value error, got {other:?}"),
    }
}

#[test]
fn config_hash_ignores_spelling_and_tracks_values() {
    let minimal = ExperimentConfig::parse("schema_version = 1\n").unwrap();
    let explicit = ExperimentConfig::parse("schema_version = 1\n[output]\ntrace_every = 50\n").unwrap();
    assert_eq!(minimal.hash(), explicit.hash());
    assert_eq!(minimal, ExperimentConfig::default());
    let changed = ExperimentConfig::parse("schema_version = 1\n[output]\ntrace_every = 49\n").unwrap();
    assert_ne!(minimal.hash(), changed.hash());
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut loaded = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            loaded += 1;
        }
    }
    assert!(loaded >= 3);
}

#[test]
fn resumed_run_matches_an_uninterrupted_one_byte_for_byte() {
    let config = tiny();
    let straight = tempdir().unwrap();
    let interrupted = tempdir().unwrap();
    let a = run_train(&config, straight.path(), 3, false, None).unwrap();

    // Two environment steps per update and four per episode: only even
    // updates end on an episode boundary, so the checkpoint lags the curve.
    let b = run_train(&config, interrupted.path(), 3, false, Some(3)).unwrap();
    let state: serde_json::Value = read_json(&b.checkpoint()).unwrap();
    assert_eq!(state["body"]["state"]["update"], 2);
    assert_eq!(fs::read_to_string(b.curve()).unwrap().lines().count(), 1 + 3);
    assert!(!b.policy().exists());

    run_train(&config, interrupted.path(), 3, true, None).unwrap();
    for file in [a.curve(), a.policy(), a.checkpoint(), a.config(), a.reservoir()] {
        let name = file.file_name().unwrap();
        assert_eq!(bytes(&file), bytes(&b.root.join(name)), "{name:?} differs");
    }
    assert_eq!(bytes(&a.traces().join("update-00002.jsonl")), bytes(&b.traces().join("update-00002.jsonl")));
}

#[test]
fn seeds_train_independently_and_artifacts_carry_provenance() {
    let config = ExperimentConfig { learning: softarm::learn::TrainConfig { updates: 1, ..tiny().learning }, ..tiny() };
    let out = tempdir().unwrap();
    let mut curves = Vec::new();
    for seed in 0..5 {
        let run = run_train(&config, out.path(), seed, false, None).unwrap();
        curves.push(bytes(&run.curve()));
        for file in [run.policy(), run.checkpoint(), run.config()] {
            let v: serde_json::Value = read_json(&file).unwrap();
            assert_eq!(v["provenance"]["config_hash"], config.hash());
            assert_eq!(v["provenance"]["seed"], seed);
            assert_eq!(v["provenance"]["code_version"], env!("CARGO_PKG_VERSION"));
        }
        let header: serde_json::Value =
            serde_json::from_str(fs::read_to_string(run.curve()).unwrap().lines().next().unwrap()).unwrap();
        assert_eq!(header["provenance"]["seed"], seed);
    }
    for i in 0..5 {
        for j in 0..i {
            assert_ne!(curves[i], curves[j], "seeds {i} and {j} gave the same curve");
        }
    }
}

#[test]
fn evaluation_is_repeatable_and_refuses_a_foreign_reservoir() {
    let config = tiny();
    let out = tempdir().unwrap();
    let run = run_train(&config, out.path(), 1, false, None).unwrap();
    let first = run_eval(&run, None, Some(4), true).unwrap();
    let first_bytes = bytes(&run.metrics());
    let second = run_eval(&run, None, Some(4), true).unwrap();
    assert_eq!(first_bytes, bytes(&run.metrics()));
    assert_eq!(first.body.summary, second.body.summary);
    assert_eq!(first.body.episodes.len(), 4);
    assert!(first.body.episodes.iter().all(|m| m.kinetic_energy >= 0.0 && m.bending_energy >= 0.0));
    let stored: Stamped<MetricsBody> = read_json(&run.metrics()).unwrap();
    assert_eq!(stored.provenance.seed, Some(1));

    let other = run_train(&config, out.path(), 2, false, None).unwrap();
    fs::copy(other.reservoir(), run.reservoir()).unwrap();
    let err = run_eval(&run, None, Some(1), true).unwrap_err();
    assert!(err.to_string().contains("reservoir"), "{err}");
}

#[test]
fn sweep_records_failed_cells_and_continues() {
    let mut config = tiny();
    config.learning.updates = 1;
    config.output.trace_every = 0;
    config.sweep = Some(softarm_cli::config::SweepBlock {
        axis: SweepAxis::BackboneModulus,
        values: vec![250e3, 125e3],
        seeds: vec![0],
    });
    let out = tempdir().unwrap();
    // A plain file where the first cell's directory should go.
    fs::write(out.path().join("modulus-250000"), b"").unwrap();
    let summary = run_sweep(&config, out.path(), false, Some(2)).unwrap();
    let rows = &summary.body.rows;
    assert_eq!(rows.len(), 2);
    assert!(rows[0].error.is_some() && rows[0].mean_return.is_none());
    assert!(rows[1].error.is_none() && rows[1].mean_return.is_some());
    assert!(cell_run(out.path(), SweepAxis::BackboneModulus, 125e3, 0).metrics().exists());
    let written: serde_json::Value = read_json(&out.path().join("summary.json")).unwrap();
    assert_eq!(written["body"]["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn binary_reports_config_errors_with_nonzero_status() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "schema_version = 1\n[arm.backbone]\nlenght = 0.3\n").unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_softarm"))
        .args(["train", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("arm.backbone.lenght"), "{stderr}");
    assert!(!RunDir::new(dir.path(), 0).root.exists());
}
