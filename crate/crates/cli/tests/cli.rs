//! Integration tests of the pipeline verbs and their failure modes.

use std::process::Command;

use serde_json::{json, Value};
use trigsyn::trigger::TriggerKind;
use trigsyn_cli::config::{preset, PipelineConfig};
use trigsyn_cli::pipeline::{
    cmd_boa, cmd_collect, cmd_repro, cmd_simulate, cmd_synth, cmd_trigger, select_set, Stage,
};

fn poly_value() -> Value {
    serde_json::from_str(preset("poly").unwrap()).unwrap()
}

fn config_from(value: Value) -> Result<PipelineConfig, trigsyn_cli::StageError> {
    PipelineConfig::from_json(&value.to_string())
}

#[test]
fn presets_parse_and_validate() {
    for name in ["poly", "pendulum", "poly_khalil", "inverted_pendulum"] {
        let cfg = PipelineConfig::from_json(preset(name).unwrap()).unwrap();
        assert!(cfg.reference.is_some(), "{name} preset carries reference values");
    }
    assert!(preset("nope").is_none());
}

#[test]
fn unknown_field_is_a_config_error() {
    let mut value = poly_value();
    value["surprise"] = json!(1);
    let err = config_from(value).unwrap_err();
    assert_eq!(err.stage, Stage::Config);
    assert_eq!(err.stage.exit_code(), 64);
}

#[test]
fn dimension_mismatch_is_a_config_error() {
    let mut value = poly_value();
    value["simulation"]["initial_states"] = json!([[0.1, 0.2, 0.3]]);
    let err = config_from(value).unwrap_err();
    assert_eq!(err.stage, Stage::Config);
}

#[test]
fn library_trigger_without_eta_is_rejected() {
    let mut value = poly_value();
    value["trigger"]["kind"] = json!("library");
    value["trigger"]["eta"] = Value::Null;
    let err = config_from(value).unwrap_err();
    assert_eq!(err.stage, Stage::Config);
}

#[test]
fn zero_input_amplitude_gives_zero_u0_and_blocks_synthesis() {
    let mut value = poly_value();
    value["experiment"]["input_range"] = json!([[0.0, 0.0]]);
    let cfg = config_from(value).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let collected = cmd_collect(&cfg, dir.path()).unwrap();
    assert_eq!(collected.data.u0.iter().filter(|v| **v != 0.0).count(), 0);
    assert!(!collected.richness.full_row_rank);
    let err = cmd_synth(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.stage, Stage::Synthesis);
    assert_eq!(err.stage.exit_code(), 3);
}

#[test]
fn experiment_blowup_is_a_collect_error() {
    let mut value = poly_value();
    value["experiment"]["input_range"] = json!([[1e6, 1e6]]);
    value["experiment"]["x0_range"] = json!([[2.0, 2.0], [2.0, 2.0]]);
    let cfg = config_from(value).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_collect(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.stage, Stage::Collect);
    assert_eq!(err.stage.exit_code(), 2);
}

#[test]
fn tiny_sigma_cap_saturates_the_design() {
    let mut value = poly_value();
    value["trigger"]["sigma_cap"] = json!(1e-9);
    let cfg = config_from(value).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_collect(&cfg, dir.path()).unwrap();
    cmd_synth(&cfg, dir.path()).unwrap();
    let policy = cmd_trigger(&cfg, dir.path()).unwrap();
    assert!(
        (policy.sigma - 1e-9).abs() <= 1e-21,
        "threshold should saturate the cap, got {}",
        policy.sigma
    );
    assert!(policy.tau > 0.0);
}

#[test]
fn zero_initial_state_stays_flat() {
    let mut value = poly_value();
    value["simulation"]["initial_states"] = json!([[0.0, 0.0]]);
    value["simulation"]["t_final"] = json!(1.0);
    let cfg = config_from(value).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_collect(&cfg, dir.path()).unwrap();
    cmd_synth(&cfg, dir.path()).unwrap();
    cmd_trigger(&cfg, dir.path()).unwrap();
    let summaries = cmd_simulate(&cfg, dir.path()).unwrap();
    assert_eq!(summaries.len(), 1);
    assert_eq!(summaries[0].final_norm, 0.0);
    assert_eq!(summaries[0].num_events, 1);
    assert_eq!(summaries[0].converged_at, Some(0.0));
}

#[test]
fn boa_set_selection_tracks_method_and_trigger() {
    let cfg = PipelineConfig::from_json(preset("poly").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let collected = cmd_collect(&cfg, dir.path()).unwrap();
    let contractive = cmd_synth(&cfg, dir.path()).unwrap();
    let library = cfg.library().unwrap();

    let (name, _) = select_set(
        &contractive,
        &collected.data,
        &library,
        TriggerKind::ErrorState,
        None,
    )
    .unwrap();
    assert_eq!(name, "continuous-decrease");
    let (name, _) = select_set(
        &contractive,
        &collected.data,
        &library,
        TriggerKind::ErrorLibrary,
        Some(0.1),
    )
    .unwrap();
    assert_eq!(name, "library-trigger-decrease");

    let mut value = poly_value();
    value["synthesis"]["method"] = json!("linearization");
    let lin_cfg = config_from(value).unwrap();
    let linearized = cmd_synth(&lin_cfg, dir.path()).unwrap();
    let (name, _) = select_set(
        &linearized,
        &collected.data,
        &library,
        TriggerKind::ErrorState,
        None,
    )
    .unwrap();
    assert_eq!(name, "state-trigger-decrease");
}

#[test]
fn verbs_compose_on_disk_and_boa_reports_inclusion() {
    let cfg = PipelineConfig::from_json(preset("poly").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_collect(&cfg, dir.path()).unwrap();
    cmd_synth(&cfg, dir.path()).unwrap();
    cmd_trigger(&cfg, dir.path()).unwrap();
    let boa = cmd_boa(&cfg, dir.path()).unwrap();
    assert_eq!(boa.set, "continuous-decrease");
    assert!(boa.gamma > 0.0);
    assert_eq!(boa.design_box_included, Some(true));
    assert!(dir.path().join("boa_state_sublevel.csv").is_file());
    assert!(dir.path().join("boa_state_set.csv").is_file());
}

#[test]
fn repro_writes_report_with_reference_section() {
    let cfg = PipelineConfig::from_json(preset("poly").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let output = cmd_repro(&cfg, dir.path()).unwrap();
    assert_eq!(output.policies.len(), 2);
    assert_eq!(output.boas.len(), 2);
    let report = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(report.contains("## Reference comparison"));
    assert!(report.contains("ell >= omega PASS"));
    assert!(report.contains("Published design"));
}

#[test]
fn missing_artifacts_fail_with_the_verb_stage() {
    let cfg = PipelineConfig::from_json(preset("poly").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_trigger(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.stage, Stage::Trigger);
    let err = cmd_simulate(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.stage, Stage::Simulation);
    assert_eq!(err.stage.exit_code(), 4);
}

#[test]
fn binary_reports_config_errors_with_code_64() {
    let out = Command::new(env!("CARGO_BIN_EXE_trigsyn"))
        .args(["collect", "--preset", "nope", "--out", "/tmp/should_not_exist_xyz"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown preset"));

    let out = Command::new(env!("CARGO_BIN_EXE_trigsyn"))
        .args(["collect", "--out", "/tmp/should_not_exist_xyz"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn binary_collects_a_preset_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trigsyn"))
        .args(["collect", "--preset", "poly"])
        .args(["--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("data/manifest.json").is_file());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("rank 7/7"));
}

#[test]
fn seed_override_changes_the_data() {
    let cfg = PipelineConfig::from_json(preset("poly").unwrap()).unwrap();
    let mut reseeded = cfg.clone();
    reseeded.experiment.rng_seed = 99;
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = cmd_collect(&cfg, dir_a.path()).unwrap();
    let b = cmd_collect(&reseeded, dir_b.path()).unwrap();
    assert_ne!(a.data.u0, b.data.u0);
}
