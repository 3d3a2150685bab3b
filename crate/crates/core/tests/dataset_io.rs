use std::fs;
use std::path::{Path, PathBuf};

use agent_sim_core::dataset::{
    assemble_prompt, decompose_all, load_conversations, load_predictions, load_samples,
    write_samples, DatasetError,
};
use agent_sim_core::io::IoError;
use agent_sim_core::AgentAction;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn schema_line(err: DatasetError) -> usize {
    match err {
        DatasetError::Io(IoError::Schema { line, .. }) => line,
        other => panic!("expected schema error, got {other}"),
    }
}

#[test]
fn fixture_corpus_decomposes() {
    let convs = load_conversations(&fixture("conversations.jsonl")).unwrap();
    assert_eq!(convs.len(), 3);
    let samples = decompose_all(&convs).unwrap();
    assert_eq!(samples.len(), 6);
    let kinds: Vec<bool> = samples.iter().map(|s| s.ground_truth.as_tool().is_some()).collect();
    assert_eq!(kinds, [true, false, false, true, true, false]);
    assert!(matches!(
        &samples[5].ground_truth,
        AgentAction::Answer { answer_text } if answer_text == "Order W2001 is cancelled."
    ));
    for s in &samples {
        assert!(assemble_prompt(s).ends_with("[assistant]\n"));
    }
}

#[test]
fn samples_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.jsonl");
    let samples = decompose_all(&load_conversations(&fixture("conversations.jsonl")).unwrap()).unwrap();
    write_samples(&path, &samples).unwrap();
    assert_eq!(load_samples(&path).unwrap(), samples);
    let first = fs::read(&path).unwrap();
    write_samples(&path, &samples).unwrap();
    assert_eq!(fs::read(&path).unwrap(), first);
    // only the target file is left behind
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn empty_file_loads_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    fs::write(&path, "").unwrap();
    assert!(load_conversations(&path).unwrap().is_empty());
    fs::write(&path, "\n\n").unwrap();
    assert!(load_predictions(&path).unwrap().is_empty());
}

#[test]
fn unknown_event_kind_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let good = fs::read_to_string(fixture("conversations.jsonl")).unwrap();
    let first = good.lines().next().unwrap();
    let bad = r#"{"id":"x","events":[{"type":"user_message","text":"hi"},{"type":"system_note","text":"?"}]}"#;
    fs::write(&path, format!("{first}\n{bad}\n")).unwrap();
    assert_eq!(schema_line(load_conversations(&path).unwrap_err()), 2);
}

#[test]
fn structural_errors_report_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("orphan.jsonl");
    let orphan = r#"{"id":"o","events":[{"type":"user_message","text":"hi"},{"type":"tool_result","name":"t","payload":1}]}"#;
    fs::write(&path, format!("\n{orphan}\n")).unwrap();
    assert_eq!(schema_line(load_conversations(&path).unwrap_err()), 2);

    fs::write(&path, "{\"conversation_id\":\"a\",\"turn_index\":0}\n").unwrap();
    assert_eq!(schema_line(load_predictions(&path).unwrap_err()), 1);
}

#[test]
fn missing_file_is_io_error() {
    let err = load_samples(Path::new("/definitely/not/here.jsonl")).unwrap_err();
    assert!(matches!(err, DatasetError::Io(IoError::Io { .. })));
    let err = write_samples(Path::new("/definitely/not/here.jsonl"), &[]).unwrap_err();
    assert!(matches!(err, DatasetError::Io(IoError::Io { .. })));
}

#[test]
fn predictions_fixture_loads() {
    let preds = load_predictions(&fixture("predictions.jsonl")).unwrap();
    assert_eq!(preds.len(), 7);
}
