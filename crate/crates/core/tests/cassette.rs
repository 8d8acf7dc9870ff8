mod common;

use gbs_core::datastore::read_session_unchecked;
use gbs_core::replay::{verify, Verdict};

#[test]
fn recorded_session_replays_offline() {
    let dir = tempfile::tempdir().unwrap();
    let cassette = dir.path().join("cassette.jsonl");
    let cfg = common::two_llm_session("c-2p", 9);
    let recorded = common::record(&cfg, &cassette);
    let replayed = common::replay_from(&cfg, &cassette).unwrap();
    assert_eq!(recorded.to_jsonl(), replayed.to_jsonl());
    assert!(recorded.games[0].rounds[0].decisions[0].raw_text.is_some());
}

#[test]
fn changed_prompt_misses_the_cassette() {
    let dir = tempfile::tempdir().unwrap();
    let cassette = dir.path().join("cassette.jsonl");
    let cfg = common::two_llm_session("c-2p", 9);
    common::record(&cfg, &cassette);
    let mut other = cfg.clone();
    other.agents[0].temperature = Some(0.2);
    let err = common::replay_from(&other, &cassette).unwrap_err();
    assert!(err.contains("no cassette entry"), "{err}");
}

#[test]
fn missing_cassette_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::two_llm_session("c-2p", 9);
    assert!(common::replay_from(&cfg, &dir.path().join("absent.jsonl")).is_err());
}

#[test]
fn tampered_llm_log_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let log = common::record(&common::two_llm_session("c-2p", 3), &dir.path().join("c.jsonl"));
    let mut text = log.to_jsonl();
    // flip the first logged target; feedback no longer matches
    let t = log.games[0].target;
    text = text.replacen(&format!("\"target\":{t},"), &format!("\"target\":{},", t - 1), 1);
    let tampered = read_session_unchecked(text.as_bytes(), "tampered").unwrap();
    let v = verify(&tampered);
    assert!(matches!(v, Verdict::Diverged(ref d) if d.game == 1 && d.round == 1), "{v}");
}
