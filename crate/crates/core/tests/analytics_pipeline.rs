use gbs_core::analytics::{build_report, rounds_table, write_report, ReportOptions, Section};
use gbs_core::datastore::{export_external_trace, import_external_trace, ImportOptions};
use gbs_core::manifest::{resolve_manifest, Overrides};
use gbs_core::orchestrator::{run_experiment, DefaultFactory, RunOptions};
use gbs_core::{FeedbackMode, SessionLog};

fn oracle_logs() -> Vec<SessionLog> {
    let m = resolve_manifest("scripted-oracle", &Overrides::default()).unwrap();
    run_experiment(&m.experiment, &DefaultFactory::new(), &RunOptions::default(), None, 4).logs
}

#[test]
fn oracle_manifest_solves_numerical_games_in_two_rounds() {
    let logs = oracle_logs();
    assert_eq!(logs.len(), 18);
    for cell in rounds_table(&logs).iter().filter(|c| c.feedback_mode == FeedbackMode::Numerical) {
        assert_eq!(cell.mean, 2.0, "{cell:?}");
    }
}

#[test]
fn trace_csv_round_trip_preserves_metrics() {
    let logs = oracle_logs();
    let mut csv = Vec::new();
    export_external_trace(&logs, &mut csv).unwrap();
    let opts = ImportOptions { condition: "oracle".into(), ..ImportOptions::default() };
    let imported = import_external_trace(csv.as_slice(), &opts).unwrap();
    assert_eq!(imported.len(), logs.len());
    let strip = |cells: Vec<gbs_core::analytics::RoundsCell>| {
        cells.into_iter().map(|c| (c.size_category, c.feedback_mode, c.mean, c.sd)).collect::<Vec<_>>()
    };
    assert_eq!(strip(rounds_table(&imported)), strip(rounds_table(&logs)));
}

#[test]
fn report_files_are_written() {
    let logs = oracle_logs();
    let report = build_report(&logs, &Section::ALL, &ReportOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_report(&report, dir.path()).unwrap();
    assert!(files.iter().any(|f| f == "report.json"));
    for f in &files {
        assert!(dir.path().join(f).metadata().unwrap().len() > 0, "{f} is empty");
    }
}

#[test]
fn empty_input_is_rejected() {
    assert!(build_report(&[], &Section::ALL, &ReportOptions::default()).is_err());
}
