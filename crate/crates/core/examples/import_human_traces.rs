//! Ingest a per-guess CSV trace (the format for human data) and analyze it.
//!
//! `cargo run --example import_human_traces -- traces.csv`

use gbs_core::analytics::{build_report, ReportOptions, Section};
use gbs_core::datastore::{import_external_trace, ImportOptions};

const SAMPLE: &str = "\
session_id,game_index,feedback_mode,target,round_index,player_id,guess
h1,1,directional,60,1,p1,25
h1,1,directional,60,1,p2,25
h1,1,directional,60,2,p1,30
h1,1,directional,60,2,p2,30
h1,2,numerical,70,1,p1,25
h1,2,numerical,70,1,p2,25
h1,2,numerical,70,2,p1,35
h1,2,numerical,70,2,p2,35
";

pub fn analyze(csv: &[u8]) -> Result<(), Box<dyn std::error::Error>> {
    let logs = import_external_trace(csv, &ImportOptions::default())?;
    println!("{} sessions imported", logs.len());
    let report = build_report(&logs, &[Section::Rounds, Section::Stay], &ReportOptions::default())?;
    for c in report.rounds_table.iter().flatten() {
        println!("{:<11} mean rounds {:.2} over {} games", c.feedback_mode.as_str(), c.mean, c.game_count);
    }
    Ok(())
}

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    analyze(SAMPLE.as_bytes())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    match std::env::args().nth(1) {
        Some(path) => analyze(&std::fs::read(path)?),
        None => run(),
    }
}
