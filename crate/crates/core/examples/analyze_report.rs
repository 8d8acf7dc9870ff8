//! Metrics over a batch of sessions: rounds table, learning slopes with
//! bootstrap intervals, reaction slopes.

use gbs_core::analytics::{build_report, ReportOptions, Section};
use gbs_core::orchestrator::{DefaultFactory, RunOptions};
use gbs_core::{run_experiment, AgentSpec, ExperimentConfig};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let experiment = ExperimentConfig::reference(7, "stay-prone", |i, _| {
        AgentSpec::scripted(format!("p{i}"), "stay_prone").with_param("p", 0.3)
    });
    let logs = run_experiment(&experiment, &DefaultFactory::new(), &RunOptions::default(), None, 4).logs;
    let opts = ReportOptions { bootstrap_iterations: 2000, ..ReportOptions::default() };
    let report = build_report(&logs, &[Section::Rounds, Section::Slopes, Section::Reaction], &opts)?;

    for c in report.rounds_table.iter().flatten() {
        println!("{:<7} {:<11} {:>5.2} ({:.2})", c.size_category.as_str(), c.feedback_mode.as_str(), c.mean, c.sd);
    }
    for s in report.learning_slopes.iter().flatten() {
        println!(
            "slope {:<11} {:+.2} [{:+.2}, {:+.2}], {:.0}% negative",
            s.feedback_mode.as_str(),
            s.mean_slope,
            s.ci_low,
            s.ci_high,
            s.pct_negative * 100.0
        );
    }
    for r in report.reaction_slopes.iter().flatten().filter(|r| r.size_category.is_none()) {
        println!("reaction slope {:?} over {} points", r.slope, r.n_points);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
