//! Run a bundled manifest and write logs plus `manifest.json` to a directory.
//!
//! `cargo run --example run_manifest -- [manifest] [out-dir]`

use std::path::PathBuf;

use gbs_core::manifest::{resolve_manifest, Overrides};
use gbs_core::orchestrator::{run_experiment, DefaultFactory, RunOptions};

pub fn run_with(name: &str, out: PathBuf) -> Result<(), Box<dyn std::error::Error>> {
    let manifest = resolve_manifest(name, &Overrides::default())?;
    let outcome = run_experiment(&manifest.experiment, &DefaultFactory::new(), &RunOptions::default(), Some(&out), 4);
    println!("{}: {} sessions, {} failed", manifest.name, outcome.logs.len(), outcome.failures.len());
    println!("logs under {}", out.display());
    Ok(())
}

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("gbs-run-manifest-example");
    run_with("scripted-oracle", dir)
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    match (args.next(), args.next()) {
        (Some(name), Some(out)) => run_with(&name, out.into()),
        (Some(name), None) => run_with(&name, std::env::temp_dir().join("gbs-run-manifest-example")),
        _ => run(),
    }
}
