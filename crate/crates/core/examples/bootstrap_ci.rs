//! The statistics toolkit on its own: OLS fit and bootstrap intervals.

use gbs_core::stats::{bootstrap_mean_ci_with, ols, CiMethod};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let games = [1.0, 2.0, 3.0, 4.0, 5.0];
    let rounds = [9.0, 7.0, 8.0, 5.0, 4.0];
    let fit = ols(&games, &rounds)?;
    println!("rounds = {:.2} {:+.2} * game", fit.intercept, fit.slope);

    let slopes = [-1.2, -0.4, -0.9, 0.3, -1.5, -0.7, -0.2, -1.1, -0.6, 0.1, -0.8, -1.0];
    for method in [CiMethod::Percentile, CiMethod::ExpandedPercentile] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ci = bootstrap_mean_ci_with(&slopes, 10_000, 0.95, method, &mut rng)?;
        println!("{method:?}: mean {:+.3}, 95% CI [{:+.3}, {:+.3}]", ci.mean, ci.ci_low, ci.ci_high);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
