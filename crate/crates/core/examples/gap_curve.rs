//! Per-arm optimality gap of the restart Lagrangian index policy as the
//! number of arms grows at a fixed activation fraction.
//!
//! Run with `cargo run --release --example gap_curve`.

use restless_lip::fluid::{restart_optimality_gap, GapConfig};
use restless_lip::models::{RestartArmSpec, RESTART_FIXTURE_TYPES};

fn main() -> restless_lip::Result<()> {
    let types: Vec<(RestartArmSpec, f64)> = RESTART_FIXTURE_TYPES
        .iter()
        .map(|&(p, w)| Ok((RestartArmSpec::new(p, w, 200)?, 0.25)))
        .collect::<restless_lip::Result<_>>()?;
    let config = GapConfig {
        sizes: vec![20, 100, 500],
        horizon: 20_000,
        seeds: vec![1, 2, 3],
    };
    println!(
        "{:>5} {:>4} {:>12} {:>12} {:>10} {:>10}",
        "N", "M", "reward/arm", "bound/arm", "gap", "stderr"
    );
    for row in restart_optimality_gap(&types, 0.16, &config)? {
        println!(
            "{:>5} {:>4} {:>12.5} {:>12.5} {:>10.5} {:>10.5}",
            row.n, row.budget, row.per_arm_reward, row.bound, row.gap, row.stderr
        );
    }
    Ok(())
}
