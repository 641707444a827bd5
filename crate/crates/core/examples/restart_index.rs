//! Closed-form analysis of the restart (age of information) model: optimal
//! multiplier, thresholds, indices, a cross-check against relative value
//! iteration on the truncated chain, and the online multiplier search.
//!
//! Run with `cargo run --release --example restart_index`.

use restless_lip::exact::{lagrangian_index, RviOptions};
use restless_lip::models::{
    make_restart_arm, restart_state_index, RestartArmSpec, RESTART_FIXTURE_TYPES,
};
use restless_lip::restart::{
    online_restart_learner, restart_index, restart_lambda_star, restart_thresholds,
    OnlineRestartConfig,
};

fn main() -> restless_lip::Result<()> {
    let x_max = 200;
    let types: Vec<(RestartArmSpec, usize)> = RESTART_FIXTURE_TYPES
        .iter()
        .map(|&(p, w)| Ok((RestartArmSpec::new(p, w, x_max)?, 25)))
        .collect::<restless_lip::Result<_>>()?;
    let dual = restart_lambda_star(&types, 16.0 / 100.0, None, 1e-10)?;
    println!("lambda* = {:.4}", dual.lambda_star);
    for ((spec, _), sol) in types
        .iter()
        .zip(restart_thresholds(&types, dual.lambda_star)?)
    {
        println!(
            "{:<22} threshold {:>3}  gain {:.4}",
            spec.label(),
            sol.threshold,
            sol.gain
        );
    }

    let (spec, _) = types[0];
    let arm = make_restart_arm(spec)?;
    let numeric = lagrangian_index(&arm, dual.lambda_star, RviOptions::with_tol(1e-11))?;
    println!("{}: closed form vs value iteration", spec.label());
    for x in [1, 2, 5, 10, 20] {
        println!(
            "  x={x:>2}: {:+.6}  {:+.6}",
            restart_index(&spec, dual.lambda_star, x)?,
            numeric.get(restart_state_index(x))
        );
    }

    let mut online = OnlineRestartConfig::new(16, 50_000, 7);
    online.epsilon = 0.01;
    let trace = online_restart_learner(&types, &online)?;
    println!(
        "online multiplier after {} steps: {:.4}",
        online.steps, trace.final_lambda
    );
    Ok(())
}
