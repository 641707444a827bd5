//! Simulates the Lagrangian index policy, the Whittle index policy and random
//! activation on five deadline scheduling arms with budget two.
//!
//! Run with `cargo run --release --example simulate_policies`.

use restless_lip::exact::{
    lagrangian_index, optimal_lambda, whittle_table, DualOptions, IndexSource, IndexTable,
    RviOptions, WhittleOptions,
};
use restless_lip::models::{make_deadline_arm, FreshDistribution};
use restless_lip::sim::{simulate, SimConfig, SimPolicy};
use restless_lip::BanditInstance;

fn main() -> restless_lip::Result<()> {
    let deadline = make_deadline_arm(0.8, &FreshDistribution::uniform())?;
    println!(
        "deadline arm with {} reachable states",
        deadline.num_reachable()
    );
    let instance = BanditInstance::homogeneous(deadline.arm.clone(), 5, 2)?;

    let dual = optimal_lambda(&instance.mix(), instance.alpha(), DualOptions::default())?;
    let lip = lagrangian_index(&deadline.arm, dual.lambda_star, RviOptions::default())?;
    let whittle: Vec<f64> = whittle_table(&deadline.arm, WhittleOptions::new((-20.0, 20.0), 1e-9))?
        .iter()
        .map(|w| w.index)
        .collect();
    let wip = IndexTable::new(whittle, IndexSource::Whittle, deadline.arm.label())?;

    let config = SimConfig::new(200_000, 3);
    for policy in [
        SimPolicy::Lip(vec![lip]),
        SimPolicy::Wip(vec![wip]),
        SimPolicy::Random,
    ] {
        let stats = simulate(&instance, &policy, &config)?;
        println!(
            "{:<6} average reward {:+.4} ± {:.4}, budget violations {}",
            stats.policy, stats.average_reward, stats.stderr, stats.budget_violations
        );
    }
    println!("dual upper bound {:+.4}", dual.dual_value);
    Ok(())
}
