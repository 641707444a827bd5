//! Exact per-arm analysis of the three-state non-indexable arm: optimal
//! multiplier, Lagrangian and Whittle indices, the indexability check and the
//! product-MDP oracle for a three-arm system.
//!
//! Run with `cargo run --release --example exact_solve`.

use restless_lip::exact::{
    indexability_check, lagrangian_index, linear_grid, optimal_lambda, product_mdp_oracle,
    whittle_table, DualOptions, RviOptions, WhittleOptions,
};
use restless_lip::models::make_nonindexable_arm;
use restless_lip::sim::{simulate, SimConfig, SimPolicy};
use restless_lip::BanditInstance;

fn main() -> restless_lip::Result<()> {
    let arm = make_nonindexable_arm();
    let instance = BanditInstance::homogeneous(arm.clone(), 10, 3)?;

    let dual = optimal_lambda(&instance.mix(), instance.alpha(), DualOptions::default())?;
    println!(
        "lambda* = {:.6}, dual value = {:.6}",
        dual.lambda_star, dual.dual_value
    );

    let lip = lagrangian_index(&arm, dual.lambda_star, RviOptions::default())?;
    let whittle = whittle_table(&arm, WhittleOptions::new((-20.0, 20.0), 1e-9))?;
    for x in 0..arm.num_states() {
        println!(
            "state {x}: lagrangian {:+.5}  whittle {:+.5}{}",
            lip.get(x),
            whittle[x].index,
            if whittle[x].multiple_roots {
                " (several roots)"
            } else {
                ""
            }
        );
    }

    let report = indexability_check(&arm, &linear_grid(-1.0, 1.0, 201), RviOptions::default())?;
    println!("indexability: {:?}", report.verdict);

    let small = BanditInstance::homogeneous(arm, 3, 1)?;
    let oracle = product_mdp_oracle(&small, 1e-10)?;
    let small_dual = optimal_lambda(&small.mix(), small.alpha(), DualOptions::default())?;
    let small_lip = lagrangian_index(small.arm(0), small_dual.lambda_star, RviOptions::default())?;
    let sim = simulate(
        &small,
        &SimPolicy::Lip(vec![small_lip]),
        &SimConfig::new(200_000, 1),
    )?;
    println!(
        "N=3, M=1: oracle gain {:.5}, simulated LIP {:.5} (ratio {:.4})",
        oracle.gain,
        sim.average_reward,
        sim.average_reward / oracle.gain
    );
    Ok(())
}
