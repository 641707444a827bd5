//! The neural learner on the non-indexable fixture with a small network, and
//! a comparison of the learned index ordering with the exact one.
//!
//! Run with `cargo run --release --example dqn_learner`.

use restless_lip::approx::{run_dqn, TrainConfig};
use restless_lip::exact::{lagrangian_index, optimal_lambda, DualOptions, RviOptions};
use restless_lip::models::make_nonindexable_arm;
use restless_lip::BanditInstance;

fn ordering(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

fn main() -> restless_lip::Result<()> {
    let instance = BanditInstance::homogeneous(make_nonindexable_arm(), 10, 3)?;
    let exact = optimal_lambda(&instance.mix(), instance.alpha(), DualOptions::default())?;
    let exact_index = lagrangian_index(instance.arm(0), exact.lambda_star, RviOptions::default())?;

    let config = TrainConfig {
        hidden: vec![64, 64],
        learning_rate: 1e-3,
        trace_every: 100,
        ..TrainConfig::default()
    };
    let steps = 20_000;
    let result = run_dqn(&instance, &config, steps, 1)?;
    let learned = &result.indices[0].values;
    println!(
        "exact lambda* {:.4}, learned {:.4}",
        exact.lambda_star, result.final_lambda
    );
    println!(
        "exact index   {:?} order {:?}",
        exact_index.values,
        ordering(&exact_index.values)
    );
    println!("learned index {learned:?} order {:?}", ordering(learned));
    println!(
        "batches trained: {}, final epsilon {:.4}",
        result.batches_trained, result.epsilon
    );
    Ok(())
}
