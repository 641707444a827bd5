//! Two-timescale tabular learners on ten non-indexable arms with budget three:
//! the relaxed-budget learner and the hard-budget learner with virtual actions.
//!
//! Run with `cargo run --release --example tabular_learner`.

use restless_lip::exact::{optimal_lambda, rvi_q, DualOptions, RviOptions};
use restless_lip::models::make_nonindexable_arm;
use restless_lip::tabular::{run_learner, Algorithm, LearnerConfig};
use restless_lip::BanditInstance;

fn main() -> restless_lip::Result<()> {
    let instance = BanditInstance::homogeneous(make_nonindexable_arm(), 10, 3)?;
    let exact = optimal_lambda(&instance.mix(), instance.alpha(), DualOptions::default())?;
    let q_star = rvi_q(instance.arm(0), exact.lambda_star, RviOptions::default())?;
    println!("exact lambda* = {:.4}", exact.lambda_star);

    for algorithm in [Algorithm::Relaxed, Algorithm::HardBudget] {
        let mut config = LearnerConfig::new(200_000, 1);
        config.trace_every = 1000;
        let result = run_learner(&instance, &config, algorithm)?;
        let table = &result.state.tables[0];
        let distance = table
            .values
            .iter()
            .zip(&q_star.values)
            .flat_map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs()])
            .fold(0.0, f64::max);
        println!(
            "{algorithm:?}: final lambda {:.4}, Q distance {:.4}, budget violations {}, indices {:?}",
            result.final_lambda(),
            distance,
            result.budget_violations,
            (0..3).map(|x| (table.gamma(x) * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }
    Ok(())
}
