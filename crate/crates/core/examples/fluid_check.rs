//! Fluid dynamics of the restart fixture under the Lagrangian index policy:
//! fixed point from three starts and the per-arm reward at the limit.
//!
//! Run with `cargo run --release --example fluid_check`.

use restless_lip::fluid::{fluid_fixed_point, FluidOptions, FluidSystem};
use restless_lip::harness::{exact_policies, Environment};

fn main() -> restless_lip::Result<()> {
    let env = Environment::restart_fixture(200);
    let instance = env.instance()?;
    let tables = exact_policies(&env, None)?;
    let system = FluidSystem::from_instance(&instance, &tables.lip)?;
    let report = fluid_fixed_point(&system, &system.default_starts(), FluidOptions::default())?;
    println!("attractor: {:?}", report.status);
    for (i, run) in report.runs.iter().enumerate() {
        println!(
            "start {i}: {} iterations, final change {:.2e}, reward per arm {:.5}",
            run.iterations, run.final_change, run.reward
        );
    }
    println!("dual bound per arm: {:.5}", tables.dual_bound_per_arm);
    Ok(())
}
