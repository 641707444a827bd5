//! Builds an arm from explicit matrices, validates it, saves it as JSON and
//! computes its indices.
//!
//! Run with `cargo run --release --example custom_arm`.

use restless_lip::exact::{
    lagrangian_index, optimal_lambda, whittle_table, DualOptions, RviOptions, WhittleOptions,
};
use restless_lip::{ArmModel, BanditInstance};

fn main() -> restless_lip::Result<()> {
    // A machine that degrades while idle and is repaired when serviced.
    let passive = vec![
        vec![0.7, 0.3, 0.0],
        vec![0.0, 0.6, 0.4],
        vec![0.0, 0.0, 1.0],
    ];
    let active = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.9, 0.1, 0.0],
        vec![0.8, 0.0, 0.2],
    ];
    let arm = ArmModel::from_rows(
        &passive,
        &active,
        vec![1.0, 0.5, -1.0],
        vec![0.0, 0.0, -0.5],
        "machine",
    )?;
    let report = arm.validate();
    println!("valid: {}", report.is_valid());

    let path = std::env::temp_dir().join("machine_arm.json");
    std::fs::write(&path, arm.to_json()?)?;
    let reloaded = ArmModel::load_json(&path)?;
    println!("round trip equal: {}", reloaded == arm);

    let instance = BanditInstance::homogeneous(reloaded, 8, 2)?;
    let dual = optimal_lambda(&instance.mix(), instance.alpha(), DualOptions::default())?;
    let lip = lagrangian_index(instance.arm(0), dual.lambda_star, RviOptions::default())?;
    let whittle = whittle_table(instance.arm(0), WhittleOptions::new((-10.0, 10.0), 1e-9))?;
    println!("lambda* = {:.5}", dual.lambda_star);
    for x in 0..3 {
        println!(
            "state {x}: lagrangian {:+.5}, whittle {:+.5}",
            lip.get(x),
            whittle[x].index
        );
    }
    Ok(())
}
