//! The five-item verification report, as a library call. Training runs on
//! the linear benchmark where ground truth is exact, and each item compares
//! the learner against an independent computation: the Riccati fixed point,
//! the monotone-iterates property, a brute-force grid argmin, the measured
//! one-step model error, and the value-gap bound that error implies.
//!
//! Run with `cargo run --example verification_report`.

use ipi::config::{Config, PlantKind};
use ipi::runner::run_verify;

fn main() -> ipi::Result<()> {
    // The sharp fixed-point tolerance costs only a few extra sweeps here.
    let mut cfg = Config {
        name: "verification_report".into(),
        plant: PlantKind::Linear,
        tau_p: 1e-12,
        ..Config::default()
    };

    for gamma in [0.3, 0.7] {
        cfg.gamma = gamma;
        let report = run_verify(&cfg, None)?;
        println!("discount gamma = {gamma}:");
        for line in &report.lines {
            println!("  {line}");
        }
        if let Some(err) = report.exit_error() {
            return Err(err);
        }
    }
    println!("all items passed at both discounts.");
    Ok(())
}
