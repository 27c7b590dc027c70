//! Excitation and the simulation artifacts it produces: drive the nonlinear
//! benchmark with a multisine probe around a stabilizing loop, record the
//! trajectory, and write the CSV plus a rendered SVG into a scratch
//! directory. A second, open-loop run shows the blow-up guard doing its job
//! — this plant is unstable, which is exactly why training collects short
//! episode bursts instead of long free runs.
//!
//! Run with `cargo run --example excitation_rollout`.

use nalgebra::{DMatrix, DVector};

use ipi::plot::plot_trajectory;
use ipi::sysmodels::{
    rollout, ExcitationSpec, LinearPolicy, ModelA, NoiseSource, RolloutOptions,
};

fn main() -> ipi::Result<()> {
    // Two incommensurate tones: enough richness for the 3-parameter-per-row
    // incremental regression to be well posed.
    let tones = || ExcitationSpec::new(vec![0.4, 0.2], vec![0.7, 1.3], vec![0.0, 1.0]);

    // u = 2*x1 + 3*x2 cancels the linear part of the second state equation
    // (deadbeat on the linearization), leaving a bounded loop to probe.
    let gain = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
    let mut probe = LinearPolicy::with_excitation(gain, tones()?);
    let x0 = DVector::from_vec(vec![0.1, -0.1]);
    let traj = rollout(
        &ModelA,
        &mut probe,
        &x0,
        120,
        &NoiseSource::new(0),
        &RolloutOptions::default(),
    )?;
    println!(
        "stabilized probe, 120 steps: max |x| = {:.4}, final |x| = {:.4}",
        traj.max_norm(),
        traj.final_norm()
    );

    let dir = std::env::temp_dir().join("ipi_excitation_rollout");
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("trajectory.csv");
    traj.write_csv_path(&csv)?;
    std::fs::write(dir.join("trajectory.svg"), plot_trajectory(&traj)?)?;
    println!("wrote {} and trajectory.svg beside it", csv.display());

    // The same probe with no feedback: the plant runs away and the rollout
    // truncates with the divergence flag instead of looping forever.
    let mut open_loop = LinearPolicy::with_excitation(DMatrix::zeros(1, 2), tones()?);
    let runaway = rollout(
        &ModelA,
        &mut open_loop,
        &x0,
        120,
        &NoiseSource::new(0),
        &RolloutOptions {
            blowup_radius: 1e3,
            cost: None,
        },
    )?;
    match runaway.diverged_at {
        Some(k) => println!("open loop: blow-up guard fired at step {k}"),
        None => println!("open loop unexpectedly stayed bounded"),
    }
    Ok(())
}
