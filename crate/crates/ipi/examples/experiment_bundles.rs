//! The experiment runner as a library: produce an offline artifact bundle,
//! resume it online on the disturbed plant, and list what landed on disk.
//! This is the same code path the `ipi` binary drives; everything is
//! deterministic, so rerunning the example reproduces every byte.
//!
//! Run with `cargo run --example experiment_bundles`.

use ipi::config::{Config, PlantKind};
use ipi::runner::{run_offline, run_online};

fn main() -> ipi::Result<()> {
    let scratch = std::env::temp_dir().join("ipi_experiment_bundles");

    // Offline: the defaults describe the clean nonlinear benchmark.
    let offline_cfg = Config {
        name: "bundles_offline".into(),
        seed: 7,
        ..Config::default()
    };
    let offline_dir = scratch.join("offline");
    let offline = run_offline(&offline_cfg, &offline_dir)?;
    for line in &offline.lines {
        println!("{line}");
    }

    // Online: same cost, disturbed plant, resuming the bundle above.
    let online_cfg = Config {
        name: "bundles_online".into(),
        plant: PlantKind::ModelB,
        seed: 0,
        horizon: 500,
        ..Config::default()
    };
    let online = run_online(&online_cfg, &offline_dir, &scratch.join("online"))?;
    for line in &online.lines {
        println!("{line}");
    }

    println!();
    for dir in [&offline_dir, &scratch.join("online")] {
        println!("{}:", dir.display());
        let mut names: Vec<_> = std::fs::read_dir(dir)?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        for name in names {
            println!("  {name}");
        }
    }
    Ok(())
}
