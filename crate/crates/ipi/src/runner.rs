//! Experiment orchestration: turns a resolved [`Config`] into an on-disk
//! artifact bundle and a printable report.
//!
//! Every run writes one directory containing a copy of the resolved
//! configuration, a versioned `state.json` with the identified model and
//! value kernel, the CSV traces, the rendered SVGs, and a `manifest.json`
//! listing the SHA-256 of every other file. Nothing in a bundle depends on
//! wall-clock time or iteration order of a hash map, so rerunning the same
//! configuration with the same seed reproduces every file byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Config, PlantKind};
use crate::diag::{check_monotonicity, estimate_model_error, probe_grid, value_gap_bound};
use crate::error::{Error, Result};
use crate::online::{OnlineAdapter, OnlineStateRecord};
use crate::oracle::{brute_force_argmin, discounted_riccati, LinearPlant};
use crate::plot::{plot_history, plot_trajectory};
use crate::policy::{improve_policy_increment, IncrementalPolicy};
use crate::sysmodels::{rollout, LinearDiscrete, NoiseSource, RolloutOptions, Trajectory};
use crate::train::{collect_episodes, offline_train, Dataset, TrainingHistory};
use crate::valuefn::QuadraticKernel;

/// Version stamp written into `state.json` and `manifest.json`. Bump when a
/// bundle's layout changes incompatibly; `online` refuses baselines whose
/// stamp it does not understand.
pub const BUNDLE_VERSION: u32 = 1;

/// Where a run's artifacts go: an explicit `--out` wins, then the
/// configuration's `output.dir`, then `runs/<experiment name>`.
pub fn resolve_out_dir(cfg: &Config, cli_out: Option<&Path>) -> PathBuf {
    if let Some(dir) = cli_out {
        return dir.to_path_buf();
    }
    if let Some(dir) = &cfg.out_dir {
        return PathBuf::from(dir);
    }
    PathBuf::from("runs").join(&cfg.name)
}

/// Row-major matrix snapshot for JSON artifacts. `nalgebra`'s own serde form
/// is column-major and tied to its storage layout; artifacts pin the
/// human-readable convention instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    /// Entries in row-major order, length `rows * cols`.
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Bundle(format!(
                "matrix record claims {}×{} but carries {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

fn kernel_row_major(k: &QuadraticKernel) -> Vec<f64> {
    MatrixRecord::from_matrix(&k.p).data
}

/// `state.json` of an offline training bundle: everything `online` needs to
/// resume from the trained controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OfflineState {
    pub version: u32,
    pub config_hash: String,
    pub gamma: f64,
    /// Identified incremental model, stacked [Â B̂]ᵀ.
    pub theta: MatrixRecord,
    /// Final value kernel, row-major.
    pub kernel: Vec<f64>,
    pub kernel_dim: usize,
    pub warm_start_scale: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl OfflineState {
    pub fn kernel_matrix(&self) -> Result<QuadraticKernel> {
        let rec = MatrixRecord {
            rows: self.kernel_dim,
            cols: self.kernel_dim,
            data: self.kernel.clone(),
        };
        QuadraticKernel::new(rec.to_matrix()?, self.gamma)
    }
}

/// `state.json` of an online adaptation bundle. The `machine` record is the
/// exact estimator state and resumes bit-identically; the flattened kernel is
/// duplicated at the top level for inspection without decoding the record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineState {
    pub version: u32,
    pub config_hash: String,
    pub kernel: Vec<f64>,
    pub kernel_dim: usize,
    pub machine: OnlineStateRecord,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    version: u32,
    experiment: &'a str,
    kind: &'a str,
    config_hash: &'a str,
    seed: u64,
    /// File name → SHA-256 of its bytes, sorted by name.
    files: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

/// Serializes a value as pretty JSON with a trailing newline.
fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Input(format!("serialization failed: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// Hashes every file already written into `dir` and writes `manifest.json`
/// beside them (the manifest never lists itself).
fn write_manifest(dir: &Path, cfg: &Config, kind: &str, names: &[&str]) -> Result<()> {
    let hash = cfg.hash();
    let mut files = BTreeMap::new();
    for name in names {
        let bytes = std::fs::read(dir.join(name))?;
        files.insert(name.to_string(), sha256_hex(&bytes));
    }
    let manifest = Manifest {
        version: BUNDLE_VERSION,
        experiment: &cfg.name,
        kind,
        config_hash: &hash,
        seed: cfg.seed,
        files,
    };
    std::fs::write(dir.join("manifest.json"), to_json(&manifest)?)?;
    Ok(())
}

/// Training-curve CSV in the kernel-first column order used by external
/// tooling: `p11,p12,p22,iteration`. The richer `history.csv` (with deltas
/// and probe values) is written alongside it.
fn write_kernel_curve(path: &Path, history: &TrainingHistory) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
    w.write_record(["p11", "p12", "p22", "iteration"])?;
    for rec in &history.records {
        let p = &rec.kernel.p;
        w.write_record([
            format!("{:.17e}", p[(0, 0)]),
            format!("{:.17e}", p[(0, 1)]),
            format!("{:.17e}", p[(1, 1)]),
            rec.iteration.to_string(),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

fn load_offline_state(baseline: &Path) -> Result<OfflineState> {
    let path = baseline.join("state.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Bundle(format!("cannot read {}: {e}", path.display())))?;
    let state: OfflineState = serde_json::from_str(&text)
        .map_err(|e| Error::Bundle(format!("cannot decode {}: {e}", path.display())))?;
    if state.version != BUNDLE_VERSION {
        return Err(Error::Bundle(format!(
            "baseline state version {} unsupported (expected {BUNDLE_VERSION})",
            state.version
        )));
    }
    Ok(state)
}

/// Outcome of [`run_offline`]. `exit_error` is `Some` when the run must map
/// to a nonzero process status even though artifacts were written.
#[derive(Debug)]
pub struct OfflineReport {
    pub out_dir: PathBuf,
    pub converged: bool,
    pub iterations: usize,
    pub warm_start_scale: f64,
    pub last_delta: f64,
    pub monotone: bool,
    pub lines: Vec<String>,
}

impl OfflineReport {
    pub fn exit_error(&self) -> Option<Error> {
        if self.converged {
            None
        } else {
            Some(Error::Unconverged {
                max_iterations: self.iterations,
                last_delta: self.last_delta,
            })
        }
    }
}

/// Collects excitation episodes, trains offline, and writes the artifact
/// bundle. Artifacts (including the full training history) are written even
/// when the run hits the iteration cap, so an unconverged run can still be
/// inspected; the report then carries the nonzero exit mapping.
pub fn run_offline(cfg: &Config, out_dir: &Path) -> Result<OfflineReport> {
    let cost = cfg.cost_spec()?;
    let plant = cfg.plant.build();
    let noise = NoiseSource::new(cfg.seed);
    let dataset = collect_episodes(plant.as_ref(), &cfg.collect_config(), &noise)?;
    let outcome = offline_train(&dataset, &cfg.base_gain_matrix(), &cost, &cfg.train_config())?;

    let monotonicity = check_monotonicity(&outcome.history.kernels());
    let iterations = outcome.history.records.len().saturating_sub(1);
    let last_delta = outcome
        .history
        .records
        .last()
        .map_or(f64::NAN, |r| r.delta_frobenius);

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.conf"), cfg.canonical())?;
    let state = OfflineState {
        version: BUNDLE_VERSION,
        config_hash: cfg.hash(),
        gamma: cost.gamma,
        theta: MatrixRecord::from_matrix(&outcome.theta),
        kernel: kernel_row_major(&outcome.kernel),
        kernel_dim: outcome.kernel.dim(),
        warm_start_scale: outcome.warm_start_scale,
        converged: outcome.converged,
        iterations,
    };
    std::fs::write(out_dir.join("state.json"), to_json(&state)?)?;
    outcome
        .history
        .write_csv_path(&out_dir.join("history.csv"))?;
    write_kernel_curve(&out_dir.join("kernel_curve.csv"), &outcome.history)?;
    std::fs::write(
        out_dir.join("training.svg"),
        plot_history(&outcome.history)?,
    )?;
    write_manifest(
        out_dir,
        cfg,
        "offline",
        &[
            "config.conf",
            "state.json",
            "history.csv",
            "kernel_curve.csv",
            "training.svg",
        ],
    )?;

    let mut lines = Vec::new();
    if outcome.converged {
        lines.push(format!(
            "offline[{}] converged in {iterations} iterations (warm start c = {}, last |dP| = {:.3e})",
            cfg.name, outcome.warm_start_scale, last_delta
        ));
    } else {
        lines.push(format!(
            "offline[{}] UNCONVERGED after {iterations} iterations (last |dP| = {:.3e})",
            cfg.name, last_delta
        ));
    }
    lines.push(format!(
        "offline[{}] monotone value iterates: {} (worst margin = {:.3e})",
        cfg.name,
        if monotonicity.ok { "PASS" } else { "FAIL" },
        monotonicity.worst_margin
    ));
    if outcome.psd_warnings > 0 {
        lines.push(format!(
            "offline[{}] indefinite kernel iterates projected: {}",
            cfg.name, outcome.psd_warnings
        ));
    }
    lines.push(format!(
        "offline[{}] artifacts -> {}",
        cfg.name,
        out_dir.display()
    ));

    Ok(OfflineReport {
        out_dir: out_dir.to_path_buf(),
        converged: outcome.converged,
        iterations,
        warm_start_scale: outcome.warm_start_scale,
        last_delta,
        monotone: monotonicity.ok,
        lines,
    })
}

/// Outcome of [`run_online`]. The gating checks are divergence and the
/// trajectory envelope; the settle radius is measured and reported but does
/// not gate, since a persistently disturbed plant has a noise floor no
/// causal regulator can undercut.
#[derive(Debug)]
pub struct OnlineReport {
    pub out_dir: PathBuf,
    pub steps: usize,
    pub max_norm: f64,
    pub envelope: f64,
    pub envelope_ok: bool,
    pub diverged_at: Option<u64>,
    pub settle_max: f64,
    pub settled: bool,
    pub holds: u64,
    pub lines: Vec<String>,
}

impl OnlineReport {
    pub fn exit_error(&self) -> Option<Error> {
        if let Some(step) = self.diverged_at {
            return Some(Error::Diverged {
                step,
                norm: self.max_norm,
            });
        }
        if !self.envelope_ok {
            return Some(Error::Diverged {
                step: self.steps as u64,
                norm: self.max_norm,
            });
        }
        None
    }
}

/// Resumes the controller from an offline baseline bundle and runs closed
/// loop on the configured plant, adapting model and kernel each step. Writes
/// the trajectory, the adapted state, and the response plot.
pub fn run_online(cfg: &Config, baseline: &Path, out_dir: &Path) -> Result<OnlineReport> {
    let cost = cfg.cost_spec()?;
    let state = load_offline_state(baseline)?;
    if state.gamma != cost.gamma {
        return Err(Error::Bundle(format!(
            "baseline was trained with discount {} but the configuration requests {}",
            state.gamma, cost.gamma
        )));
    }
    let theta = state.theta.to_matrix()?;
    let kernel = state.kernel_matrix()?;
    let mut adapter = OnlineAdapter::new(theta, kernel, cost.clone(), &cfg.online_config()?)?;

    let plant = cfg.plant.build();
    let x0 = cfg.x0_vector();
    let noise = NoiseSource::new(cfg.seed);
    let opts = RolloutOptions {
        blowup_radius: cfg.blowup_radius,
        cost: Some(cost.clone()),
    };
    let traj = rollout(
        plant.as_ref(),
        &mut adapter,
        &x0,
        cfg.horizon,
        &noise,
        &opts,
    )?;

    let max_norm = traj.max_norm();
    let envelope = cfg.envelope_factor * x0.norm();
    let envelope_ok = traj.diverged_at.is_none() && max_norm <= envelope;
    let settle_max = traj.max_norm_from(cfg.settle_step);
    let settled = traj.diverged_at.is_none() && settle_max < cfg.settle_radius;

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.conf"), cfg.canonical())?;
    let final_kernel = adapter.kernel();
    let online_state = OnlineState {
        version: BUNDLE_VERSION,
        config_hash: cfg.hash(),
        kernel: kernel_row_major(&final_kernel),
        kernel_dim: final_kernel.dim(),
        machine: adapter.snapshot(),
    };
    std::fs::write(out_dir.join("state.json"), to_json(&online_state)?)?;
    traj.write_csv_path(&out_dir.join("trajectory.csv"))?;
    std::fs::write(out_dir.join("response.svg"), plot_trajectory(&traj)?)?;
    write_manifest(
        out_dir,
        cfg,
        "online",
        &["config.conf", "state.json", "trajectory.csv", "response.svg"],
    )?;

    let mut lines = Vec::new();
    if let Some(step) = traj.diverged_at {
        lines.push(format!(
            "online[{}] DIVERGED at step {step} (max |x| = {max_norm:.6})",
            cfg.name
        ));
    }
    lines.push(format!(
        "online[{}] {} steps, max |x| = {max_norm:.6}, envelope {envelope:.6} ({} * |x0|): {}",
        cfg.name,
        traj.rows.len(),
        cfg.envelope_factor,
        if envelope_ok { "PASS" } else { "FAIL" }
    ));
    lines.push(format!(
        "online[{}] settle max |x| over k >= {}: {settle_max:.6} (radius {}): {}",
        cfg.name,
        cfg.settle_step,
        cfg.settle_radius,
        if settled { "PASS" } else { "MISS" }
    ));
    lines.push(format!(
        "online[{}] held inputs = {}",
        cfg.name,
        adapter.holds()
    ));
    lines.push(format!(
        "online[{}] artifacts -> {}",
        cfg.name,
        out_dir.display()
    ));

    Ok(OnlineReport {
        out_dir: out_dir.to_path_buf(),
        steps: traj.rows.len(),
        max_norm,
        envelope,
        envelope_ok,
        diverged_at: traj.diverged_at,
        settle_max,
        settled,
        holds: adapter.holds(),
        lines,
    })
}

/// One line of the verification report.
#[derive(Debug)]
pub struct VerifyItem {
    pub label: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Outcome of [`run_verify`]: five items, each independently PASS/FAIL.
#[derive(Debug)]
pub struct VerifyReport {
    pub items: Vec<VerifyItem>,
    pub lines: Vec<String>,
    pub all_pass: bool,
}

impl VerifyReport {
    pub fn exit_error(&self) -> Option<Error> {
        if self.all_pass {
            None
        } else {
            let failed: Vec<_> = self
                .items
                .iter()
                .filter(|i| !i.pass)
                .map(|i| i.label)
                .collect();
            Some(Error::OracleFailure(format!(
                "verification failed: {}",
                failed.join(", ")
            )))
        }
    }
}

/// Tolerances for the verification items, pinned here so a report is
/// meaningful without its configuration.
const ORACLE_REL_TOL: f64 = 1e-3;
const ARGMIN_BOUND: f64 = 5.0;
const ARGMIN_STEP: f64 = 1e-3;
const ARGMIN_TOL: f64 = 2e-3;
const ARGMIN_TRIALS: usize = 100;
const CLOSED_LOOP_STEPS: u64 = 40;

/// Trains on the linear benchmark and checks the result against closed-form
/// ground truth: Riccati fixed point, monotone value iterates, grid argmin
/// agreement, measured one-step model error, and the a-priori value-gap
/// bound it implies. Any FAIL maps to a nonzero exit via `exit_error`.
pub fn run_verify(cfg: &Config, out_dir: Option<&Path>) -> Result<VerifyReport> {
    if cfg.plant != PlantKind::Linear {
        return Err(Error::Config(format!(
            "verification runs against the linear benchmark; got plant.model = {}",
            cfg.plant.name()
        )));
    }
    let cost = cfg.cost_spec()?;
    let plant = cfg.plant.build();
    let noise = NoiseSource::new(cfg.seed);
    let dataset = collect_episodes(plant.as_ref(), &cfg.collect_config(), &noise)?;
    let outcome = offline_train(&dataset, &cfg.base_gain_matrix(), &cost, &cfg.train_config())?;
    outcome.require_converged(&cfg.train_config())?;

    let reference = LinearDiscrete::reference();
    let oracle_plant = LinearPlant::new(reference.a.clone(), reference.b.clone())?;
    let (p_star, _gain) = discounted_riccati(&oracle_plant, &cost)?;

    let mut items = Vec::new();

    let rel = (&outcome.kernel.p - &p_star.p).norm() / p_star.p.norm();
    items.push(VerifyItem {
        label: "oracle_match",
        pass: rel <= ORACLE_REL_TOL,
        detail: format!("relative kernel error = {rel:.3e} (tolerance {ORACLE_REL_TOL:.0e})"),
    });

    let monotonicity = check_monotonicity(&outcome.history.kernels());
    items.push(VerifyItem {
        label: "monotone",
        pass: monotonicity.ok,
        detail: format!("worst decrease margin = {:.3e}", monotonicity.worst_margin),
    });

    let argmin_worst = argmin_cross_check(cfg.seed, &outcome.theta, &outcome.kernel, &cost);
    items.push(VerifyItem {
        label: "argmin_match",
        pass: argmin_worst <= ARGMIN_TOL,
        detail: format!(
            "max |du - grid argmin| = {argmin_worst:.3e} over {ARGMIN_TRIALS} states (tolerance {ARGMIN_TOL:.0e})"
        ),
    });

    let eps_ime = measured_model_error(cfg, &outcome.theta, &outcome.kernel, &cost, &dataset)?;
    items.push(VerifyItem {
        label: "ime_estimate",
        pass: eps_ime.is_finite(),
        detail: format!("one-step incremental model error = {eps_ime:.3e}"),
    });

    let radius = cfg.probe_radius;
    let gap = probe_grid()
        .iter()
        .map(|x| {
            let x = x * radius;
            (outcome.kernel.eval(&x) - p_star.eval(&x)).abs()
        })
        .fold(0.0, f64::max);
    let lipschitz = cost.lipschitz_on_ball(radius * 2.0_f64.sqrt());
    let bound = value_gap_bound(cost.gamma, lipschitz, eps_ime);
    items.push(VerifyItem {
        label: "value_bound",
        pass: gap <= bound,
        detail: format!("probe value gap = {gap:.3e} within bound {bound:.3e}"),
    });

    let all_pass = items.iter().all(|i| i.pass);
    let lines: Vec<String> = items
        .iter()
        .map(|i| {
            format!(
                "verify[{}] {} {}",
                i.label,
                if i.pass { "PASS" } else { "FAIL" },
                i.detail
            )
        })
        .collect();

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.conf"), cfg.canonical())?;
        let mut report = lines.join("\n");
        report.push('\n');
        std::fs::write(dir.join("report.txt"), report)?;
        write_manifest(dir, cfg, "verify", &["config.conf", "report.txt"])?;
    }

    Ok(VerifyReport {
        items,
        lines,
        all_pass,
    })
}

/// Compares the closed-form increment against an exhaustive grid search of
/// the one-step objective on random (state, increment, previous input)
/// triples. Returns the worst deviation.
fn argmin_cross_check(
    seed: u64,
    theta: &DMatrix<f64>,
    kernel: &QuadraticKernel,
    cost: &crate::valuefn::CostSpec,
) -> f64 {
    let n = kernel.dim();
    let m = theta.nrows() - n;
    let a_hat = theta.rows(0, n).transpose();
    let b_hat = theta.rows(n, m).transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6964);
    let mut worst: f64 = 0.0;
    for _ in 0..ARGMIN_TRIALS {
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let dx = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let u_prev = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..=1.0));
        let du = improve_policy_increment(&x, &u_prev, &dx, theta, kernel, cost)
            .expect("improvement must succeed on a PSD kernel");
        let objective = |cand: f64| {
            let du_v = DVector::from_element(m, cand);
            let u = &u_prev + &du_v;
            let x_next = &x + &a_hat * &dx + &b_hat * &du_v;
            cost.stage_cost(&x, &u) + cost.gamma * kernel.eval(&x_next)
        };
        let grid = brute_force_argmin(objective, -ARGMIN_BOUND, ARGMIN_BOUND, ARGMIN_STEP);
        worst = worst.max((du[0] - grid).abs());
    }
    worst
}

/// ε̂: the largest one-step incremental prediction residual of the identified
/// model, over both the excitation episodes and a fresh closed-loop run of
/// the trained policy from the probe-region corner.
fn measured_model_error(
    cfg: &Config,
    theta: &DMatrix<f64>,
    kernel: &QuadraticKernel,
    cost: &crate::valuefn::CostSpec,
    dataset: &Dataset,
) -> Result<f64> {
    let mut eps: f64 = 0.0;
    for ep in &dataset.episodes {
        eps = eps.max(estimate_model_error(theta, &ep.states, &ep.inputs, 0)?);
    }
    let mut policy = IncrementalPolicy::new(
        theta.clone(),
        kernel.clone(),
        cost.clone(),
        cfg.input_box()?,
    )?;
    let plant = cfg.plant.build();
    let x0 = DVector::from_element(kernel.dim(), cfg.probe_radius);
    let noise = NoiseSource::new(cfg.seed);
    let traj = rollout(
        plant.as_ref(),
        &mut policy,
        &x0,
        CLOSED_LOOP_STEPS,
        &noise,
        &RolloutOptions::default(),
    )?;
    let (states, inputs) = trajectory_sequences(&traj);
    eps = eps.max(estimate_model_error(theta, &states, &inputs, 0)?);
    Ok(eps)
}

/// Splits a recorded trajectory into the (L+1 states, L inputs) form the
/// model-error estimator expects. The final state is reconstructed from the
/// last row's successor via one extra plant step having already been taken
/// by the rollout, so only the recorded rows are used: L−1 inputs pair with
/// L states, dropping the last recorded input.
fn trajectory_sequences(traj: &Trajectory) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let states: Vec<_> = traj.rows.iter().map(|r| r.x.clone()).collect();
    let inputs: Vec<_> = traj
        .rows
        .iter()
        .take(traj.rows.len().saturating_sub(1))
        .map(|r| r.u.clone())
        .collect();
    (states, inputs)
}

/// Outcome of [`run_sweep`]: per-configuration summary lines in input order.
/// `exit_code` is the exit status of the first failed configuration, if any.
#[derive(Debug)]
pub struct SweepReport {
    pub lines: Vec<String>,
    pub failures: usize,
    pub exit_code: Option<i32>,
}

/// Runs one offline training per configuration file, `jobs` at a time, each
/// into its own bundle directory. Workers share nothing but the work list,
/// so results are independent of scheduling; the report is ordered by input.
pub fn run_sweep(paths: &[PathBuf], jobs: usize, out_base: Option<&Path>) -> Result<SweepReport> {
    if paths.is_empty() {
        return Err(Error::Config("sweep needs at least one configuration".into()));
    }
    let jobs = jobs.clamp(1, paths.len());
    let next = AtomicUsize::new(0);
    // One slot per configuration: the summary line plus the exit code of a
    // failed run.
    type SweepSlot = Option<(String, Option<i32>)>;
    let results: Mutex<Vec<SweepSlot>> = Mutex::new(vec![None; paths.len()]);

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= paths.len() {
                    break;
                }
                let entry = sweep_one(&paths[i], out_base);
                results.lock().expect("sweep worker panicked")[i] = Some(entry);
            });
        }
    });

    let mut lines = Vec::new();
    let mut failures = 0;
    let mut exit_code = None;
    for entry in results.into_inner().expect("sweep worker panicked") {
        let (line, code) = entry.expect("every sweep slot is filled");
        if let Some(code) = code {
            failures += 1;
            if exit_code.is_none() {
                exit_code = Some(code);
            }
        }
        lines.push(line);
    }
    Ok(SweepReport {
        lines,
        failures,
        exit_code,
    })
}

fn sweep_one(path: &Path, out_base: Option<&Path>) -> (String, Option<i32>) {
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let run = || -> Result<OfflineReport> {
        let cfg = Config::load(path)?;
        let out = match out_base {
            Some(base) => base.join(&label),
            None => resolve_out_dir(&cfg, None),
        };
        let report = run_offline(&cfg, &out)?;
        if let Some(err) = report.exit_error() {
            return Err(err);
        }
        Ok(report)
    };
    match run() {
        Ok(report) => (
            format!(
                "sweep[{label}] converged in {} iterations -> {}",
                report.iterations,
                report.out_dir.display()
            ),
            None,
        ),
        Err(err) => (
            format!("sweep[{label}] FAILED ({}): {err}", err.exit_code()),
            Some(err.exit_code()),
        ),
    }
}
