//! Benchmark plants, excitation signals, noise, and the rollout engine.
//!
//! Everything here is deterministic given (seed, step index): process noise
//! is generated counter-style, one independently-seeded draw per step, so a
//! trajectory is a pure function of its configuration. That is what makes
//! byte-identical artifact reproduction possible.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::valuefn::CostSpec;

pub type StateVec = DVector<f64>;
pub type ControlVec = DVector<f64>;

/// Sample period of the discrete-time benchmarks. The disturbance clock in
/// the drifting plant is defined in these units (t_k = k·DT).
pub const DT: f64 = 1.0;

/// Counter-based Gaussian noise: w(k) is a standard-normal draw from a
/// generator seeded by (seed, k) alone, so any step's noise can be
/// regenerated without replaying the sequence and identical configurations
/// produce identical trajectories.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSource {
    pub seed: u64,
    pub enabled: bool,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            enabled: true,
        }
    }

    pub fn disabled() -> Self {
        Self {
            seed: 0,
            enabled: false,
        }
    }

    /// Standard-normal draw for step k (0 when disabled).
    pub fn sample(&self, k: u64) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k);
        StandardNormal.sample(&mut rng)
    }
}

/// Discrete-time plant interface. `k` is the step index (the plants that
/// carry an internal disturbance clock read it; time-invariant ones ignore
/// it), `noise` supplies the per-step process noise.
pub trait Plant {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &StateVec, u: &ControlVec, k: u64, noise: &NoiseSource) -> StateVec;
}

/// Nonlinear oscillator with strong damping:
/// x₁⁺ = x₂, x₂⁺ = −2x₁ − 3x₂ + sin x₁ + u.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelA;

/// One step of [`ModelA`].
pub fn step_model_a(x: &StateVec, u: &ControlVec) -> StateVec {
    DVector::from_vec(vec![
        x[1],
        -2.0 * x[0] - 3.0 * x[1] + x[0].sin() + u[0],
    ])
}

impl Plant for ModelA {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn step(&self, x: &StateVec, u: &ControlVec, _k: u64, _noise: &NoiseSource) -> StateVec {
        step_model_a(x, u)
    }
}

/// Lightly damped oscillator with reduced input gain and an unmeasured
/// drifting disturbance:
/// x₁⁺ = x₂, x₂⁺ = −2x₁ − 0.5x₂ + sin x₁ + 0.2u + u_d(k),
/// u_d(k) = 0.2·sin(0.1·t_k) + 0.1·w(k), t_k = k·DT, w ~ N(0,1).
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelB;

/// One step of [`ModelB`] with the disturbance sample supplied explicitly.
pub fn step_model_b(x: &StateVec, u: &ControlVec, k: u64, w: f64) -> StateVec {
    let u_d = 0.2 * (0.1 * k as f64 * DT).sin() + 0.1 * w;
    DVector::from_vec(vec![
        x[1],
        -2.0 * x[0] - 0.5 * x[1] + x[0].sin() + 0.2 * u[0] + u_d,
    ])
}

impl Plant for ModelB {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn step(&self, x: &StateVec, u: &ControlVec, k: u64, noise: &NoiseSource) -> StateVec {
        step_model_b(x, u, k, noise.sample(k))
    }
}

/// Linear time-invariant plant x⁺ = Ax + Bu, the verification benchmark.
#[derive(Debug, Clone)]
pub struct LinearDiscrete {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearDiscrete {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.nrows() {
            return Err(Error::Config("linear plant dimension mismatch".into()));
        }
        Ok(Self { a, b })
    }

    /// The damped-oscillator data matrix used throughout verification:
    /// A = \[\[0, 1\], \[−2, −3\]\], B = \[\[0\], \[1\]\].
    pub fn reference() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        }
    }
}

impl Plant for LinearDiscrete {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &StateVec, u: &ControlVec, _k: u64, _noise: &NoiseSource) -> StateVec {
        &self.a * x + &self.b * u
    }
}

/// Multisine probing signal e(k) = Σᵢ aᵢ·sin(ωᵢ·k·DT + φᵢ).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl ExcitationSpec {
    pub fn new(amplitudes: Vec<f64>, frequencies: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != frequencies.len() || amplitudes.len() != phases.len() {
            return Err(Error::Config(
                "excitation amplitude/frequency/phase lists must have equal length".into(),
            ));
        }
        if amplitudes
            .iter()
            .chain(&frequencies)
            .chain(&phases)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("excitation parameters must be finite".into()));
        }
        Ok(Self {
            amplitudes,
            frequencies,
            phases,
        })
    }

    pub fn value(&self, k: u64) -> f64 {
        excitation_input(self, k)
    }
}

/// Evaluate the multisine at step k.
pub fn excitation_input(spec: &ExcitationSpec, k: u64) -> f64 {
    let t = k as f64 * DT;
    spec.amplitudes
        .iter()
        .zip(&spec.frequencies)
        .zip(&spec.phases)
        .map(|((a, w), p)| a * (w * t + p).sin())
        .sum()
}

/// One controller decision: the absolute input, its increment over the
/// previous input, and (when the controller carries a value model) the
/// predicted cost-to-go at the current state.
#[derive(Debug, Clone)]
pub struct ControlAction {
    pub u: ControlVec,
    pub du: ControlVec,
    pub value_est: Option<f64>,
}

/// Feedback controller interface for the rollout engine. Implementations own
/// whatever internal state they need (previous input, adaptation state);
/// errors propagate out of the rollout.
pub trait Controller {
    fn act(&mut self, x: &StateVec, k: u64) -> Result<ControlAction>;
}

/// Static linear state feedback u = Gx (direct convention: pass −K to run
/// the u = −Kx form used by the verification solvers), with an optional
/// additive probing signal.
#[derive(Debug, Clone)]
pub struct LinearPolicy {
    pub gain: DMatrix<f64>,
    pub excitation: Option<ExcitationSpec>,
    u_prev: ControlVec,
}

impl LinearPolicy {
    pub fn new(gain: DMatrix<f64>) -> Self {
        let m = gain.nrows();
        Self {
            gain,
            excitation: None,
            u_prev: DVector::zeros(m),
        }
    }

    pub fn with_excitation(gain: DMatrix<f64>, excitation: ExcitationSpec) -> Self {
        let m = gain.nrows();
        Self {
            gain,
            excitation: Some(excitation),
            u_prev: DVector::zeros(m),
        }
    }
}

impl Controller for LinearPolicy {
    fn act(&mut self, x: &StateVec, k: u64) -> Result<ControlAction> {
        let mut u = &self.gain * x;
        if let Some(spec) = &self.excitation {
            u[0] += excitation_input(spec, k);
        }
        let du = &u - &self.u_prev;
        self.u_prev = u.clone();
        Ok(ControlAction {
            u,
            du,
            value_est: None,
        })
    }
}

/// Rollout settings. The blow-up guard truncates a diverging simulation and
/// marks the trajectory rather than erroring, so callers can inspect how far
/// it got; stage costs and discounting are recorded when a cost is supplied.
#[derive(Debug, Clone)]
pub struct RolloutOptions {
    pub blowup_radius: f64,
    pub cost: Option<CostSpec>,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            blowup_radius: 1e6,
            cost: None,
        }
    }
}

/// One recorded simulation step.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub k: u64,
    pub x: StateVec,
    pub u: ControlVec,
    pub du: ControlVec,
    pub stage_cost: f64,
    pub value_est: Option<f64>,
}

/// A recorded closed-loop run. `diverged_at` is set when the blow-up guard
/// fired; the rows then end at the offending step.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    pub diverged_at: Option<u64>,
}

impl Trajectory {
    pub fn max_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.x.norm()).fold(0.0, f64::max)
    }

    /// Largest state norm over steps k ≥ from.
    pub fn max_norm_from(&self, from: u64) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.k >= from)
            .map(|r| r.x.norm())
            .fold(0.0, f64::max)
    }

    pub fn final_norm(&self) -> f64 {
        self.rows.last().map(|r| r.x.norm()).unwrap_or(0.0)
    }

    /// Realized discounted cost Σ γᵏ·ℓ(x_k, u_k) over the recorded rows
    /// (meaningful when the rollout was given a cost spec).
    pub fn discounted_cost(&self, gamma: f64) -> f64 {
        self.rows
            .iter()
            .map(|r| gamma.powi(r.k as i32) * r.stage_cost)
            .sum()
    }

    /// Serialize as CSV with the fixed trajectory schema
    /// `k,x1,x2,u,du,stage_cost,value_est` (two states, one input).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "x1", "x2", "u", "du", "stage_cost", "value_est"])?;
        for r in &self.rows {
            if r.x.len() != 2 || r.u.len() != 1 {
                return Err(Error::Input(
                    "trajectory CSV schema covers two-state single-input runs".into(),
                ));
            }
            let value = r.value_est.map(|v| format!("{v:.17e}")).unwrap_or_default();
            w.write_record([
                r.k.to_string(),
                format!("{:.17e}", r.x[0]),
                format!("{:.17e}", r.x[1]),
                format!("{:.17e}", r.u[0]),
                format!("{:.17e}", r.du[0]),
                format!("{:.17e}", r.stage_cost),
                value,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        let expected = ["k", "x1", "x2", "u", "du", "stage_cost", "value_est"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Input(format!(
                "unexpected trajectory CSV header: {headers:?}"
            )));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let field = |i: usize| -> Result<f64> {
                record[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Input(format!("bad trajectory field {i}: {e}")))
            };
            let value_est = if record[6].is_empty() {
                None
            } else {
                Some(field(6)?)
            };
            rows.push(TrajectoryRow {
                k: record[0]
                    .parse::<u64>()
                    .map_err(|e| Error::Input(format!("bad step index: {e}")))?,
                x: DVector::from_vec(vec![field(1)?, field(2)?]),
                u: DVector::from_element(1, field(3)?),
                du: DVector::from_element(1, field(4)?),
                stage_cost: field(5)?,
                value_est,
            });
        }
        Ok(Self {
            rows,
            diverged_at: None,
        })
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }
}

/// Closed-loop simulation for `horizon` steps: at each k the controller maps
/// x_k to u_k, the row is recorded, and the plant advances. Truncates with
/// the divergence flag set as soon as ‖x‖ exceeds the blow-up radius.
pub fn rollout(
    plant: &dyn Plant,
    controller: &mut dyn Controller,
    x0: &StateVec,
    horizon: u64,
    noise: &NoiseSource,
    opts: &RolloutOptions,
) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    let mut x = x0.clone();
    for k in 0..horizon {
        if !x.iter().all(|v| v.is_finite()) || x.norm() > opts.blowup_radius {
            traj.diverged_at = Some(k);
            break;
        }
        let action = controller.act(&x, k)?;
        let stage_cost = opts
            .cost
            .as_ref()
            .map(|c| c.stage_cost(&x, &action.u))
            .unwrap_or(f64::NAN);
        traj.rows.push(TrajectoryRow {
            k,
            x: x.clone(),
            u: action.u.clone(),
            du: action.du,
            stage_cost,
            value_est: action.value_est,
        });
        x = plant.step(&x, &action.u, k, noise);
    }
    Ok(traj)
}
