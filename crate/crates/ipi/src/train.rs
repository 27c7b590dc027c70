//! Offline training: excitation-episode collection, batch identification,
//! warm-start certification, and the policy-iteration loop.
//!
//! Training alternates least-squares policy evaluation (on the fixed
//! excitation dataset, with successor states predicted by the identified
//! incremental model) with exact incremental policy improvement. The first
//! evaluation is anchored on a certified quadratic upper bound W⁰ = c·I
//! rather than zero: starting below the true value would force the iterates
//! to *rise* toward it and the non-increase guarantee would be vacuous,
//! whereas a certified supersolution makes every subsequent iterate decrease
//! toward the optimum.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

use crate::diag::probe_grid;
use crate::error::{Error, Result};
use crate::policy::improve_policy_increment;
use crate::rls::{batch_ls, DEFAULT_RIDGE};
use crate::sysmodels::{ControlVec, ExcitationSpec, NoiseSource, Plant, StateVec};
use crate::valuefn::{
    fit_kernel_batch, predict_next_state, theta_blocks, CostSpec, EvalSample, QuadraticKernel,
};

/// One excitation episode: states x₀..x_L and the inputs u₀..u_{L−1} that
/// produced them.
#[derive(Debug, Clone)]
pub struct Episode {
    pub states: Vec<StateVec>,
    pub inputs: Vec<ControlVec>,
}

impl Episode {
    pub fn new(states: Vec<StateVec>, inputs: Vec<ControlVec>) -> Result<Self> {
        if states.len() != inputs.len() + 1 {
            return Err(Error::Input(format!(
                "{} states with {} inputs do not form an episode",
                states.len(),
                inputs.len()
            )));
        }
        Ok(Self { states, inputs })
    }
}

/// A point at which value targets can be formed: the state, the increment
/// that led to it, and the input applied one step earlier.
#[derive(Debug, Clone)]
pub struct EvalPoint {
    pub x: StateVec,
    pub dx: StateVec,
    pub u_prev: ControlVec,
}

/// Collected excitation data.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
}

impl Dataset {
    /// Incremental regression pairs X = [Δx_k; Δu_k] → Δx_{k+1}, pooled
    /// across episodes (interior steps only: each episode of L inputs
    /// yields L−1 pairs).
    pub fn regression_pairs(&self) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for ep in &self.episodes {
            let n = ep.states[0].len();
            let m = ep.inputs[0].len();
            for k in 1..ep.inputs.len() {
                let mut reg = DVector::zeros(n + m);
                reg.rows_mut(0, n)
                    .copy_from(&(&ep.states[k] - &ep.states[k - 1]));
                reg.rows_mut(n, m)
                    .copy_from(&(&ep.inputs[k] - &ep.inputs[k - 1]));
                xs.push(reg);
                ys.push(&ep.states[k + 1] - &ep.states[k]);
            }
        }
        (xs, ys)
    }

    /// The same interior steps exposed as evaluation points.
    pub fn eval_points(&self) -> Vec<EvalPoint> {
        let mut pts = Vec::new();
        for ep in &self.episodes {
            for k in 1..ep.inputs.len() {
                pts.push(EvalPoint {
                    x: ep.states[k].clone(),
                    dx: &ep.states[k] - &ep.states[k - 1],
                    u_prev: ep.inputs[k - 1].clone(),
                });
            }
        }
        pts
    }

    pub fn sample_count(&self) -> usize {
        self.episodes
            .iter()
            .map(|e| e.inputs.len().saturating_sub(1))
            .sum()
    }
}

/// Excitation-collection plan: many short episodes with random starts and
/// per-episode random multisine phases. Short episodes keep the state near
/// the origin where the local linear model is accurate; fresh starts and
/// phases spread the increments over all regression directions.
#[derive(Debug, Clone)]
pub struct CollectConfig {
    pub episodes: usize,
    /// Inputs per episode (states per episode = this + 1).
    pub episode_len: usize,
    /// Initial states drawn uniformly from [−x0_box, x0_box]ⁿ.
    pub x0_box: f64,
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            episodes: 60,
            episode_len: 3,
            x0_box: 0.25,
            amplitudes: vec![0.4, 0.2],
            frequencies: vec![0.7, 1.3],
            seed: 7,
        }
    }
}

/// Runs the excitation plan against a plant. Inputs are open-loop multisines
/// (no feedback term: feedback would correlate Δu with Δx and degrade the
/// regression conditioning at these short horizons).
pub fn collect_episodes(
    plant: &dyn Plant,
    cfg: &CollectConfig,
    noise: &NoiseSource,
) -> Result<Dataset> {
    if cfg.amplitudes.len() != cfg.frequencies.len() {
        return Err(Error::Config(
            "excitation amplitude/frequency lists must have equal length".into(),
        ));
    }
    if cfg.episode_len < 2 {
        return Err(Error::Config(
            "episodes need at least two inputs to form increments".into(),
        ));
    }
    let n = plant.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for _ in 0..cfg.episodes {
        let mut x = DVector::from_fn(n, |_, _| rng.gen_range(-cfg.x0_box..cfg.x0_box));
        let phases: Vec<f64> = (0..cfg.amplitudes.len())
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let spec = ExcitationSpec::new(
            cfg.amplitudes.clone(),
            cfg.frequencies.clone(),
            phases,
        )?;
        let mut states = vec![x.clone()];
        let mut inputs = Vec::with_capacity(cfg.episode_len);
        for k in 0..cfg.episode_len {
            let u = DVector::from_element(plant.input_dim(), spec.value(k as u64));
            x = plant.step(&x, &u, k as u64, noise);
            inputs.push(u);
            states.push(x.clone());
        }
        episodes.push(Episode::new(states, inputs)?);
    }
    Ok(Dataset { episodes })
}

/// One application of the model-based value update
/// T̂(W) = Q + γÂᵀWÂ − γ²ÂᵀWB̂(R + γB̂ᵀWB̂)⁻¹B̂ᵀWÂ
/// on the identified parameters — the quadratic-class Bellman update the
/// warm-start certificate is checked against.
fn model_value_update(
    w: &DMatrix<f64>,
    a_hat: &DMatrix<f64>,
    b_hat: &DMatrix<f64>,
    cost: &CostSpec,
) -> Result<DMatrix<f64>> {
    let g = cost.gamma;
    let s = &cost.r + g * b_hat.transpose() * w * b_hat;
    let chol = s.cholesky().ok_or_else(|| {
        Error::PolicyImprovement("R + γB̂ᵀWB̂ not positive definite in value update".into())
    })?;
    let cross = g * a_hat.transpose() * w * b_hat;
    let next = &cost.q + g * a_hat.transpose() * w * a_hat
        - &cross * chol.solve(&cross.transpose());
    Ok((&next + next.transpose()) * 0.5)
}

/// Relative certification margin required of the warm start: the scaled
/// identity must dominate its own value update by at least this fraction
/// of itself in the Loewner order.
pub const SUPERSOLUTION_MARGIN: f64 = 0.05;

/// Smallest doubling of c such that W = c·I satisfies
/// min eig(W − T̂(W)) > margin·c on the identified model, starting from the
/// stage-cost scale of the startup gain. Such a W upper-bounds the optimal
/// value on the model, so evaluation iterates started from it can only
/// come down.
pub fn supersolution_scale(
    theta: &DMatrix<f64>,
    base_gain: &DMatrix<f64>,
    cost: &CostSpec,
) -> Result<f64> {
    let n = theta.ncols();
    let (a_hat, b_hat) = theta_blocks(theta, n);
    let mut c = cost.q.trace() + (&cost.r * base_gain * base_gain.transpose()).trace();
    for _ in 0..60 {
        let w = DMatrix::identity(n, n) * c;
        let updated = model_value_update(&w, &a_hat, &b_hat, cost)?;
        let min_eig = (w - updated)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig > SUPERSOLUTION_MARGIN * c {
            return Ok(c);
        }
        c *= 2.0;
    }
    Err(Error::EvaluationDiverges(
        "no scaled identity certifies as a value upper bound on the identified model; \
         the model admits no cheap stabilizing policy"
            .into(),
    ))
}

/// One recorded training iteration.
#[derive(Debug, Clone)]
pub struct TrainingRecord {
    pub iteration: usize,
    pub kernel: QuadraticKernel,
    /// ‖P_i − P_{i−1}‖_F; NaN on the initial evaluation, which has no
    /// predecessor.
    pub delta_frobenius: f64,
    /// max over the probe grid of the iterate's value.
    pub probe_value_max: f64,
}

/// Full iterate history of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainingHistory {
    pub records: Vec<TrainingRecord>,
}

impl TrainingHistory {
    pub fn kernels(&self) -> Vec<QuadraticKernel> {
        self.records.iter().map(|r| r.kernel.clone()).collect()
    }

    pub fn final_kernel(&self) -> Option<&QuadraticKernel> {
        self.records.last().map(|r| &r.kernel)
    }

    /// CSV schema: `iteration,p11,p12,p22,delta_frobenius,probe_value_max`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iteration",
            "p11",
            "p12",
            "p22",
            "delta_frobenius",
            "probe_value_max",
        ])?;
        for r in &self.records {
            if r.kernel.dim() != 2 {
                return Err(Error::Input(
                    "training CSV schema covers two-state kernels".into(),
                ));
            }
            w.write_record([
                r.iteration.to_string(),
                format!("{:.17e}", r.kernel.p[(0, 0)]),
                format!("{:.17e}", r.kernel.p[(0, 1)]),
                format!("{:.17e}", r.kernel.p[(1, 1)]),
                format!("{:.17e}", r.delta_frobenius),
                format!("{:.17e}", r.probe_value_max),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let expected = [
            "iteration",
            "p11",
            "p12",
            "p22",
            "delta_frobenius",
            "probe_value_max",
        ];
        if reader.headers()?.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Input("unexpected training history header".into()));
        }
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let f = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|e| Error::Input(format!("bad history field {i}: {e}")))
            };
            let p = DMatrix::from_row_slice(2, 2, &[f(1)?, f(2)?, f(2)?, f(3)?]);
            records.push(TrainingRecord {
                iteration: rec[0]
                    .parse()
                    .map_err(|e| Error::Input(format!("bad iteration index: {e}")))?,
                kernel: QuadraticKernel::new(p, f64::NAN)?,
                delta_frobenius: f(4)?,
                probe_value_max: f(5)?,
            });
        }
        Ok(Self { records })
    }
}

/// Training loop settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Stop when the kernel's Frobenius delta falls below this.
    pub tau_p: f64,
    pub max_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau_p: 1e-6,
            max_iterations: 200,
        }
    }
}

/// Everything a finished (or capped) training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Identified incremental model, stacked [Â B̂]ᵀ.
    pub theta: DMatrix<f64>,
    /// Final value kernel.
    pub kernel: QuadraticKernel,
    pub history: TrainingHistory,
    /// Warm-start scale c of W⁰ = c·I.
    pub warm_start_scale: f64,
    pub converged: bool,
    /// Any iterate tripped the kernel definiteness warning.
    pub psd_warnings: usize,
}

impl TrainOutcome {
    /// Converts a capped run into the corresponding error (history and
    /// artifacts stay available on `self` for inspection/serialization).
    pub fn require_converged(&self, cfg: &TrainConfig) -> Result<()> {
        if self.converged {
            return Ok(());
        }
        Err(Error::Unconverged {
            max_iterations: cfg.max_iterations,
            last_delta: self
                .history
                .records
                .last()
                .map(|r| r.delta_frobenius)
                .unwrap_or(f64::NAN),
        })
    }
}

/// Offline incremental policy iteration on a collected dataset.
///
/// 1. Batch-identify Θ̂ = [Â B̂]ᵀ from the pooled increments.
/// 2. Certify a warm start W⁰ = c·I via [`supersolution_scale`].
/// 3. Evaluate the startup policy u = base_gain·x against W⁰ to get P⁽⁰⁾.
/// 4. Alternate incremental improvement and least-squares evaluation until
///    ‖P_i − P_{i−1}‖_F < τ_P or the iteration cap.
///
/// A capped run returns with `converged = false` rather than an error so the
/// history can still be persisted; see [`TrainOutcome::require_converged`].
pub fn offline_train(
    dataset: &Dataset,
    base_gain: &DMatrix<f64>,
    cost: &CostSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let (regs, obs) = dataset.regression_pairs();
    let theta = batch_ls(&regs, &obs, DEFAULT_RIDGE)?;
    let n = theta.ncols();
    cost.check_dims(n, theta.nrows() - n)?;

    let c = supersolution_scale(&theta, base_gain, cost)?;
    let warm = QuadraticKernel::new(DMatrix::identity(n, n) * c, cost.gamma)?;
    let points = dataset.eval_points();
    let grid = probe_grid();
    let probe_max = |k: &QuadraticKernel| grid.iter().map(|x| k.eval(x)).fold(0.0, f64::max);

    // Initial evaluation: value of the startup policy, bootstrapped on the
    // certified upper bound.
    let init_samples: Vec<EvalSample> = points
        .iter()
        .map(|pt| {
            let u = base_gain * &pt.x;
            let du = &u - &pt.u_prev;
            let x_hat = predict_next_state(&pt.x, &pt.dx, &du, &theta);
            EvalSample {
                x: pt.x.clone(),
                u,
                x_next_hat: x_hat,
            }
        })
        .collect();
    let fit = fit_kernel_batch(&init_samples, &warm, cost)?;
    let mut psd_warnings = usize::from(fit.psd_warning);
    let mut history = TrainingHistory::default();
    history.records.push(TrainingRecord {
        iteration: 0,
        probe_value_max: probe_max(&fit.kernel),
        kernel: fit.kernel,
        delta_frobenius: f64::NAN,
    });

    let mut converged = false;
    for i in 1..=cfg.max_iterations {
        let prev = history.records.last().unwrap().kernel.clone();
        let mut samples = Vec::with_capacity(points.len());
        for pt in &points {
            let du = improve_policy_increment(&pt.x, &pt.u_prev, &pt.dx, &theta, &prev, cost)?;
            let u = &pt.u_prev + &du;
            let x_hat = predict_next_state(&pt.x, &pt.dx, &du, &theta);
            samples.push(EvalSample {
                x: pt.x.clone(),
                u,
                x_next_hat: x_hat,
            });
        }
        let fit = fit_kernel_batch(&samples, &prev, cost)?;
        psd_warnings += usize::from(fit.psd_warning);
        let delta = (&fit.kernel.p - &prev.p).norm();
        history.records.push(TrainingRecord {
            iteration: i,
            probe_value_max: probe_max(&fit.kernel),
            kernel: fit.kernel,
            delta_frobenius: delta,
        });
        if delta < cfg.tau_p {
            converged = true;
            break;
        }
    }

    let kernel = history.final_kernel().unwrap().clone();
    Ok(TrainOutcome {
        theta,
        kernel,
        history,
        warm_start_scale: c,
        converged,
        psd_warnings,
    })
}
