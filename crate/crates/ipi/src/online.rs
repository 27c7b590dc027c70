//! Online adaptation: a strictly sequential state machine that fuses
//! per-step model identification, recursive value evaluation, and
//! incremental policy improvement.
//!
//! Per observed state x_k the machine (1) forms Δx_k, (2) updates the
//! incremental-model estimate on the *previous* transition, (3) updates the
//! value kernel on the bootstrapped Bellman target for that transition,
//! (4) improves the input increment against a positive-semidefinite
//! projection of the current kernel, and (5) emits u_k = u_{k−1} + Δu_k.
//! Updates therefore begin on the third observation — the first two steps
//! have no completed increment pair to learn from.
//!
//! Failures inside a step (a degraded identifier, an improvement the kernel
//! cannot support) do not kill the loop: the machine repeats the previous
//! input — the neutral action in increment form — flags the event, and stays
//! usable. The projection in (4) is a *local copy* for the improvement; the
//! evaluator keeps its raw estimate so transient indefiniteness can wash out
//! instead of being baked in.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{improve_policy_increment, InputBox};
use crate::rls::{RlsConfig, RlsIdentifier};
use crate::sysmodels::{ControlAction, ControlVec, Controller, StateVec};
use crate::valuefn::{fit_kernel_recursive, theta_blocks, CostSpec, KernelRls, QuadraticKernel};

/// Forgetting/covariance settings for the two online estimators.
///
/// The model identifier forgets faster (it must track plant drift) and
/// starts with a wider covariance than the value estimator, which is seeded
/// from a trusted offline kernel and should move slowly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub model_rls: RlsConfig,
    pub kernel_rls: RlsConfig,
    pub input_box: Option<InputBox>,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            model_rls: RlsConfig {
                kappa: 0.98,
                lambda0: 10.0,
            },
            kernel_rls: RlsConfig {
                kappa: 0.995,
                lambda0: 1.0,
            },
            input_box: None,
        }
    }
}

/// What one adaptation step did.
#[derive(Debug)]
pub struct StepReport {
    pub k: u64,
    pub u: ControlVec,
    pub du: ControlVec,
    /// ‖innovation‖ of the model update; `None` before updates begin or on a
    /// held step.
    pub model_innovation: Option<f64>,
    /// Innovation of the value update; same availability as above.
    pub value_innovation: Option<f64>,
    /// The improvement ran against a projected copy because the raw kernel
    /// had a negative eigenvalue.
    pub projected: bool,
    /// Failure that made this step hold the previous input, if any.
    pub held: Option<Error>,
    /// Value estimate at the current state under the kernel the improvement
    /// used.
    pub value_est: f64,
}

/// The online adaptation state machine. One mutator at a time; move it
/// freely, never share it.
#[derive(Debug, Clone)]
pub struct OnlineAdapter {
    identifier: RlsIdentifier,
    evaluator: KernelRls,
    cost: CostSpec,
    input_box: Option<InputBox>,
    x_prev: Option<StateVec>,
    dx_prev: Option<StateVec>,
    du_prev: Option<ControlVec>,
    u_prev: ControlVec,
    k: u64,
    holds: u64,
}

impl OnlineAdapter {
    /// Seeds the machine from offline training outputs: the identified
    /// stacked model estimate and the trained value kernel.
    pub fn new(
        theta0: DMatrix<f64>,
        kernel0: QuadraticKernel,
        cost: CostSpec,
        cfg: &OnlineConfig,
    ) -> Result<Self> {
        let n = kernel0.dim();
        if theta0.ncols() != n || theta0.nrows() <= n {
            return Err(Error::Config(format!(
                "model estimate {}×{} inconsistent with {n}-dimensional kernel",
                theta0.nrows(),
                theta0.ncols()
            )));
        }
        let m = theta0.nrows() - n;
        cost.check_dims(n, m)?;
        if kernel0.gamma != cost.gamma {
            return Err(Error::Config(format!(
                "kernel discount {} disagrees with cost discount {}",
                kernel0.gamma, cost.gamma
            )));
        }
        Ok(Self {
            identifier: RlsIdentifier::with_initial(theta0, &cfg.model_rls)?,
            evaluator: KernelRls::with_kernel(&kernel0, &cfg.kernel_rls)?,
            cost,
            input_box: cfg.input_box,
            x_prev: None,
            dx_prev: None,
            du_prev: None,
            u_prev: DVector::zeros(m),
            k: 0,
            holds: 0,
        })
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        self.identifier.theta()
    }

    pub fn kernel(&self) -> QuadraticKernel {
        self.evaluator.kernel()
    }

    pub fn identifier(&self) -> &RlsIdentifier {
        &self.identifier
    }

    pub fn evaluator(&self) -> &KernelRls {
        &self.evaluator
    }

    pub fn steps(&self) -> u64 {
        self.k
    }

    /// Count of steps that held the previous input after a failure.
    pub fn holds(&self) -> u64 {
        self.holds
    }

    /// One adaptation step on the observed state. Structural misuse (wrong
    /// state dimension) is an error; runtime failures hold the input and are
    /// carried in the report instead.
    pub fn step(&mut self, x: &StateVec) -> Result<StepReport> {
        let n = self.evaluator.kernel().dim();
        if x.len() != n {
            return Err(Error::Input(format!(
                "observed state has dimension {}, expected {n}",
                x.len()
            )));
        }

        let dx = match &self.x_prev {
            Some(prev) => x - prev,
            None => DVector::zeros(n),
        };

        let mut held: Option<Error> = None;
        let mut model_innovation = None;
        let mut value_innovation = None;

        // Learn from the completed previous transition, when there is one.
        if let (Some(dx_prev), Some(du_prev), Some(x_prev)) =
            (&self.dx_prev, &self.du_prev, &self.x_prev)
        {
            let mut regressor = DVector::zeros(dx_prev.len() + du_prev.len());
            regressor.rows_mut(0, dx_prev.len()).copy_from(dx_prev);
            regressor
                .rows_mut(dx_prev.len(), du_prev.len())
                .copy_from(du_prev);
            match self.identifier.update(&regressor, &dx) {
                Ok(innov) => {
                    model_innovation = Some(innov.norm());
                    let (a_hat, b_hat) = theta_blocks(self.identifier.theta(), n);
                    let x_hat = x_prev + a_hat * dx_prev + b_hat * du_prev;
                    match fit_kernel_recursive(
                        &mut self.evaluator,
                        x_prev,
                        &self.u_prev,
                        &x_hat,
                        &self.cost,
                    ) {
                        Ok(innov) => value_innovation = Some(innov),
                        Err(e) => held = Some(e),
                    }
                }
                Err(e) => held = Some(e),
            }
        }

        // Improve against a definiteness-repaired copy of the kernel; the
        // evaluator itself keeps the raw estimate.
        let raw = self.evaluator.kernel();
        let projected = raw.min_eigenvalue() < 0.0;
        let improve_kernel = if projected { raw.psd_projected() } else { raw };

        let du = if held.is_some() {
            DVector::zeros(self.u_prev.len())
        } else {
            match improve_policy_increment(
                x,
                &self.u_prev,
                &dx,
                self.identifier.theta(),
                &improve_kernel,
                &self.cost,
            ) {
                Ok(du) => du,
                Err(e) => {
                    held = Some(e);
                    DVector::zeros(self.u_prev.len())
                }
            }
        };

        let mut u = &self.u_prev + &du;
        if let Some(bx) = &self.input_box {
            bx.clamp(&mut u);
        }
        let du_applied = &u - &self.u_prev;

        let report = StepReport {
            k: self.k,
            u: u.clone(),
            du: du_applied.clone(),
            model_innovation,
            value_innovation,
            projected,
            held,
            value_est: improve_kernel.eval(x),
        };
        if report.held.is_some() {
            self.holds += 1;
        }

        // Bookkeeping for the next step: the increment pair completed by the
        // *next* observation. The first step has no increment yet.
        self.dx_prev = (self.k >= 1).then(|| dx.clone());
        self.du_prev = (self.k >= 1).then_some(du_applied);
        self.x_prev = Some(x.clone());
        self.u_prev = u;
        self.k += 1;
        Ok(report)
    }

    /// Serializable snapshot for resumable runs.
    pub fn snapshot(&self) -> OnlineStateRecord {
        OnlineStateRecord {
            version: ONLINE_STATE_VERSION,
            model: EstimatorState::from(&self.identifier),
            value: EstimatorState::from(self.evaluator.identifier()),
            gamma: self.cost.gamma,
            state_dim: self.evaluator.kernel().dim(),
            input_box: self.input_box,
            x_prev: self.x_prev.clone(),
            dx_prev: self.dx_prev.clone(),
            du_prev: self.du_prev.clone(),
            u_prev: self.u_prev.clone(),
            k: self.k,
            holds: self.holds,
        }
    }

    /// Rebuilds the machine from a snapshot. The cost must match the one the
    /// snapshot was taken under.
    pub fn restore(record: &OnlineStateRecord, cost: CostSpec) -> Result<Self> {
        if record.version != ONLINE_STATE_VERSION {
            return Err(Error::Input(format!(
                "online state record version {} not supported (expected {})",
                record.version, ONLINE_STATE_VERSION
            )));
        }
        if record.gamma != cost.gamma {
            return Err(Error::Config(format!(
                "snapshot discount {} disagrees with cost discount {}",
                record.gamma, cost.gamma
            )));
        }
        Ok(Self {
            identifier: record.model.restore()?,
            evaluator: KernelRls::from_identifier(
                record.value.restore()?,
                record.state_dim,
                record.gamma,
            )?,
            cost,
            input_box: record.input_box,
            x_prev: record.x_prev.clone(),
            dx_prev: record.dx_prev.clone(),
            du_prev: record.du_prev.clone(),
            u_prev: record.u_prev.clone(),
            k: record.k,
            holds: record.holds,
        })
    }
}

/// Spec-named entry point: one transition of the adaptation state machine.
pub fn online_adapt_step(state: &mut OnlineAdapter, x: &StateVec) -> Result<StepReport> {
    state.step(x)
}

impl Controller for OnlineAdapter {
    fn act(&mut self, x: &StateVec, _k: u64) -> Result<ControlAction> {
        let report = self.step(x)?;
        Ok(ControlAction {
            u: report.u,
            du: report.du,
            value_est: Some(report.value_est),
        })
    }
}

/// Bump when the on-disk layout of [`OnlineStateRecord`] changes.
pub const ONLINE_STATE_VERSION: u32 = 1;

/// Full state of one recursive estimator, as persisted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorState {
    pub theta: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub kappa: f64,
    pub steps: u64,
    pub clip_events: u64,
}

impl From<&RlsIdentifier> for EstimatorState {
    fn from(id: &RlsIdentifier) -> Self {
        Self {
            theta: id.theta().clone(),
            covariance: id.covariance().clone(),
            kappa: id.kappa(),
            steps: id.steps(),
            clip_events: id.clip_events(),
        }
    }
}

impl EstimatorState {
    pub fn restore(&self) -> Result<RlsIdentifier> {
        RlsIdentifier::from_parts(
            self.theta.clone(),
            self.covariance.clone(),
            self.kappa,
            self.steps,
            self.clip_events,
        )
    }
}

/// Versioned snapshot of the whole adaptation machine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OnlineStateRecord {
    pub version: u32,
    pub model: EstimatorState,
    pub value: EstimatorState,
    pub gamma: f64,
    pub state_dim: usize,
    pub input_box: Option<InputBox>,
    pub x_prev: Option<StateVec>,
    pub dx_prev: Option<StateVec>,
    pub du_prev: Option<ControlVec>,
    pub u_prev: ControlVec,
    pub k: u64,
    pub holds: u64,
}
