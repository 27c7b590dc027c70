//! Training diagnostics and certification helpers: the probe grid, value
//! monotonicity checking, incremental-model error estimation, optimality-gap
//! measurement, and the a-priori minimum-iteration calculator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sysmodels::{ControlVec, StateVec};
use crate::valuefn::QuadraticKernel;

/// Evaluation grid: 5×5 uniform lattice on [−1, 1]², origin excluded (the
/// value there is zero by construction, so it carries no information and
/// would dilute relative comparisons).
pub fn probe_grid() -> Vec<StateVec> {
    let coords = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut pts = Vec::with_capacity(24);
    for &a in &coords {
        for &b in &coords {
            if a == 0.0 && b == 0.0 {
                continue;
            }
            pts.push(DVector::from_vec(vec![a, b]));
        }
    }
    pts
}

/// Per-point tolerance for value comparisons: absolute floor plus a relative
/// term, so large values are not held to an absolute standard.
pub fn value_tolerance(v: f64) -> f64 {
    1e-8 + 1e-6 * v.abs()
}

/// Result of a monotonicity scan over a sequence of value kernels.
#[derive(Debug, Clone)]
pub struct MonotonicityReport {
    pub ok: bool,
    /// Largest (V_{i+1} − V_i − tol) over all probe points and iteration
    /// pairs; ≤ 0 exactly when the sequence is non-increasing within
    /// tolerance.
    pub worst_margin: f64,
    /// Iteration pair (i, i+1) where the worst margin occurred.
    pub worst_pair: (usize, usize),
    /// Probe point of the worst margin.
    pub worst_point: StateVec,
}

/// Verifies that successive value iterates never increase on the probe grid
/// beyond [`value_tolerance`]. An empty or single-kernel sequence passes
/// trivially.
pub fn check_monotonicity(kernels: &[QuadraticKernel]) -> MonotonicityReport {
    let grid = probe_grid();
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_pair = (0, 0);
    let mut worst_point = DVector::zeros(2);
    for i in 0..kernels.len().saturating_sub(1) {
        for x in &grid {
            let v_cur = kernels[i].eval(x);
            let v_next = kernels[i + 1].eval(x);
            let margin = v_next - v_cur - value_tolerance(v_cur);
            if margin > worst_margin {
                worst_margin = margin;
                worst_pair = (i, i + 1);
                worst_point = x.clone();
            }
        }
    }
    if kernels.len() < 2 {
        worst_margin = f64::NEG_INFINITY;
    }
    MonotonicityReport {
        ok: worst_margin <= 0.0,
        worst_margin,
        worst_pair,
        worst_point,
    }
}

/// Maximum one-step incremental-model residual over the trailing `window`
/// admissible steps of a trajectory (all steps when `window` = 0):
///
/// ```text
/// ε̂ = max_k ‖Δx_{k+1} − Θ̂ᵀ[Δx_k; Δu_k]‖
/// ```
///
/// `states` must hold one more entry than `inputs` (the state after the
/// last input). At least three states are needed to form one residual.
pub fn estimate_model_error(
    theta: &DMatrix<f64>,
    states: &[StateVec],
    inputs: &[ControlVec],
    window: usize,
) -> Result<f64> {
    if states.len() != inputs.len() + 1 {
        return Err(Error::Input(format!(
            "{} states with {} inputs do not form a trajectory",
            states.len(),
            inputs.len()
        )));
    }
    if states.len() < 3 {
        return Err(Error::InsufficientExcitation(
            "need at least three states to form one incremental residual".into(),
        ));
    }
    let n = states[0].len();
    let m = inputs[0].len();
    // Admissible k: 1 ..= L−1 where L = inputs.len(); residual k compares
    // the observed Δx_{k+1} against the prediction from (Δx_k, Δu_k).
    let last = inputs.len() - 1;
    let first = if window == 0 {
        1
    } else {
        last.saturating_sub(window - 1).max(1)
    };
    let mut worst: f64 = 0.0;
    for k in first..=last {
        let mut reg = DVector::zeros(n + m);
        reg.rows_mut(0, n).copy_from(&(&states[k] - &states[k - 1]));
        reg.rows_mut(n, m).copy_from(&(&inputs[k] - &inputs[k - 1]));
        let predicted = theta.transpose() * reg;
        let observed = &states[k + 1] - &states[k];
        worst = worst.max((observed - predicted).norm());
    }
    Ok(worst)
}

/// Largest pointwise value discrepancy between two kernels over the probe
/// grid.
pub fn near_optimality_gap(learned: &QuadraticKernel, reference: &QuadraticKernel) -> f64 {
    probe_grid()
        .iter()
        .map(|x| (learned.eval(x) - reference.eval(x)).abs())
        .fold(0.0, f64::max)
}

/// A-priori value-gap bound from the measured model error: a policy greedy
/// against a model with one-step prediction error ε̂ can lose at most
/// γ·L·ε̂/(1−γ) in value, with L the stage-cost Lipschitz constant on the
/// operating region.
pub fn value_gap_bound(gamma: f64, lipschitz: f64, model_error: f64) -> f64 {
    gamma * lipschitz * model_error / (1.0 - gamma)
}

/// Power-law comparison function α(s) = c·sᵖ (c > 0, p > 0): the class-K∞
/// shape every envelope in the iteration bound is instantiated with.
#[derive(Debug, Clone, Copy)]
pub struct PowerLaw {
    pub coeff: f64,
    pub power: f64,
}

impl PowerLaw {
    pub fn new(coeff: f64, power: f64) -> Result<Self> {
        if !(coeff > 0.0 && power > 0.0) && coeff.is_finite() && power.is_finite() {
            return Err(Error::Config(format!(
                "power law needs positive coefficient and exponent, got {coeff}·s^{power}"
            )));
        }
        Ok(Self { coeff, power })
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.coeff * s.powf(self.power)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        (y / self.coeff).powf(1.0 / self.power)
    }
}

/// Inverts a continuous strictly-increasing function with f(0) = 0 by
/// doubling out a bracket and bisecting. Used for envelope sums, which have
/// no closed-form inverse.
fn invert_monotone(f: impl Fn(f64) -> f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    let mut hi = 1.0;
    let mut guard = 0;
    while f(hi) < y && guard < 2000 {
        hi *= 2.0;
        guard += 1;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Problem envelopes and operating parameters for [`min_iterations_bound`].
///
/// - `alpha_gamma`: coercivity lower bound on candidate value functions,
///   α_Γ(‖x‖) ≤ V(x).
/// - `alpha_w`: upper envelope of the warm-start kernel, W(x) ≤ ᾱ_W(‖x‖).
/// - `chi`: stage-cost envelope under the initial policy, ℓ(x, h⁰(x)) ≤ χ(‖x‖).
/// - `m`, `a`: geometric decay certificate of the initial closed loop,
///   ‖x_k‖ envelope M·aᵏ-style (M ≥ 1, 0 < a ≤ 1 after discount folding).
/// - `gamma_star`: smallest discount for which the warm start certifies;
///   the operating `gamma` must exceed it.
/// - `delta`: target state-space accuracy; `delta_cap`: radius of the region
///   the certificate is required to cover.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub alpha_gamma: PowerLaw,
    pub alpha_w: PowerLaw,
    pub chi: PowerLaw,
    pub m: f64,
    pub a: f64,
    pub gamma_star: f64,
    pub gamma: f64,
    pub delta: f64,
    pub delta_cap: f64,
}

impl BoundInputs {
    // `!(x > 0.0)` rather than `x <= 0.0`: the negation also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn validate(&self) -> Result<()> {
        if !(self.m >= 1.0) {
            return Err(Error::Config(format!("decay gain must be ≥ 1, got {}", self.m)));
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::Config(format!(
                "decay rate must be in (0, 1], got {}",
                self.a
            )));
        }
        if !(self.gamma_star > 0.0 && self.gamma_star < 1.0) {
            return Err(Error::Config(format!(
                "warm-start discount threshold must be in (0, 1), got {}",
                self.gamma_star
            )));
        }
        if !(self.gamma > self.gamma_star && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "operating discount must be in ({}, 1), got {}",
                self.gamma_star, self.gamma
            )));
        }
        if !(self.delta >= 0.0 && self.delta_cap > 0.0) {
            return Err(Error::Config(
                "accuracy targets must be nonnegative (radius positive)".into(),
            ));
        }
        Ok(())
    }
}

/// Minimum number of exact policy-iteration rounds guaranteeing the value
/// iterate is within the target accuracy band, computed from the problem
/// envelopes alone.
///
/// The count comes from the geometric contraction of the iterate gap: the
/// initial gap scale D (set by the covered radius) decays as γ^i·D and must
/// be driven below the certified target band N (set by the accuracy target),
/// giving i★ = ⌈ln(N/D)/ln γ⌉ — both logarithms negative, so the count is
/// positive, capped below at 0 when the start already qualifies. Degenerate
/// envelopes that make the ratio vanish or blow up produce
/// [`Error::BoundUndefined`] rather than a guess; γ → 1 drives the bound to
/// infinity, which surfaces as the count growing without limit, not as an
/// error.
pub fn min_iterations_bound(inp: &BoundInputs) -> Result<u64> {
    inp.validate()?;
    let g = inp.gamma;
    let gs = inp.gamma_star;

    let alpha_v_bar = |s: f64| inp.m * inp.chi.eval(s) / (1.0 - g * inp.a);
    let alpha_y = |s: f64| (g - gs) / (1.0 - gs) * inp.alpha_gamma.eval(s);
    let alpha_y_bar = |s: f64| alpha_v_bar(s) + inp.alpha_w.eval(s) / g;
    let beta_star = |s: f64| {
        inp.alpha_gamma
            .inverse(alpha_v_bar(s) + inp.alpha_w.eval(s) / gs)
    };

    // Certified initial gap: the accuracy target pulled back through the
    // iterate envelopes.
    let delta_tilde = inp.alpha_gamma.eval(inp.delta);
    let n = alpha_y(invert_monotone(alpha_y_bar, delta_tilde));

    // Band width over the covered region.
    let s_cap = inp.alpha_gamma.inverse(alpha_y_bar(inp.delta_cap));
    let d = 2.0 * (1.0 - g) * alpha_v_bar(beta_star(s_cap));

    let ratio = n / d;
    if !ratio.is_finite() || ratio <= 0.0 {
        return Err(Error::BoundUndefined { argument: ratio });
    }
    let raw = ratio.ln() / g.ln();
    Ok(raw.ceil().max(0.0) as u64)
}
