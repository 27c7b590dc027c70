//! Incremental policy improvement.
//!
//! Given the current value kernel P and the identified incremental model
//! (Â, B̂), the improved input is expressed as an increment on the previous
//! input rather than a state feedback:
//!
//! ```text
//! Δu = −(R + γB̂ᵀPB̂)⁻¹ [ R·u_prev + γB̂ᵀP·x + γB̂ᵀPÂ·Δx ]
//! ```
//!
//! which is the exact minimizer of ℓ(x, u_prev + Δu) + γ·V̂(x̂) under the
//! one-step prediction x̂ = x + ÂΔx + B̂Δu. Working in increments is what
//! lets the controller ride on the incremental model: neither an absolute
//! input trim nor the plant's drift offset needs to be known.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sysmodels::{ControlAction, ControlVec, Controller, StateVec};
use crate::valuefn::{theta_blocks, CostSpec, QuadraticKernel};

/// Input increment minimizing the one-step lookahead cost at `x`.
///
/// `theta` is the stacked incremental model [Â B̂]ᵀ; `dx` the latest state
/// increment. With P = 0 the minimizer is Δu = −u_prev: no value information
/// means the input cost alone decides, and it resets the input to zero.
///
/// Errors with [`Error::PolicyImprovement`] when R + γB̂ᵀPB̂ is not positive
/// definite (possible only for indefinite P, e.g. a transient bad kernel
/// fit); callers decide whether to project the kernel and retry.
pub fn improve_policy_increment(
    x: &StateVec,
    u_prev: &ControlVec,
    dx: &StateVec,
    theta: &DMatrix<f64>,
    kernel: &QuadraticKernel,
    cost: &CostSpec,
) -> Result<ControlVec> {
    let n = x.len();
    cost.check_dims(n, u_prev.len())?;
    let (a_hat, b_hat) = theta_blocks(theta, n);
    let g = cost.gamma;
    let p = &kernel.p;

    let s = &cost.r + g * b_hat.transpose() * p * &b_hat;
    let chol = s.cholesky().ok_or_else(|| {
        Error::PolicyImprovement(format!(
            "R + γB̂ᵀPB̂ is not positive definite (kernel min eigenvalue {:.3e})",
            kernel.min_eigenvalue()
        ))
    })?;
    let drifted = x + &a_hat * dx;
    let rhs = &cost.r * u_prev + g * b_hat.transpose() * p * drifted;
    Ok(-chol.solve(&rhs))
}

/// Elementwise input saturation bounds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: f64,
    pub hi: f64,
}

impl InputBox {
    // `!(lo < hi)` rather than `lo >= hi`: the negation also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config(format!(
                "input box requires lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn clamp(&self, u: &mut ControlVec) {
        for v in u.iter_mut() {
            *v = v.clamp(self.lo, self.hi);
        }
    }
}

/// Frozen-parameter incremental controller: applies
/// u_k = u_{k−1} + Δu_k with a fixed model snapshot and value kernel.
///
/// This is the policy an offline training run ships. It tracks its own
/// previous state and input; the first step uses Δx = 0 (no increment
/// information yet), which makes it a pure regulator move.
#[derive(Debug, Clone)]
pub struct IncrementalPolicy {
    pub theta: DMatrix<f64>,
    pub kernel: QuadraticKernel,
    pub cost: CostSpec,
    pub input_box: Option<InputBox>,
    x_prev: Option<StateVec>,
    u_prev: ControlVec,
}

impl IncrementalPolicy {
    pub fn new(
        theta: DMatrix<f64>,
        kernel: QuadraticKernel,
        cost: CostSpec,
        input_box: Option<InputBox>,
    ) -> Result<Self> {
        let n = kernel.dim();
        if theta.ncols() != n || theta.nrows() <= n {
            return Err(Error::Config(format!(
                "model estimate {}×{} inconsistent with {n}-dimensional kernel",
                theta.nrows(),
                theta.ncols()
            )));
        }
        let m = theta.nrows() - n;
        cost.check_dims(n, m)?;
        Ok(Self {
            theta,
            kernel,
            cost,
            input_box,
            x_prev: None,
            u_prev: DVector::zeros(m),
        })
    }

    pub fn u_prev(&self) -> &ControlVec {
        &self.u_prev
    }
}

impl Controller for IncrementalPolicy {
    fn act(&mut self, x: &StateVec, _k: u64) -> Result<ControlAction> {
        let dx = match &self.x_prev {
            Some(prev) => x - prev,
            None => DVector::zeros(x.len()),
        };
        let increment = improve_policy_increment(
            x,
            &self.u_prev,
            &dx,
            &self.theta,
            &self.kernel,
            &self.cost,
        )?;
        let mut u = &self.u_prev + &increment;
        if let Some(bounds) = &self.input_box {
            bounds.clamp(&mut u);
        }
        let du = &u - &self.u_prev;
        self.x_prev = Some(x.clone());
        self.u_prev = u.clone();
        Ok(ControlAction {
            u,
            du,
            value_est: Some(self.kernel.eval(x)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{brute_force_argmin, discounted_riccati, LinearPlant};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cost_07() -> CostSpec {
        CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 0.7).unwrap()
    }

    fn theta_ref() -> DMatrix<f64> {
        // [Â B̂]ᵀ for Â = [[0,1],[−2,−3]], B̂ = [[0],[1]].
        DMatrix::from_row_slice(3, 2, &[0.0, -2.0, 1.0, -3.0, 0.0, 1.0])
    }

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    fn u1(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn zero_kernel_resets_the_input() {
        let kernel = QuadraticKernel::zero(2, 0.7);
        let du = improve_policy_increment(
            &v2(0.4, -0.3),
            &u1(1.7),
            &v2(0.1, 0.1),
            &theta_ref(),
            &kernel,
            &cost_07(),
        )
        .unwrap();
        assert_abs_diff_eq!(du[0], -1.7, epsilon = 1e-14);
    }

    #[test]
    fn increment_hand_value() {
        // x = (0, 1), u_prev = 0, Δx = 0, P = I:
        // Δu = −γ·B̂ᵀx / (1 + γ·B̂ᵀB̂) = −0.7/1.7.
        let kernel = QuadraticKernel::new(DMatrix::identity(2, 2), 0.7).unwrap();
        let du = improve_policy_increment(
            &v2(0.0, 1.0),
            &u1(0.0),
            &v2(0.0, 0.0),
            &theta_ref(),
            &kernel,
            &cost_07(),
        )
        .unwrap();
        assert_abs_diff_eq!(du[0], -0.7 / 1.7, epsilon = 1e-14);
    }

    /// The one-step lookahead objective the increment is supposed to minimize.
    fn lookahead(
        x: &DVector<f64>,
        u_prev: &DVector<f64>,
        dx: &DVector<f64>,
        theta: &DMatrix<f64>,
        kernel: &QuadraticKernel,
        cost: &CostSpec,
        du: f64,
    ) -> f64 {
        let u = u_prev + u1(du);
        let x_hat = crate::valuefn::predict_next_state(x, dx, &u1(du), theta);
        cost.stage_cost(x, &u) + cost.gamma * kernel.eval(&x_hat)
    }

    #[test]
    fn increment_satisfies_first_order_optimality() {
        // Central finite differences around the returned increment must show
        // a stationary point, and small perturbations must not improve.
        let cost = cost_07();
        let kernel = QuadraticKernel::new(
            DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 4.0]),
            cost.gamma,
        )
        .unwrap();
        let theta = theta_ref();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let x = v2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let u_prev = u1(rng.gen_range(-1.0..1.0));
            let dx = v2(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
            let du = improve_policy_increment(&x, &u_prev, &dx, &theta, &kernel, &cost).unwrap();
            let h = 1e-6;
            let at = |d: f64| lookahead(&x, &u_prev, &dx, &theta, &kernel, &cost, d);
            let grad = (at(du[0] + h) - at(du[0] - h)) / (2.0 * h);
            assert!(grad.abs() < 1e-6, "gradient {grad:.3e}");
            assert!(at(du[0]) <= at(du[0] + 0.01) + 1e-12);
            assert!(at(du[0]) <= at(du[0] - 0.01) + 1e-12);
        }
    }

    #[test]
    fn increment_matches_brute_force_scan() {
        let cost = cost_07();
        let kernel = QuadraticKernel::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.5]),
            cost.gamma,
        )
        .unwrap();
        let theta = theta_ref();
        let x = v2(0.6, -0.4);
        let u_prev = u1(0.3);
        let dx = v2(-0.1, 0.2);
        let du = improve_policy_increment(&x, &u_prev, &dx, &theta, &kernel, &cost).unwrap();
        let scanned = brute_force_argmin(
            |d| lookahead(&x, &u_prev, &dx, &theta, &kernel, &cost, d),
            -2.0,
            2.0,
            1e-4,
        );
        assert!((du[0] - scanned).abs() <= 1e-4 + 1e-12);
    }

    #[test]
    fn increment_recovers_optimal_feedback_at_the_fixed_point() {
        // On exact linear data with the optimal kernel, u_prev + Δu must
        // equal the optimal feedback −K★x regardless of how x was reached:
        // the incremental form is exact for linear dynamics.
        let plant = LinearPlant::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let cost = cost_07();
        let (p_star, k_star) = discounted_riccati(&plant, &cost).unwrap();
        let theta = theta_ref();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let x_prev = v2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let u_prev = u1(rng.gen_range(-1.0..1.0));
            let x = &plant.a * &x_prev + &plant.b * &u_prev;
            let dx = &x - &x_prev;
            let du =
                improve_policy_increment(&x, &u_prev, &dx, &theta, &p_star, &cost).unwrap();
            let u_new = &u_prev + &du;
            let u_opt = -&k_star * &x;
            assert_abs_diff_eq!(u_new[0], u_opt[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn indefinite_kernel_beyond_input_cost_is_rejected() {
        // P strongly negative in the B̂ direction drives R + γB̂ᵀPB̂ ≤ 0.
        let kernel = QuadraticKernel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -10.0]),
            0.7,
        )
        .unwrap();
        let err = improve_policy_increment(
            &v2(0.1, 0.1),
            &u1(0.0),
            &v2(0.0, 0.0),
            &theta_ref(),
            &kernel,
            &cost_07(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::PolicyImprovement(_)));
    }

    #[test]
    fn controller_clamps_to_input_box() {
        let cost = cost_07();
        let kernel = QuadraticKernel::new(DMatrix::identity(2, 2) * 5.0, cost.gamma).unwrap();
        let bounds = InputBox::new(-0.2, 0.2).unwrap();
        let mut ctl =
            IncrementalPolicy::new(theta_ref(), kernel, cost, Some(bounds)).unwrap();
        let action = ctl.act(&v2(2.0, 2.0), 0).unwrap();
        assert!(action.u[0].abs() <= 0.2 + 1e-15);
        // du reflects the clamped move, so u_prev stays consistent.
        assert_abs_diff_eq!(action.du[0], action.u[0], epsilon = 1e-15);
        assert!(InputBox::new(0.5, 0.5).is_err());
    }
}
