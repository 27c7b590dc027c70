//! Independent verification oracles.
//!
//! Discounted Riccati / Lyapunov solvers for the linearized problem and a
//! brute-force scalar minimizer. These exist to *check* the learner, never to
//! feed it: nothing in here reads identifier or kernel-fit state, and the
//! learning modules do not link back against this one.
//!
//! Both solvers are plain fixed-point iterations. The dimensions involved are
//! tiny (2×2 shipped), so iteration beats pulling in an algebraic solver, and
//! the returned solution is itself checkable through its fixed-point residual.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::valuefn::{CostSpec, QuadraticKernel};

/// A linear time-invariant plant x⁺ = Ax + Bu, used as the frozen-Jacobian
/// reference problem for verification.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LinearPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.nrows() {
            return Err(Error::Config(format!(
                "linear plant dimensions inconsistent: A is {}×{}, B is {}×{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("linear plant has non-finite entries".into()));
        }
        Ok(Self { a, b })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Spectral radius of a square matrix (largest eigenvalue modulus).
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Numeric PBH test: (A, B) is stabilizable iff [λI − A, B] has full row rank
/// for every eigenvalue λ of A with |λ| ≥ 1.
fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let eigs = a.complex_eigenvalues();
    for lambda in eigs.iter() {
        if lambda.norm() < 1.0 - 1e-12 {
            continue;
        }
        // Build the complex pencil [λI − A, B] as a real 2n×2(n+m) block
        // matrix ([Re, -Im; Im, Re] embedding) and rank-test via SVD.
        let m = b.ncols();
        let mut real = DMatrix::<f64>::zeros(n, n + m);
        let mut imag = DMatrix::<f64>::zeros(n, n + m);
        for i in 0..n {
            for j in 0..n {
                real[(i, j)] = if i == j { lambda.re } else { 0.0 } - a[(i, j)];
                imag[(i, j)] = if i == j { lambda.im } else { 0.0 };
            }
            for j in 0..m {
                real[(i, n + j)] = b[(i, j)];
            }
        }
        let mut embed = DMatrix::<f64>::zeros(2 * n, 2 * (n + m));
        embed.view_mut((0, 0), (n, n + m)).copy_from(&real);
        embed
            .view_mut((0, n + m), (n, n + m))
            .copy_from(&(-imag.clone()));
        embed.view_mut((n, 0), (n, n + m)).copy_from(&imag);
        embed.view_mut((n, n + m), (n, n + m)).copy_from(&real);
        let svd = embed.svd(false, false);
        let smallest = svd.singular_values[2 * n - 1];
        if smallest < 1e-9 {
            return false;
        }
    }
    true
}

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITERS: usize = 100_000;

/// Optimal value kernel and gain for the discounted LQR problem
/// min Σ γᵏ (xᵀQx + uᵀRu) subject to x⁺ = Ax + Bu.
///
/// Iterates P ← Q + γAᵀPA − γ²AᵀPB(R+γBᵀPB)⁻¹BᵀPA from P = Q until the
/// Frobenius delta falls below 1e-12. The returned gain uses the subtraction
/// convention: the optimal policy is u = −K★x.
///
/// Requires (√γ·A, √γ·B) stabilizable — equivalently, the discounted problem
/// has a finite value — checked numerically up front.
pub fn discounted_riccati(
    plant: &LinearPlant,
    cost: &CostSpec,
) -> Result<(QuadraticKernel, DMatrix<f64>)> {
    cost.check_dims(plant.state_dim(), plant.input_dim())?;
    let g = cost.gamma;
    let sg = g.sqrt();
    if !is_stabilizable(&(sg * &plant.a), &(sg * &plant.b)) {
        return Err(Error::OracleFailure(format!(
            "(√γ·A, √γ·B) is not stabilizable at γ={g}; discounted value is infinite"
        )));
    }
    let mut p = cost.q.clone();
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let next = riccati_map(&p, plant, cost);
        let delta = (&next - &p).norm();
        p = next;
        if delta < FIXED_POINT_TOL {
            let k = riccati_gain(&p, plant, cost)?;
            return Ok((QuadraticKernel::new(p, g)?, k));
        }
    }
    Err(Error::OracleFailure(format!(
        "Riccati iteration did not reach {FIXED_POINT_TOL:.0e} in {FIXED_POINT_MAX_ITERS} steps"
    )))
}

/// One application of the discounted Riccati operator
/// T(P) = Q + γAᵀPA − γ²AᵀPB(R+γBᵀPB)⁻¹BᵀPA.
pub fn riccati_map(p: &DMatrix<f64>, plant: &LinearPlant, cost: &CostSpec) -> DMatrix<f64> {
    let g = cost.gamma;
    let (a, b) = (&plant.a, &plant.b);
    let s = &cost.r + g * b.transpose() * p * b;
    let s_inv = s
        .clone()
        .try_inverse()
        .expect("R + γBᵀPB is PD for PSD P and PD R");
    // cross = γAᵀPB, so cross·S⁻¹·crossᵀ carries the full γ² weight.
    let cross = g * a.transpose() * p * b;
    let next = &cost.q + g * a.transpose() * p * a - &cross * s_inv * cross.transpose();
    // Re-symmetrize: the iteration is expansive along asymmetric
    // perturbations whenever √γ·A is, so rounding asymmetry must not be
    // allowed to accumulate across applications.
    (&next + next.transpose()) * 0.5
}

fn riccati_gain(p: &DMatrix<f64>, plant: &LinearPlant, cost: &CostSpec) -> Result<DMatrix<f64>> {
    let g = cost.gamma;
    let (a, b) = (&plant.a, &plant.b);
    let s = &cost.r + g * b.transpose() * p * b;
    let s_inv = s.try_inverse().ok_or_else(|| {
        Error::OracleFailure("R + γBᵀPB singular while extracting the gain".into())
    })?;
    Ok(s_inv * g * b.transpose() * p * a)
}

/// Discounted evaluation of a fixed linear policy u = −Kx:
/// the fixed point of P ← Q + KᵀRK + γ(A−BK)ᵀP(A−BK).
///
/// Errors with [`Error::EvaluationDiverges`] when √γ·(A−BK) has spectral
/// radius ≥ 1, since the series defining the evaluation then has no finite sum.
pub fn discounted_lyapunov(
    plant: &LinearPlant,
    gain: &DMatrix<f64>,
    cost: &CostSpec,
) -> Result<QuadraticKernel> {
    cost.check_dims(plant.state_dim(), plant.input_dim())?;
    let g = cost.gamma;
    let acl = &plant.a - &plant.b * gain;
    let rho = spectral_radius(&(g.sqrt() * &acl));
    if rho >= 1.0 {
        return Err(Error::EvaluationDiverges(format!(
            "√γ·(A−BK) has spectral radius {rho:.4} ≥ 1"
        )));
    }
    let fixed = &cost.q + gain.transpose() * &cost.r * gain;
    let mut p = fixed.clone();
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let next = &fixed + g * acl.transpose() * &p * &acl;
        let delta = (&next - &p).norm();
        p = next;
        if delta < FIXED_POINT_TOL {
            return QuadraticKernel::new(p, g);
        }
    }
    Err(Error::OracleFailure(
        "Lyapunov iteration did not converge despite a contractive spectral radius".into(),
    ))
}

/// Exhaustive grid scan of a scalar objective over [lo, hi] with the given
/// step. Ties break toward the smaller argument (strict improvement required
/// to move right).
pub fn brute_force_argmin(objective: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    assert!(
        lo.is_finite() && hi.is_finite() && step > 0.0,
        "bounds must be finite and step positive"
    );
    let mut best_arg = lo;
    let mut best_val = objective(lo);
    let count = ((hi - lo) / step).round() as usize;
    for i in 1..=count {
        let arg = lo + step * i as f64;
        let val = objective(arg);
        if val < best_val {
            best_val = val;
            best_arg = arg;
        }
    }
    best_arg
}

/// Truncated discounted rollout cost Σ_{k<horizon} γᵏ ℓ(x_k, −Kx_k) under
/// x⁺ = Ax + Bu. Used by tests to cross-check Riccati output against a sum
/// that involves none of the fixed-point machinery.
pub fn truncated_policy_cost(
    plant: &LinearPlant,
    gain: &DMatrix<f64>,
    cost: &CostSpec,
    x0: &DVector<f64>,
    horizon: usize,
) -> f64 {
    let mut x = x0.clone();
    let mut total = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        let u = -gain * &x;
        total += discount * ((x.transpose() * &cost.q * &x)[(0, 0)]
            + (u.transpose() * &cost.r * &u)[(0, 0)]);
        x = &plant.a * &x + &plant.b * &u;
        discount *= cost.gamma;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lin_plant() -> LinearPlant {
        LinearPlant::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap()
    }

    fn cost_07() -> CostSpec {
        CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 0.7).unwrap()
    }

    #[test]
    fn riccati_matches_frozen_reference() {
        // Reference solution computed independently (long fixed-point run in
        // double precision, cross-checked against truncated rollout cost).
        let (p, k) = discounted_riccati(&lin_plant(), &cost_07()).unwrap();
        let p_ref = [
            [4.362007853280261, 4.122474545207389],
            [4.122474545207389, 7.528099501730754],
        ];
        for (i, row) in p_ref.iter().enumerate() {
            for (j, want) in row.iter().enumerate() {
                assert_abs_diff_eq!(p.p[(i, j)], *want, epsilon = 1e-9);
            }
        }
        assert_abs_diff_eq!(k[(0, 0)], -1.6810039266401335, epsilon = 1e-9);
        assert_abs_diff_eq!(k[(0, 1)], -2.061237272603696, epsilon = 1e-9);
        let acl = &lin_plant().a - &lin_plant().b * &k;
        assert_abs_diff_eq!(spectral_radius(&acl), 0.5647973737189881, epsilon = 1e-9);
    }

    #[test]
    fn riccati_fixed_point_residual_is_tiny() {
        let plant = lin_plant();
        let cost = cost_07();
        let (p, _) = discounted_riccati(&plant, &cost).unwrap();
        let residual = (riccati_map(&p.p, &plant, &cost) - &p.p).norm();
        assert!(residual < 1e-10, "residual {residual:.3e}");
    }

    #[test]
    fn riccati_iterates_monotone_from_q() {
        // From P = Q the iterates grow in the Loewner order.
        let plant = lin_plant();
        let cost = cost_07();
        let mut p = cost.q.clone();
        for _ in 0..200 {
            let next = riccati_map(&p, &plant, &cost);
            let diff = &next - &p;
            let min_eig = diff
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig >= -1e-10, "iterate decreased: min eig {min_eig:.3e}");
            p = next;
        }
    }

    #[test]
    fn riccati_gamma_zero_returns_stage_cost_kernel() {
        let cost = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 1e-300).unwrap();
        let (p, k) = discounted_riccati(&lin_plant(), &cost).unwrap();
        assert!((p.p.clone() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-10);
        assert!(k.norm() < 1e-10);
    }

    #[test]
    fn riccati_scalar_memoryless_state() {
        // a=0: the state forgets the past entirely, so acting costs and buys
        // nothing — P★=q, K★=0 for every γ.
        let plant = LinearPlant::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        for gamma in [0.1, 0.5, 0.9, 0.99] {
            let cost =
                CostSpec::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1), gamma).unwrap();
            let (p, k) = discounted_riccati(&plant, &cost).unwrap();
            assert_abs_diff_eq!(p.p[(0, 0)], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(k[(0, 0)], 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn riccati_cost_cross_check_by_truncated_rollout() {
        // xᵀP★x must equal the realized discounted cost of u=−K★x. Horizon
        // chosen so the tail is far below the comparison tolerance.
        let plant = lin_plant();
        let cost = cost_07();
        let (p, k) = discounted_riccati(&plant, &cost).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x0 = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let rollout = truncated_policy_cost(&plant, &k, &cost, &x0, 10_000);
            let quadratic = (x0.transpose() * &p.p * &x0)[(0, 0)];
            let rel = (rollout - quadratic).abs() / quadratic.max(1e-12);
            assert!(rel < 1e-4, "relative mismatch {rel:.3e}");
        }
    }

    #[test]
    fn lyapunov_of_optimal_gain_recovers_optimal_value() {
        let plant = lin_plant();
        let cost = cost_07();
        let (p_star, k_star) = discounted_riccati(&plant, &cost).unwrap();
        let p_eval = discounted_lyapunov(&plant, &k_star, &cost).unwrap();
        assert!((&p_eval.p - &p_star.p).norm() < 1e-10);
    }

    #[test]
    fn lyapunov_gamma_zero_is_stage_cost_of_policy() {
        let plant = lin_plant();
        let k = DMatrix::from_row_slice(1, 2, &[0.3, -0.4]);
        let cost = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 1e-300).unwrap();
        let p = discounted_lyapunov(&plant, &k, &cost).unwrap();
        let expected = &cost.q + k.transpose() * &cost.r * &k;
        assert!((&p.p - expected).norm() < 1e-10);
    }

    #[test]
    fn lyapunov_rejects_unstable_closed_loop() {
        // A − BK with K = [−2.5, −1] has spectral radius ≈ 2.22; the √γ-scaled
        // loop stays expansive, so evaluation must refuse.
        let plant = lin_plant();
        let k = DMatrix::from_row_slice(1, 2, &[-2.5, -1.0]);
        let err = discounted_lyapunov(&plant, &k, &cost_07()).unwrap_err();
        assert!(matches!(err, Error::EvaluationDiverges(_)));
    }

    #[test]
    fn riccati_refuses_unstabilizable_pair() {
        // Unreachable unstable mode: A = diag(2, 0.1), B only drives state 2.
        let plant = LinearPlant::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.1]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let cost = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 0.9).unwrap();
        let err = discounted_riccati(&plant, &cost).unwrap_err();
        assert!(matches!(err, Error::OracleFailure(_)));
    }

    #[test]
    fn spectral_radius_hand_values() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        assert_abs_diff_eq!(spectral_radius(&m), 2.0, epsilon = 1e-12);
        // Closed loop of the deliberately destabilizing startup gains on the
        // Model A linearization: eigenvalues −2 ± √2/2.
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -3.5, -4.0]);
        assert_abs_diff_eq!(spectral_radius(&m), 2.7071067811865475, epsilon = 1e-12);
    }

    #[test]
    fn brute_force_quadratics() {
        assert_abs_diff_eq!(
            brute_force_argmin(|u| u * u, -1.0, 1.0, 0.001),
            0.0,
            epsilon = 1e-9
        );
        let m = brute_force_argmin(|u| (u - 0.3) * (u - 0.3), -1.0, 1.0, 0.001);
        assert!((m - 0.3).abs() <= 0.001 + 1e-12);
    }

    #[test]
    fn brute_force_ties_break_toward_smaller() {
        // Objective flat on a plateau: the scan must keep the left edge.
        let m = brute_force_argmin(|u| if u.abs() <= 0.5 { 1.0 } else { 2.0 }, -1.0, 1.0, 0.25);
        assert_abs_diff_eq!(m, -0.5, epsilon = 1e-12);
    }
}
