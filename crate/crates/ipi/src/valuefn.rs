//! Quadratic value-function representation and kernel fitting.
//!
//! Values are represented as V(x) = xᵀPx with a symmetric kernel P. Fitting
//! is linear regression in the half-vectorized feature space: for n = 2,
//! φ(x) = (x₁², 2x₁x₂, x₂²) and V(x) = φ(x)·(p₁₁, p₁₂, p₂₂). The doubled
//! off-diagonal features let the coefficient vector hold the raw entries of
//! the symmetric kernel.
//!
//! Two fitters are provided: a batch least-squares fit over a dataset
//! (offline policy evaluation) and a recursive one-sample-at-a-time variant
//! built on the same forgetting-factor machinery as the model identifier
//! (online evaluation).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rls::{RlsConfig, RlsIdentifier};

/// Stage cost ℓ(x, u) = xᵀQx + uᵀRu with discount factor γ.
#[derive(Debug, Clone)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gamma: f64,
}

fn min_symmetric_eig(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn max_symmetric_eig(m: &DMatrix<f64>) -> f64 {
    m.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

impl CostSpec {
    /// Q and R must be symmetric positive definite; γ strictly inside (0, 1).
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !q.is_square() || !r.is_square() {
            return Err(Error::Config("cost matrices must be square".into()));
        }
        if q.iter().chain(r.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Config("cost matrices must be finite".into()));
        }
        if (&q - q.transpose()).norm() > 1e-10 || (&r - r.transpose()).norm() > 1e-10 {
            return Err(Error::Config("cost matrices must be symmetric".into()));
        }
        if min_symmetric_eig(&q) <= 0.0 {
            return Err(Error::Config(
                "state cost matrix must be positive definite".into(),
            ));
        }
        if min_symmetric_eig(&r) <= 0.0 {
            return Err(Error::Config(
                "input cost matrix must be positive definite".into(),
            ));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!(
                "discount factor must be in (0, 1), got {gamma}"
            )));
        }
        Ok(Self { q, r, gamma })
    }

    pub fn check_dims(&self, n_x: usize, n_u: usize) -> Result<()> {
        if self.q.nrows() != n_x || self.r.nrows() != n_u {
            return Err(Error::Config(format!(
                "cost dimensions (Q {}×{}, R {}×{}) do not match plant ({n_x} states, {n_u} inputs)",
                self.q.nrows(),
                self.q.ncols(),
                self.r.nrows(),
                self.r.ncols()
            )));
        }
        Ok(())
    }

    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)] + (u.transpose() * &self.r * u)[(0, 0)]
    }

    /// Lipschitz constant of the stage cost over the joint ball
    /// ‖x‖ ≤ radius, ‖u‖ ≤ radius: since ∇ₓℓ = 2Qx and ∇ᵤℓ = 2Ru,
    /// L = 2(λmax(Q) + λmax(R))·radius bounds the gradient norm there.
    pub fn lipschitz_on_ball(&self, radius: f64) -> f64 {
        2.0 * (max_symmetric_eig(&self.q) + max_symmetric_eig(&self.r)) * radius
    }
}

/// Symmetric quadratic value kernel V(x) = xᵀPx, tagged with the discount
/// factor it was fitted under.
///
/// Construction re-symmetrizes (rejecting asymmetry beyond 1e-10) but does
/// not require positive semidefiniteness: intermediate fits can dip
/// indefinite, and the decision of whether to warn, project, or reject
/// belongs to the fit and policy layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticKernel {
    pub p: DMatrix<f64>,
    pub gamma: f64,
}

impl QuadraticKernel {
    pub fn new(p: DMatrix<f64>, gamma: f64) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::Config("value kernel must be square".into()));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("value kernel has non-finite entries".into()));
        }
        let asym = (&p - p.transpose()).norm();
        if asym > 1e-10 {
            return Err(Error::Config(format!(
                "value kernel asymmetric beyond tolerance: ‖P−Pᵀ‖ = {asym:.3e}"
            )));
        }
        let sym = (&p + p.transpose()) * 0.5;
        Ok(Self { p: sym, gamma })
    }

    pub fn zero(n: usize, gamma: f64) -> Self {
        Self {
            p: DMatrix::zeros(n, n),
            gamma,
        }
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.p * x)[(0, 0)]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_symmetric_eig(&self.p)
    }

    /// Nearest positive-semidefinite kernel (negative eigenvalues clamped
    /// to zero).
    pub fn psd_projected(&self) -> Self {
        let eig = self.p.clone().symmetric_eigen();
        let clamped = DVector::from_iterator(
            eig.eigenvalues.len(),
            eig.eigenvalues.iter().map(|&l| l.max(0.0)),
        );
        let p = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
        Self {
            p: (&p + p.transpose()) * 0.5,
            gamma: self.gamma,
        }
    }

    /// Upper-triangle coefficients in row-major order; for n = 2 this is
    /// (p₁₁, p₁₂, p₂₂), matching the feature map [`phi`].
    pub fn to_halfvec(&self) -> DVector<f64> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.p[(i, j)]);
            }
        }
        DVector::from_vec(out)
    }

    pub fn from_halfvec(coeffs: &DVector<f64>, n: usize, gamma: f64) -> Result<Self> {
        if coeffs.len() != n * (n + 1) / 2 {
            return Err(Error::Config(format!(
                "expected {} kernel coefficients for dimension {n}, got {}",
                n * (n + 1) / 2,
                coeffs.len()
            )));
        }
        let mut p = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                p[(i, j)] = coeffs[idx];
                p[(j, i)] = coeffs[idx];
                idx += 1;
            }
        }
        Self::new(p, gamma)
    }
}

/// Number of quadratic features for an n-dimensional state.
pub fn phi_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Quadratic feature map with doubled cross terms, ordered to pair with
/// [`QuadraticKernel::to_halfvec`]: φ(x)·halfvec(P) = xᵀPx exactly.
pub fn phi(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(phi_dim(n));
    for i in 0..n {
        for j in i..n {
            let scale = if i == j { 1.0 } else { 2.0 };
            out.push(scale * x[i] * x[j]);
        }
    }
    DVector::from_vec(out)
}

/// V(x) = xᵀPx.
pub fn eval_value(kernel: &QuadraticKernel, x: &DVector<f64>) -> f64 {
    kernel.eval(x)
}

/// One-step state prediction from the incremental model:
/// x̂ = x + Θ̂ᵀ[Δx; Δu], with Θ̂ in stacked form ([Â B̂]ᵀ, (n+m)×n).
pub fn predict_next_state(
    x: &DVector<f64>,
    dx: &DVector<f64>,
    du: &DVector<f64>,
    theta: &DMatrix<f64>,
) -> DVector<f64> {
    let n = x.len();
    assert_eq!(theta.ncols(), n, "model output dimension mismatch");
    assert_eq!(
        theta.nrows(),
        dx.len() + du.len(),
        "model regressor dimension mismatch"
    );
    let mut reg = DVector::zeros(dx.len() + du.len());
    reg.rows_mut(0, dx.len()).copy_from(dx);
    reg.rows_mut(dx.len(), du.len()).copy_from(du);
    x + theta.transpose() * reg
}

/// Split a stacked estimate Θ̂ = [Â B̂]ᵀ into (Â, B̂).
pub fn theta_blocks(theta: &DMatrix<f64>, n_x: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = theta.ncols();
    let m = theta.nrows() - n_x;
    let a_hat = theta.rows(0, n_x).transpose();
    let b_hat = theta.rows(n_x, m).transpose();
    debug_assert_eq!(a_hat.nrows(), n);
    (a_hat, b_hat)
}

/// Fixed-policy Bellman target: ℓ(x, u) + γ·V(x̂) under the given kernel.
pub fn bellman_target(
    x: &DVector<f64>,
    u: &DVector<f64>,
    x_hat: &DVector<f64>,
    kernel: &QuadraticKernel,
    cost: &CostSpec,
) -> f64 {
    cost.stage_cost(x, u) + cost.gamma * kernel.eval(x_hat)
}

/// One evaluation sample: a visited state, the input applied there, and the
/// model's prediction of the successor state.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub x_next_hat: DVector<f64>,
}

/// Outcome of a batch kernel fit, carrying definiteness diagnostics alongside
/// the kernel itself.
#[derive(Debug, Clone)]
pub struct KernelFit {
    pub kernel: QuadraticKernel,
    pub min_eigenvalue: f64,
    /// Set when the fitted kernel has an eigenvalue below −1e-8. The kernel
    /// is returned as fitted; consumers decide whether to project.
    pub psd_warning: bool,
}

/// Minimum eigenvalue a fitted kernel may have before the fit flags it.
pub const PSD_WARN_TOL: f64 = -1e-8;

/// Relative singular-value cutoff below which the feature matrix is treated
/// as rank-deficient.
const FEATURE_RANK_RCOND: f64 = 1e-10;

/// Least-squares policy evaluation step: solves φ(x)·p ≈ ℓ(x, u) + γ·x̂ᵀP_prev·x̂
/// over the dataset and returns the kernel built from p.
///
/// Iterating this map (feeding each fit back in as `prev`) is fixed-policy
/// value iteration in the quadratic function class; on exact linear data it
/// converges to the policy's discounted evaluation (see the tests for the
/// cross-check against the Lyapunov solver).
///
/// Errors with insufficient excitation when the dataset has fewer samples
/// than feature dimensions or the features do not span the coefficient space.
pub fn fit_kernel_batch(
    samples: &[EvalSample],
    prev: &QuadraticKernel,
    cost: &CostSpec,
) -> Result<KernelFit> {
    if samples.is_empty() {
        return Err(Error::InsufficientExcitation(
            "empty evaluation dataset".into(),
        ));
    }
    let n = samples[0].x.len();
    let d = phi_dim(n);
    if samples.len() < d {
        return Err(Error::InsufficientExcitation(format!(
            "{} samples for {d} kernel coefficients",
            samples.len()
        )));
    }

    let mut features = DMatrix::zeros(samples.len(), d);
    let mut targets = DVector::zeros(samples.len());
    for (row, s) in samples.iter().enumerate() {
        features.row_mut(row).copy_from(&phi(&s.x).transpose());
        targets[row] = bellman_target(&s.x, &s.u, &s.x_next_hat, prev, cost);
    }

    let svd = features.svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let sigma_min = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if svd.singular_values.len() < d || sigma_min <= FEATURE_RANK_RCOND * sigma_max {
        return Err(Error::InsufficientExcitation(format!(
            "feature matrix rank-deficient (σ_min/σ_max = {:.3e})",
            sigma_min / sigma_max.max(f64::MIN_POSITIVE)
        )));
    }
    let coeffs = svd
        .solve(&targets, 0.0)
        .map_err(|e| Error::InsufficientExcitation(format!("feature solve failed: {e}")))?;

    let kernel = QuadraticKernel::from_halfvec(&coeffs.column(0).into_owned(), n, cost.gamma)?;
    let min_eigenvalue = kernel.min_eigenvalue();
    Ok(KernelFit {
        psd_warning: min_eigenvalue < PSD_WARN_TOL,
        kernel,
        min_eigenvalue,
    })
}

/// Recursive kernel estimator: the identifier machinery run on quadratic
/// features with scalar targets, bootstrapping each target from its own
/// current kernel estimate.
#[derive(Debug, Clone)]
pub struct KernelRls {
    rls: RlsIdentifier,
    n_x: usize,
    gamma: f64,
}

impl KernelRls {
    /// Fresh estimator starting from the zero kernel.
    pub fn new(n_x: usize, gamma: f64, cfg: &RlsConfig) -> Result<Self> {
        Ok(Self {
            rls: RlsIdentifier::new(phi_dim(n_x), 1, cfg)?,
            n_x,
            gamma,
        })
    }

    /// Estimator seeded with an existing kernel (e.g. the offline result).
    pub fn with_kernel(kernel: &QuadraticKernel, cfg: &RlsConfig) -> Result<Self> {
        let coeffs = kernel.to_halfvec();
        let theta0 = DMatrix::from_column_slice(coeffs.len(), 1, coeffs.as_slice());
        Ok(Self {
            rls: RlsIdentifier::with_initial(theta0, cfg)?,
            n_x: kernel.dim(),
            gamma: kernel.gamma,
        })
    }

    pub fn kernel(&self) -> QuadraticKernel {
        let coeffs = self.rls.theta().column(0).into_owned();
        QuadraticKernel::from_halfvec(&coeffs, self.n_x, self.gamma)
            .expect("stored coefficients always form a valid kernel")
    }

    pub fn steps(&self) -> u64 {
        self.rls.steps()
    }

    pub fn clip_events(&self) -> u64 {
        self.rls.clip_events()
    }

    pub fn identifier(&self) -> &RlsIdentifier {
        &self.rls
    }

    pub fn from_identifier(rls: RlsIdentifier, n_x: usize, gamma: f64) -> Result<Self> {
        if rls.theta().nrows() != phi_dim(n_x) || rls.theta().ncols() != 1 {
            return Err(Error::Config(
                "identifier dimensions do not match a kernel estimator".into(),
            ));
        }
        Ok(Self { rls, n_x, gamma })
    }
}

/// One recursive evaluation step on the sample (x, u, x̂): regress the
/// bootstrapped target ℓ(x, u) + γ·x̂ᵀP̂x̂ onto φ(x), where P̂ is the
/// estimator's own current kernel. Returns the scalar innovation.
pub fn fit_kernel_recursive(
    state: &mut KernelRls,
    x: &DVector<f64>,
    u: &DVector<f64>,
    x_hat: &DVector<f64>,
    cost: &CostSpec,
) -> Result<f64> {
    let current = state.kernel();
    let target = bellman_target(x, u, x_hat, &current, cost);
    let innovation = state
        .rls
        .update(&phi(x), &DVector::from_element(1, target))?;
    Ok(innovation[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{discounted_lyapunov, LinearPlant};
    use crate::rls::RlsConfig;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cost_07() -> CostSpec {
        CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 0.7).unwrap()
    }

    fn v2(a: f64, b: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b])
    }

    #[test]
    fn eval_hand_values() {
        let identity = QuadraticKernel::new(DMatrix::identity(2, 2), 0.7).unwrap();
        assert_abs_diff_eq!(eval_value(&identity, &v2(3.0, 4.0)), 25.0, epsilon = 1e-12);

        let k = QuadraticKernel::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]), 0.7)
            .unwrap();
        assert_abs_diff_eq!(eval_value(&k, &v2(1.0, 1.0)), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn features_pair_with_halfvec() {
        let x = v2(3.0, 4.0);
        let f = phi(&x);
        assert_eq!(f.as_slice(), &[9.0, 24.0, 16.0]);

        let k = QuadraticKernel::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 5.0]), 0.7)
            .unwrap();
        assert_abs_diff_eq!(f.dot(&k.to_halfvec()), k.eval(&x), epsilon = 1e-12);

        // Generic dimension round trip.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let sym = (&raw + raw.transpose()) * 0.5;
        let k3 = QuadraticKernel::new(sym, 0.5).unwrap();
        let rebuilt = QuadraticKernel::from_halfvec(&k3.to_halfvec(), 3, 0.5).unwrap();
        assert!((&rebuilt.p - &k3.p).norm() < 1e-14);
        let x3 = DVector::from_vec(vec![0.3, -0.8, 1.1]);
        assert_abs_diff_eq!(phi(&x3).dot(&k3.to_halfvec()), k3.eval(&x3), epsilon = 1e-12);
    }

    #[test]
    fn kernel_construction_rules() {
        assert!(QuadraticKernel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 1.0]),
            0.7
        )
        .is_err());
        // Tiny asymmetry is absorbed by re-symmetrization.
        let k = QuadraticKernel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5 + 1e-12, 0.5, 1.0]),
            0.7,
        )
        .unwrap();
        assert!((&k.p - k.p.transpose()).norm() == 0.0);
        // Indefinite kernels are representable; projection clamps them.
        let ind =
            QuadraticKernel::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]), 0.7)
                .unwrap();
        assert!(ind.min_eigenvalue() < 0.0);
        let proj = ind.psd_projected();
        assert!(proj.min_eigenvalue() >= -1e-12);
        assert_abs_diff_eq!(proj.p[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(proj.p[(1, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cost_spec_validation_and_lipschitz() {
        assert!(CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 1.2).is_err());
        assert!(CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), 0.0).is_err());
        assert!(CostSpec::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DMatrix::identity(1, 1),
            0.7
        )
        .is_err());

        let cost = cost_07();
        assert_abs_diff_eq!(
            cost.stage_cost(&v2(1.0, 0.0), &DVector::from_element(1, 1.0)),
            2.0,
            epsilon = 1e-12
        );

        // Empirical check of the Lipschitz bound on the ball it is quoted for.
        let radius = 2.0_f64.sqrt();
        let lip = cost.lipschitz_on_ball(radius);
        assert_abs_diff_eq!(lip, 4.0 * radius, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let mut pts = Vec::new();
            for _ in 0..2 {
                let mut x = v2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if x.norm() > radius {
                    x *= radius / x.norm();
                }
                let mut u = DVector::from_element(1, rng.gen_range(-1.0..1.0));
                if u.norm() > radius {
                    u *= radius / u.norm();
                }
                pts.push((x, u));
            }
            let dl = (cost.stage_cost(&pts[0].0, &pts[0].1)
                - cost.stage_cost(&pts[1].0, &pts[1].1))
            .abs();
            let dist = ((&pts[0].0 - &pts[1].0).norm_squared()
                + (&pts[0].1 - &pts[1].1).norm_squared())
            .sqrt();
            assert!(dl <= lip * dist + 1e-12);
        }
    }

    #[test]
    fn predict_next_state_hand_value() {
        // Θ̂ = [Â B̂]ᵀ with Â = [[0,1],[−2,−3]], B̂ = [[0],[1]].
        let theta = DMatrix::from_row_slice(3, 2, &[0.0, -2.0, 1.0, -3.0, 0.0, 1.0]);
        let x_hat = predict_next_state(
            &v2(1.0, 0.0),
            &v2(0.1, 0.0),
            &DVector::from_element(1, 0.2),
            &theta,
        );
        assert_abs_diff_eq!(x_hat[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x_hat[1], 0.0, epsilon = 1e-12);

        let (a_hat, b_hat) = theta_blocks(&theta, 2);
        assert_abs_diff_eq!(a_hat[(1, 0)], -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b_hat[(1, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bellman_target_hand_value() {
        let kernel = QuadraticKernel::new(DMatrix::identity(2, 2), 0.7).unwrap();
        let t = bellman_target(
            &v2(1.0, 0.0),
            &DVector::from_element(1, 1.0),
            &v2(1.0, 0.0),
            &kernel,
            &cost_07(),
        );
        assert_abs_diff_eq!(t, 2.7, epsilon = 1e-12);
    }

    /// Exact closed-loop samples from the reference linear plant under
    /// u = −Kx, with the true successor as the model prediction.
    fn linear_policy_samples(k_gain: &DMatrix<f64>, count: usize, seed: u64) -> Vec<EvalSample> {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let x = v2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let u = -k_gain * &x;
                let x_next = &a * &x + &b * &u;
                EvalSample {
                    x,
                    u,
                    x_next_hat: x_next,
                }
            })
            .collect()
    }

    fn stable_gain() -> DMatrix<f64> {
        // A − BK has eigenvalues {−0.3, −0.2}: comfortably inside the
        // √γ-contraction region for γ = 0.7.
        DMatrix::from_row_slice(1, 2, &[-1.94, -2.5])
    }

    #[test]
    fn batch_fit_is_fixed_at_the_true_evaluation() {
        // Feeding the policy's exact discounted evaluation back through one
        // fit must return it unchanged: the targets satisfy the fixed-policy
        // consistency equation exactly on noiseless linear data.
        let plant = LinearPlant::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let cost = cost_07();
        let k_gain = stable_gain();
        let p_eval = discounted_lyapunov(&plant, &k_gain, &cost).unwrap();
        let samples = linear_policy_samples(&k_gain, 30, 7);
        let fit = fit_kernel_batch(&samples, &p_eval, &cost).unwrap();
        assert!(
            (&fit.kernel.p - &p_eval.p).norm() < 1e-8,
            "fixed-point violation {:.3e}",
            (&fit.kernel.p - &p_eval.p).norm()
        );
        assert!(!fit.psd_warning);
    }

    #[test]
    fn iterated_batch_fit_converges_to_lyapunov_oracle() {
        let plant = LinearPlant::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let cost = cost_07();
        let k_gain = stable_gain();
        let samples = linear_policy_samples(&k_gain, 40, 13);
        let mut kernel = QuadraticKernel::zero(2, cost.gamma);
        for _ in 0..200 {
            let fit = fit_kernel_batch(&samples, &kernel, &cost).unwrap();
            let delta = (&fit.kernel.p - &kernel.p).norm();
            kernel = fit.kernel;
            if delta < 1e-12 {
                break;
            }
        }
        let p_eval = discounted_lyapunov(&plant, &k_gain, &cost).unwrap();
        assert!(
            (&kernel.p - &p_eval.p).norm() < 1e-6,
            "converged kernel off by {:.3e}",
            (&kernel.p - &p_eval.p).norm()
        );
    }

    #[test]
    fn tiny_discount_reduces_fit_to_stage_cost_regression() {
        // With γ → 0 the target is the stage cost alone; under u = −Kx that
        // is x(Q + KᵀRK)xᵀ, recoverable exactly.
        let gamma = 1e-300;
        let cost = CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), gamma).unwrap();
        let k_gain = stable_gain();
        let samples = linear_policy_samples(&k_gain, 25, 3);
        let prev = QuadraticKernel::new(
            DMatrix::from_row_slice(2, 2, &[5.0, 1.0, 1.0, 5.0]),
            gamma,
        )
        .unwrap();
        let fit = fit_kernel_batch(&samples, &prev, &cost).unwrap();
        let expected = &cost.q + k_gain.transpose() * &cost.r * &k_gain;
        assert!((&fit.kernel.p - expected).norm() < 1e-10);
    }

    #[test]
    fn fit_rejects_insufficient_excitation() {
        let cost = cost_07();
        let prev = QuadraticKernel::zero(2, cost.gamma);
        // Too few samples.
        let two = linear_policy_samples(&stable_gain(), 2, 1);
        assert!(matches!(
            fit_kernel_batch(&two, &prev, &cost).unwrap_err(),
            Error::InsufficientExcitation(_)
        ));
        // Plenty of samples, but all on one ray: features span one direction.
        let ray: Vec<EvalSample> = (1..20)
            .map(|i| {
                let t = i as f64 * 0.1;
                EvalSample {
                    x: v2(t, t),
                    u: DVector::from_element(1, 0.0),
                    x_next_hat: v2(0.0, 0.0),
                }
            })
            .collect();
        assert!(matches!(
            fit_kernel_batch(&ray, &prev, &cost).unwrap_err(),
            Error::InsufficientExcitation(_)
        ));
    }

    #[test]
    fn indefinite_fit_raises_psd_warning() {
        // A strongly indefinite previous kernel drives targets negative in
        // one direction; the fitted kernel inherits the indefiniteness and
        // must be flagged, not silently returned as a value function.
        let cost = cost_07();
        let prev = QuadraticKernel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -50.0]),
            cost.gamma,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<EvalSample> = (0..30)
            .map(|_| {
                let x = v2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                EvalSample {
                    u: DVector::from_element(1, 0.0),
                    x_next_hat: x.clone(),
                    x,
                }
            })
            .collect();
        let fit = fit_kernel_batch(&samples, &prev, &cost).unwrap();
        assert!(fit.psd_warning);
        assert!(fit.min_eigenvalue < PSD_WARN_TOL);
    }

    #[test]
    fn recursive_replay_reaches_batch_fixed_point() {
        // Replaying a stationary dataset many times must drive the recursive
        // estimate to the batch fixed point (= the policy's evaluation).
        let plant = LinearPlant::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let cost = cost_07();
        let k_gain = stable_gain();
        let samples = linear_policy_samples(&k_gain, 200, 17);

        let cfg = RlsConfig {
            kappa: 0.995,
            lambda0: 1e6,
        };
        let mut state = KernelRls::new(2, cost.gamma, &cfg).unwrap();
        for _ in 0..200 {
            for s in &samples {
                fit_kernel_recursive(&mut state, &s.x, &s.u, &s.x_next_hat, &cost).unwrap();
            }
        }
        let p_eval = discounted_lyapunov(&plant, &k_gain, &cost).unwrap();
        let gap = (&state.kernel().p - &p_eval.p).norm();
        assert!(gap < 1e-4, "recursive kernel off by {gap:.3e}");
    }

    #[test]
    fn recursive_seeded_at_fixed_point_stays_there() {
        let plant = LinearPlant::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let cost = cost_07();
        let k_gain = stable_gain();
        let p_eval = discounted_lyapunov(&plant, &k_gain, &cost).unwrap();
        let cfg = RlsConfig {
            kappa: 0.995,
            lambda0: 1.0,
        };
        let mut state = KernelRls::with_kernel(&p_eval, &cfg).unwrap();
        for s in linear_policy_samples(&k_gain, 100, 23) {
            let innovation =
                fit_kernel_recursive(&mut state, &s.x, &s.u, &s.x_next_hat, &cost).unwrap();
            assert!(innovation.abs() < 1e-9);
        }
        assert!((&state.kernel().p - &p_eval.p).norm() < 1e-8);
    }
}
