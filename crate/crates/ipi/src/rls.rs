//! Recursive least squares with exponential forgetting, plus the batch
//! least-squares path used for offline training.
//!
//! The identifier estimates Θ̂ = [Â B̂]ᵀ in the incremental regression
//! Δx_{k+1}ᵀ ≈ X_kᵀ Θ̂ with the augmented regressor X_k = [Δx_k; Δu_k]:
//!
//! ```text
//! ε_k  = Δx_{k+1}ᵀ − X_kᵀΘ̂
//! Θ̂⁺  = Θ̂ + Λ X_k ε_k / (κ + X_kᵀ Λ X_k)
//! Λ⁺  = (1/κ) [Λ − Λ X_k X_kᵀ Λ / (κ + X_kᵀ Λ X_k)]
//! ```
//!
//! κ = 1 weights all samples equally (and is then algebraically identical to
//! ridge batch LS with ridge 1/Λ₀ — asserted in the tests); κ < 1 discounts
//! old data so drifting parameters can be tracked, at the price of covariance
//! growth when excitation vanishes. Λ is re-symmetrized every step and its
//! eigenvalues are clipped to a wide band, with clip events counted rather
//! than hidden.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forgetting factor and initial covariance scale for [`RlsIdentifier`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RlsConfig {
    /// Forgetting factor κ ∈ (0, 1]. 1 = infinite memory.
    pub kappa: f64,
    /// Initial covariance Λ₀ = scale·I. Large values encode an uninformative
    /// prior (fast initial adaptation); small values encode confidence in the
    /// initial estimate.
    pub lambda0: f64,
}

impl Default for RlsConfig {
    fn default() -> Self {
        Self {
            kappa: 0.98,
            lambda0: 1e6,
        }
    }
}

impl RlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::Config(format!(
                "forgetting factor must be in (0, 1], got {}",
                self.kappa
            )));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return Err(Error::Config(format!(
                "initial covariance scale must be positive and finite, got {}",
                self.lambda0
            )));
        }
        Ok(())
    }
}

/// Covariance eigenvalue band. Clipping keeps Λ numerically positive definite
/// under long runs with forgetting; each clip is counted in diagnostics.
pub const COVARIANCE_EIG_FLOOR: f64 = 1e-12;
pub const COVARIANCE_EIG_CEILING: f64 = 1e12;

/// Sequential RLS state machine for a multi-output linear regression
/// yᵀ = XᵀΘ. Regressor dimension and output dimension are fixed at
/// construction.
#[derive(Debug, Clone)]
pub struct RlsIdentifier {
    theta: DMatrix<f64>,
    lambda: DMatrix<f64>,
    kappa: f64,
    steps: u64,
    clip_events: u64,
}

impl RlsIdentifier {
    /// Fresh identifier with Θ̂₀ = 0 and Λ₀ = lambda0·I.
    pub fn new(reg_dim: usize, out_dim: usize, cfg: &RlsConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            theta: DMatrix::zeros(reg_dim, out_dim),
            lambda: DMatrix::identity(reg_dim, reg_dim) * cfg.lambda0,
            kappa: cfg.kappa,
            steps: 0,
            clip_events: 0,
        })
    }

    /// Identifier seeded with an existing estimate (e.g. from a previous
    /// batch fit) and Λ₀ = lambda0·I.
    pub fn with_initial(theta0: DMatrix<f64>, cfg: &RlsConfig) -> Result<Self> {
        cfg.validate()?;
        if theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("initial estimate has non-finite entries".into()));
        }
        let reg_dim = theta0.nrows();
        Ok(Self {
            theta: theta0,
            lambda: DMatrix::identity(reg_dim, reg_dim) * cfg.lambda0,
            kappa: cfg.kappa,
            steps: 0,
            clip_events: 0,
        })
    }

    /// Rebuild from serialized state (resumable online runs).
    pub fn from_parts(
        theta: DMatrix<f64>,
        lambda: DMatrix<f64>,
        kappa: f64,
        steps: u64,
        clip_events: u64,
    ) -> Result<Self> {
        let cfg = RlsConfig { kappa, lambda0: 1.0 };
        cfg.validate()?;
        if !lambda.is_square() || lambda.nrows() != theta.nrows() {
            return Err(Error::Config("covariance/estimate dimension mismatch".into()));
        }
        Ok(Self {
            theta,
            lambda,
            kappa,
            steps,
            clip_events,
        })
    }

    /// Predicted output Δx̂ for a regressor: Δx̂ᵀ = XᵀΘ̂.
    pub fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(
            x.len(),
            self.theta.nrows(),
            "regressor length {} does not match identifier dimension {}",
            x.len(),
            self.theta.nrows()
        );
        self.theta.transpose() * x
    }

    /// One RLS step. Returns the innovation ε_k = observed − Θ̂ᵀX (the
    /// pre-update residual).
    ///
    /// On non-finite arithmetic — covariance blow-up under κ < 1 with
    /// vanishing excitation being the realistic path — the update is rolled
    /// back and [`Error::IdentifierDegraded`] is returned carrying the last
    /// valid estimate, so callers can hold it.
    pub fn update(&mut self, x: &DVector<f64>, observed: &DVector<f64>) -> Result<DVector<f64>> {
        assert_eq!(x.len(), self.theta.nrows());
        assert_eq!(observed.len(), self.theta.ncols());

        let innovation = observed - self.theta.transpose() * x;
        let lambda_x = &self.lambda * x;
        let denom = self.kappa + x.dot(&lambda_x);

        let theta_next = &self.theta + &lambda_x * innovation.transpose() / denom;
        let mut lambda_next =
            (&self.lambda - &lambda_x * lambda_x.transpose() / denom) / self.kappa;
        // Re-symmetrize to suppress floating-point drift before the spectral clip.
        lambda_next = (&lambda_next + lambda_next.transpose()) * 0.5;

        let finite = theta_next.iter().all(|v| v.is_finite())
            && lambda_next.iter().all(|v| v.is_finite())
            && innovation.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::IdentifierDegraded {
                step: self.steps,
                reason: "non-finite arithmetic in RLS update".into(),
                last_theta: dump_row_major(&self.theta),
            });
        }

        let eig = lambda_next.clone().symmetric_eigen();
        let mut clipped = false;
        let clamped: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| {
                if !(COVARIANCE_EIG_FLOOR..=COVARIANCE_EIG_CEILING).contains(&l) {
                    clipped = true;
                    l.clamp(COVARIANCE_EIG_FLOOR, COVARIANCE_EIG_CEILING)
                } else {
                    l
                }
            })
            .collect();
        if clipped {
            self.clip_events += 1;
            let d = DMatrix::from_diagonal(&DVector::from_vec(clamped));
            lambda_next = &eig.eigenvectors * d * eig.eigenvectors.transpose();
            lambda_next = (&lambda_next + lambda_next.transpose()) * 0.5;
        }

        self.theta = theta_next;
        self.lambda = lambda_next;
        self.steps += 1;
        Ok(innovation)
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Number of updates on which the covariance spectrum had to be clipped.
    pub fn clip_events(&self) -> u64 {
        self.clip_events
    }
}

/// Row-major flattening, the layout error payloads and serialized state use.
pub fn dump_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Default ridge term for [`batch_ls`]; keeps the normal equations solvable
/// on marginally excited data without visibly biasing well-excited fits.
pub const DEFAULT_RIDGE: f64 = 1e-9;

/// Batch least squares: minimizes Σ‖Δxᵀ − XᵀΘ‖² over Θ via the ridge-
/// regularized normal equations (G + λI)Θ = H with G = ΣXXᵀ, H = ΣX·Δxᵀ.
///
/// Errors with insufficient excitation when there are fewer samples than
/// regressor dimensions or when G is rank-deficient beyond what the ridge
/// can meaningfully rescue.
pub fn batch_ls(
    regressors: &[DVector<f64>],
    observations: &[DVector<f64>],
    ridge: f64,
) -> Result<DMatrix<f64>> {
    if regressors.is_empty() || regressors.len() != observations.len() {
        return Err(Error::Config(format!(
            "batch LS needs matched nonempty sample lists, got {} regressors and {} observations",
            regressors.len(),
            observations.len()
        )));
    }
    let reg_dim = regressors[0].len();
    let out_dim = observations[0].len();
    if regressors.len() < reg_dim {
        return Err(Error::InsufficientExcitation(format!(
            "{} samples for {} regressor dimensions",
            regressors.len(),
            reg_dim
        )));
    }

    let mut gram = DMatrix::<f64>::zeros(reg_dim, reg_dim);
    let mut cross = DMatrix::<f64>::zeros(reg_dim, out_dim);
    for (x, y) in regressors.iter().zip(observations) {
        assert_eq!(x.len(), reg_dim);
        assert_eq!(y.len(), out_dim);
        gram += x * x.transpose();
        cross += x * y.transpose();
    }

    // Rank check on the unridged Gram matrix: a direction the data never
    // excited cannot be rescued by the ridge — it would silently return the
    // prior (zero) along it.
    let min_eig = gram
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < 1000.0 * ridge {
        return Err(Error::InsufficientExcitation(format!(
            "regressor Gram matrix near-singular (min eigenvalue {min_eig:.3e})"
        )));
    }

    let ridged = gram + DMatrix::identity(reg_dim, reg_dim) * ridge;
    ridged
        .cholesky()
        .map(|chol| chol.solve(&cross))
        .ok_or_else(|| {
            Error::InsufficientExcitation("ridged normal equations not positive definite".into())
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// True parameters used across identification tests:
    /// Â = [[0,1],[−2,−3]], B̂ = [[0],[1]] stacked as Θ = [Â B̂]ᵀ (3×2).
    fn theta_true() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 2, &[0.0, -2.0, 1.0, -3.0, 0.0, 1.0])
    }

    fn pe_samples(n: usize, seed: u64) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let th = theta_true();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            ys.push(th.transpose() * &x);
            xs.push(x);
        }
        (xs, ys)
    }

    #[test]
    fn predict_hand_value() {
        let cfg = RlsConfig::default();
        let theta = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let rls = RlsIdentifier::with_initial(theta, &cfg).unwrap();
        let pred = rls.predict(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_abs_diff_eq!(pred[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pred[1], 5.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_regressor_inflates_covariance_only() {
        let cfg = RlsConfig {
            kappa: 0.9,
            lambda0: 2.0,
        };
        let mut rls = RlsIdentifier::new(3, 2, &cfg).unwrap();
        let before = rls.theta().clone();
        rls.update(&DVector::zeros(3), &DVector::from_vec(vec![1.0, 1.0]))
            .unwrap();
        assert_eq!(rls.theta(), &before);
        let expected = DMatrix::<f64>::identity(3, 3) * (2.0 / 0.9);
        assert!((rls.covariance() - expected).norm() < 1e-12);
    }

    #[test]
    fn zero_innovation_is_a_fixed_point() {
        let cfg = RlsConfig::default();
        let mut rls = RlsIdentifier::with_initial(theta_true(), &cfg).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7, 0.2]);
        let y = rls.predict(&x);
        let innovation = rls.update(&x, &y).unwrap();
        assert!(innovation.norm() < 1e-14);
        assert!((rls.theta() - theta_true()).norm() < 1e-14);
    }

    #[test]
    fn noiseless_pe_data_identifies_theta_and_matches_batch() {
        // κ=1 with prior Λ₀ = λ⁻¹·I is algebraically ridge regression with
        // ridge λ, so the recursive estimate must match batch_ls with the
        // same ridge essentially to machine precision.
        let lambda0 = 1e6;
        let cfg = RlsConfig {
            kappa: 1.0,
            lambda0,
        };
        let mut rls = RlsIdentifier::new(3, 2, &cfg).unwrap();
        let (xs, ys) = pe_samples(50, 3);
        for (x, y) in xs.iter().zip(&ys) {
            rls.update(x, y).unwrap();
        }
        assert!(
            (rls.theta() - theta_true()).norm() < 1e-6,
            "estimate error {:.3e}",
            (rls.theta() - theta_true()).norm()
        );
        let batch = batch_ls(&xs, &ys, 1.0 / lambda0).unwrap();
        assert!(
            (rls.theta() - &batch).norm() < 1e-8,
            "recursive/batch mismatch {:.3e}",
            (rls.theta() - &batch).norm()
        );
    }

    #[test]
    fn kappa_one_equals_ridge_batch_on_noisy_data() {
        // Same equivalence on data the model cannot fit exactly.
        let ridge = DEFAULT_RIDGE;
        let cfg = RlsConfig {
            kappa: 1.0,
            lambda0: 1.0 / ridge,
        };
        let mut rls = RlsIdentifier::new(3, 2, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let th = theta_true();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..80 {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let noise = DVector::from_fn(2, |_, _| rng.gen_range(-0.05..0.05));
            let y = th.transpose() * &x + noise;
            rls.update(&x, &y).unwrap();
            xs.push(x);
            ys.push(y);
        }
        let batch = batch_ls(&xs, &ys, ridge).unwrap();
        assert!(
            (rls.theta() - &batch).norm() < 1e-8,
            "mismatch {:.3e}",
            (rls.theta() - &batch).norm()
        );
    }

    #[test]
    fn batch_ls_exact_recovery_and_zero_observations() {
        let (xs, ys) = pe_samples(40, 5);
        let theta = batch_ls(&xs, &ys, DEFAULT_RIDGE).unwrap();
        assert!((theta - theta_true()).norm() < 1e-8);

        let zeros: Vec<DVector<f64>> = xs.iter().map(|_| DVector::zeros(2)).collect();
        let theta0 = batch_ls(&xs, &zeros, DEFAULT_RIDGE).unwrap();
        assert!(theta0.norm() < 1e-8);
    }

    #[test]
    fn batch_ls_rejects_unexcited_data() {
        // Constant regressors span a single direction.
        let xs: Vec<DVector<f64>> = (0..20)
            .map(|_| DVector::from_vec(vec![1.0, 1.0, 1.0]))
            .collect();
        let ys: Vec<DVector<f64>> = (0..20).map(|_| DVector::from_vec(vec![1.0, 0.0])).collect();
        let err = batch_ls(&xs, &ys, DEFAULT_RIDGE).unwrap_err();
        assert!(matches!(err, Error::InsufficientExcitation(_)));

        let (xs, ys) = pe_samples(2, 7);
        let err = batch_ls(&xs, &ys, DEFAULT_RIDGE).unwrap_err();
        assert!(matches!(err, Error::InsufficientExcitation(_)));
    }

    #[test]
    fn drift_tracking_error_does_not_grow_after_burn_in() {
        // Ramp drift in one parameter at 0.002 per step under persistent
        // excitation. The early window [20,100] still contains the tail of
        // the initial convergence from Θ̂₀ = 0 (Λ₀ = 1 keeps that transient
        // visible); the late window [100,200] holds only the steady
        // forgetting-factor lag, which must not exceed it.
        for seed in 0..5 {
            let cfg = RlsConfig {
                kappa: 0.98,
                lambda0: 1.0,
            };
            let mut rls = RlsIdentifier::new(3, 2, &cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut early_max: f64 = 0.0;
            let mut late_max: f64 = 0.0;
            for k in 0..=200u64 {
                let mut th = theta_true();
                th[(0, 1)] = -2.0 + 0.002 * k as f64;
                let x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
                let y = th.transpose() * &x;
                rls.update(&x, &y).unwrap();
                let err = (rls.theta() - &th).norm();
                if (20..=100).contains(&k) {
                    early_max = early_max.max(err);
                } else if k > 100 {
                    late_max = late_max.max(err);
                }
            }
            assert!(
                late_max <= early_max,
                "seed {seed}: tracking error grew, late {late_max:.4} > early {early_max:.4}"
            );
        }
    }

    #[test]
    fn covariance_ceiling_clip_is_counted() {
        // κ = 0.5 with zero regressors doubles Λ every step; starting at 1e9
        // the ceiling is crossed within a dozen steps.
        let cfg = RlsConfig {
            kappa: 0.5,
            lambda0: 1e9,
        };
        let mut rls = RlsIdentifier::new(2, 1, &cfg).unwrap();
        for _ in 0..20 {
            rls.update(&DVector::zeros(2), &DVector::zeros(1)).unwrap();
        }
        assert!(rls.clip_events() > 0);
        let max_eig = rls
            .covariance()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(0.0, f64::max);
        assert!(max_eig <= COVARIANCE_EIG_CEILING * (1.0 + 1e-9));
    }

    #[test]
    fn overflow_degrades_with_last_estimate_held() {
        let cfg = RlsConfig {
            kappa: 1.0,
            lambda0: 1e12,
        };
        let mut rls = RlsIdentifier::new(2, 1, &cfg).unwrap();
        let x = DVector::from_vec(vec![1.0, 0.5]);
        rls.update(&x, &DVector::from_vec(vec![2.0])).unwrap();
        let theta_before = rls.theta().clone();

        let huge = DVector::from_vec(vec![1e308, 1e308]);
        let err = rls.update(&huge, &DVector::from_vec(vec![1.0])).unwrap_err();
        match err {
            Error::IdentifierDegraded { last_theta, .. } => {
                assert_eq!(last_theta, dump_row_major(&theta_before));
            }
            other => panic!("expected degraded error, got {other:?}"),
        }
        // State must be unchanged so the caller can hold the previous input.
        assert_eq!(rls.theta(), &theta_before);
    }

    proptest! {
        #[test]
        fn covariance_stays_symmetric_positive_definite(
            seed in 0u64..50,
            kappa in 0.9f64..1.0,
            n in 5usize..40,
        ) {
            let cfg = RlsConfig { kappa, lambda0: 100.0 };
            let mut rls = RlsIdentifier::new(3, 2, &cfg).unwrap();
            let th = theta_true();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..n {
                let x = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
                let y = th.transpose() * &x;
                rls.update(&x, &y).unwrap();
                let lam = rls.covariance();
                prop_assert!((lam - lam.transpose()).norm() < 1e-10);
                let min_eig = lam
                    .symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                prop_assert!(min_eig > 0.0);
            }
        }
    }
}
