//! Error taxonomy for the library and the experiment runner.
//!
//! Every variant maps to a distinct process exit status (see
//! [`Error::exit_code`]) so scripted callers can tell a config typo from a
//! rank-deficient dataset from a diverged rollout without parsing stderr.

use thiserror::Error;

/// Unified error type across identification, training, and the runner.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration (parse failure, invariant
    /// violation, dimension mismatch, unknown key).
    #[error("configuration error: {0}")]
    Config(String),

    /// Regressor data does not span the required space; ridge rescue failed.
    #[error("insufficient excitation: {0}")]
    InsufficientExcitation(String),

    /// The recursive identifier produced non-finite arithmetic (covariance
    /// blow-up under forgetting with vanishing excitation). Carries the last
    /// valid estimate so the caller can hold it.
    #[error("identifier degraded at step {step}: {reason}")]
    IdentifierDegraded {
        step: u64,
        reason: String,
        /// Row-major dump of the last finite Θ̂, for error-hold recovery.
        last_theta: Vec<f64>,
    },

    /// R + γB̂ᵀPB̂ failed its positive-definiteness check even after PSD
    /// projection of the kernel.
    #[error("policy improvement failed: {0}")]
    PolicyImprovement(String),

    /// Closed loop under the given gain has √γ-spectral radius ≥ 1; the
    /// discounted evaluation sum diverges.
    #[error("policy evaluation diverges: {0}")]
    EvaluationDiverges(String),

    /// A verification oracle failed to converge within its iteration budget.
    #[error("oracle failure: {0}")]
    OracleFailure(String),

    /// The iteration-bound formula received arguments with a nonpositive
    /// logarithm argument; the bound is undefined there and is reported,
    /// not guessed.
    #[error("iteration bound undefined: log argument {argument} is not positive")]
    BoundUndefined { argument: f64 },

    /// Offline training hit the iteration cap before the kernel delta fell
    /// below tolerance. The full history is still written.
    #[error("training did not converge within {max_iterations} iterations (last delta {last_delta:.3e})")]
    Unconverged {
        max_iterations: usize,
        last_delta: f64,
    },

    /// The `--baseline` bundle is absent or its state version is unsupported.
    #[error("baseline bundle error: {0}")]
    Bundle(String),

    /// A rollout left the blow-up radius or produced non-finite state.
    #[error("trajectory diverged at step {step} (‖x‖ = {norm:.3e})")]
    Diverged { step: u64, norm: f64 },

    /// Input artifact (CSV for plotting) does not match the expected schema.
    #[error("input error: {0}")]
    Input(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable exit status for the CLI. 0 is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InsufficientExcitation(_) => 3,
            Error::IdentifierDegraded { .. } => 4,
            Error::PolicyImprovement(_) => 5,
            Error::EvaluationDiverges(_) => 6,
            Error::OracleFailure(_) => 7,
            Error::BoundUndefined { .. } => 8,
            Error::Unconverged { .. } => 9,
            Error::Bundle(_) => 10,
            Error::Diverged { .. } => 11,
            Error::Input(_) => 12,
            Error::Io(_) => 13,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Input(format!("csv error: {other:?}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
