//! Crate-wide error type.
//!
//! All fallible operations return [`Result`]. Variants carry enough context
//! (names, residuals, tolerances) to diagnose a failure without re-running.

/// Errors produced by state construction, kernel building, integration and
/// the geometry/sampling front ends.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not Hermitian: max |m - m^dagger| = {residual:.3e} exceeds {tol:.3e}")]
    NotHermitian { residual: f64, tol: f64 },

    #[error("state invariant violated ({what}): residual {residual:.3e} exceeds {tol:.3e}")]
    InvalidState {
        what: &'static str,
        residual: f64,
        tol: f64,
    },

    #[error("amplitudes are not normalized: |sum |c_n|^2 - 1| = {residual:.3e}")]
    NotNormalized { residual: f64 },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("kernel is not symmetric: max |k - k^T| = {residual:.3e}")]
    AsymmetricKernel { residual: f64 },

    #[error(
        "kernel is not positive semidefinite: smallest eigenvalue {min_eig:.3e} \
         below -{tol:.3e}"
    )]
    NotPsd { min_eig: f64, tol: f64 },

    #[error("grid of {cells} cells exceeds the cap of {cap}")]
    GridTooLarge { cells: usize, cap: usize },

    #[error("grids differ between fields that must share one")]
    GridMismatch,

    #[error("ball of radius {radius:.3e} m with margin {margin:.3e} m does not fit in the grid")]
    BallDoesNotFit { radius: f64, margin: f64 },

    #[error(
        "trace drift {drift:.3e} at step {step} exceeds 1e-6; \
         the integration step is too large for this model"
    )]
    TraceDrift { step: usize, drift: f64 },

    #[error("non-finite values at step {step}; integration aborted")]
    NumericalBlowup { step: usize },

    #[error("internal consistency check failed ({what}): residual {residual:.3e} exceeds {tol:.3e}")]
    ConsistencyCheck {
        what: &'static str,
        residual: f64,
        tol: f64,
    },

    #[error("no crossing of t_dyn and t_d in the sweep range [{lo:.1e}, {hi:.1e}] m")]
    NoCrossing { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
