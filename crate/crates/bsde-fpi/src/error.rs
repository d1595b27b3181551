use thiserror::Error;

/// Library-wide error type. `Argument` and `Capacity` indicate a problem with
/// the requested construction; the remaining variants are numerical guards
/// raised during a solve.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("lattice of {requested} nodes exceeds the node cap {cap}")]
    Capacity { requested: u128, cap: u64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("level range error: {0}")]
    LevelRange(String),

    #[error(
        "step bound {bound:.6e} is below one grid step dt = {dt:.6e}; \
         use a finer time grid (larger K) or a shorter horizon"
    )]
    StepBoundBelowGrid { bound: f64, dt: f64 },

    #[error(
        "functional '{name}' lacks the local-in-time/differential properties required \
         for a global solve; use a local solve on a window within the step bound \
         (or set the horizon override to attempt a longer window)"
    )]
    LocalOnlyFunctional { name: String },

    #[error(
        "window {window} exceeds the step bound ({width:.6e} > {bound:.6e}) and the \
         horizon override is not set"
    )]
    HorizonExceedsBound { window: usize, width: f64, bound: f64 },

    #[error(
        "Picard iteration did not converge in window {window} after {iterations} \
         iterations (last increment {increment:.3e}, last ratio {ratio:.3})"
    )]
    NoConvergence { window: usize, iterations: usize, increment: f64, ratio: f64 },

    #[error(
        "Picard iteration diverges in window {window} (sustained ratio {ratio:.3} >= 1 \
         over {iterations} iterations)"
    )]
    Divergence { window: usize, iterations: usize, ratio: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("quadrature failed to reach tolerance {tol:.3e} (estimate {estimate:.3e})")]
    Quadrature { tol: f64, estimate: f64 },

    #[error("PDE stability violated: dt = {dt:.6e} > dx^2 = {dx2:.6e}")]
    PdeStability { dt: f64, dx2: f64 },

    #[error("malformed input: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
