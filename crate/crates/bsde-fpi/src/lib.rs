//! Backward stochastic dynamics on an exact discrete path space.
//!
//! The probability space is a non-recombining 2^d-ary lattice whose driver
//! increments have exact moments, so conditional expectations, martingale
//! closures, and path-space norms are computed by finite arithmetic rather
//! than by simulation. On top of it the crate provides:
//!
//! - the pair Y(V) = E(ξ + V_end | F) − V and its martingale part,
//! - pluggable martingale functionals (increment density, quadratic-variation
//!   tail, kernel-weighted density) with declared Lipschitz constants,
//! - a Picard iteration for the induced fixed-point problem, contractive on
//!   windows shorter than an explicit step bound, and a window-splicing
//!   global solver for arbitrary horizons,
//! - independent cross-checks: a closed-form linear-driver recursion, and a
//!   finite-difference scheme for the nonlocal PDE that the one-dimensional
//!   quadratic-tail dynamics discretize.
//!
//! All level sweeps that run in parallel write disjoint output chunks and all
//! reductions run sequentially in index order, so results are bit-identical
//! at any thread count (see [`par`]).

pub mod catalog;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod lattice;
pub mod oracles;
pub mod par;
pub mod solver;

pub use error::{Error, Result};
pub use functionals::{
    differential_audit, future_perturbation, future_perturbation_audit, lipschitz_ratio,
    m_of_v, restriction_audit, y_of_v, ym_of_v, Codomain, Density, DriverSpec, Kernel,
    KernelWeights, MartingaleFunctional, Quadratic,
};
pub use grid::TimeGrid;
pub use lattice::{
    cond_expect, cond_expect_terminal, norm_c, norm_h2, AdaptedProcess, LatticeSpace,
    MartingaleProcess, TerminalCondition, DEFAULT_NODE_CAP,
};
pub use oracles::{
    cross_validate, discrete_linear_oracle, heat_kernel_expectation, solve_nonlocal_pde,
    CrossReport, CrossRow, PdeGrid,
};
pub use solver::{
    conservative_step_bound, contraction_ratio_bound, global_solve, local_solve, picard_map,
    step_bound, verify_solution, ConvergenceRow, PicardSeed, Solution, SolveOptions,
    SolveReport, VerifyReport, WindowReport,
};
