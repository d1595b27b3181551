//! JSON run configuration: named catalog selections with declared constants,
//! mapped onto the library builders. Every struct rejects unknown keys so a
//! typo'd field can never silently fall back to a default.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use bsde_fpi::catalog::{
    build_driver, build_functional, build_terminal, F0Kind, FiKind, FunctionalKind, TerminalKind,
    WeightsKind,
};
use bsde_fpi::{
    DriverSpec, LatticeSpace, MartingaleFunctional, PicardSeed, SolveOptions, TerminalCondition,
    TimeGrid,
};

use crate::Failure;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    pub pde: Option<PdeConfig>,
    pub study: Option<StudyConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub tau: f64,
    pub t_end: f64,
    pub steps: usize,
    #[serde(default = "default_one")]
    pub d: usize,
    #[serde(default = "default_one")]
    pub dprime: usize,
    /// z-arity of f0; defaults to the functional's output dimension.
    pub m: Option<usize>,
    pub node_cap: Option<u64>,
    pub driver: DriverConfig,
    pub terminal: Vec<TerminalConfig>,
    pub functional: FunctionalConfig,
}

/// The fully built problem: lattice, terminal datum, driver, functional.
pub struct Problem {
    pub space: Arc<LatticeSpace>,
    pub xi: TerminalCondition,
    pub driver: DriverSpec,
    pub functional: Box<dyn MartingaleFunctional>,
}

impl ProblemConfig {
    fn fi_kinds(&self) -> Vec<FiKind> {
        if self.driver.fi.is_empty() {
            vec![FiKind::Zero; self.d]
        } else {
            self.driver.fi.iter().map(FiConfig::kind).collect()
        }
    }

    /// Build the functional and driver alone (no lattice): enough for the
    /// step-bound computation at any grid size.
    pub fn functional_and_driver(
        &self,
        grid: &TimeGrid,
    ) -> Result<(Box<dyn MartingaleFunctional>, DriverSpec), Failure> {
        let functional = build_functional(&self.functional.kind(), grid)?;
        let m = self.m.unwrap_or_else(|| functional.output_dim(self.dprime, self.d));
        let driver = build_driver(&self.driver.f0.kind(), &self.fi_kinds(), self.dprime, m, self.d)?;
        Ok((functional, driver))
    }

    pub fn build(&self, steps_override: Option<usize>) -> Result<Problem, Failure> {
        let steps = steps_override.unwrap_or(self.steps);
        let space = match self.node_cap {
            Some(cap) => LatticeSpace::build_with_cap(self.tau, self.t_end, steps, self.d, cap)?,
            None => LatticeSpace::build(self.tau, self.t_end, steps, self.d)?,
        };
        let (functional, driver) = self.functional_and_driver(space.grid())?;
        let kinds: Vec<TerminalKind> = self.terminal.iter().map(TerminalConfig::kind).collect();
        let xi = build_terminal(&space, &kinds, steps)?;
        Ok(Problem { space, xi, driver, functional })
    }

    /// Build with the terminal datum re-read as ξ = φ(x0 + B_T): the lattice
    /// leg of a PDE comparison anchored at x0.
    pub fn build_anchored(&self, x0: f64, steps_override: Option<usize>) -> Result<Problem, Failure> {
        if self.terminal.len() != 1 {
            return Err(Failure::Config(
                "anchored problems need exactly one terminal component".into(),
            ));
        }
        let base = self.build(steps_override)?;
        let t = &self.terminal[0];
        let level = base.space.grid().steps();
        let xi = TerminalCondition::from_driver_fn(&base.space, 1, level, |b, out| {
            out[0] = t.phi_at(x0 + b[0])
        })?;
        Ok(Problem { xi, ..base })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub f0: F0Config,
    /// One diffusion coefficient per driver; empty means all zero.
    #[serde(default)]
    pub fi: Vec<FiConfig>,
}

impl DriverConfig {
    pub fn fi_all_zero(&self) -> bool {
        self.fi.iter().all(|f| matches!(f, FiConfig::Zero))
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum F0Config {
    Zero,
    Constant { c: f64 },
    LinearY { a: f64 },
    LinearYz { a: f64, b: f64 },
    LinearZ { b: f64 },
    SaturatedSin { amp: f64 },
    ClipY { amp: f64, cap: f64 },
}

impl F0Config {
    pub fn kind(&self) -> F0Kind {
        match *self {
            F0Config::Zero => F0Kind::Zero,
            F0Config::Constant { c } => F0Kind::Constant { c },
            F0Config::LinearY { a } => F0Kind::LinearY { a },
            F0Config::LinearYz { a, b } => F0Kind::LinearYZ { a, b },
            F0Config::LinearZ { b } => F0Kind::LinearZ { b },
            F0Config::SaturatedSin { amp } => F0Kind::SaturatedSin { amp },
            F0Config::ClipY { amp, cap } => F0Kind::ClipY { amp, cap },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FiConfig {
    Zero,
    Constant { c: f64 },
    LinearY { a: f64 },
    ClipY { amp: f64, cap: f64 },
}

impl FiConfig {
    pub fn kind(&self) -> FiKind {
        match *self {
            FiConfig::Zero => FiKind::Zero,
            FiConfig::Constant { c } => FiKind::Constant { c },
            FiConfig::LinearY { a } => FiKind::LinearY { a },
            FiConfig::ClipY { amp, cap } => FiKind::ClipY { amp, cap },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalConfig {
    Constant {
        c: f64,
    },
    Coordinate {
        #[serde(default)]
        i: usize,
    },
    Square {
        #[serde(default)]
        i: usize,
        #[serde(default)]
        shift: f64,
    },
    ClippedSquare {
        #[serde(default)]
        i: usize,
        #[serde(default)]
        shift: f64,
        cap: f64,
    },
    ClippedCall {
        #[serde(default)]
        i: usize,
        #[serde(default)]
        strike: f64,
        cap: f64,
    },
}

impl TerminalConfig {
    pub fn kind(&self) -> TerminalKind {
        match *self {
            TerminalConfig::Constant { c } => TerminalKind::Constant { c },
            TerminalConfig::Coordinate { i } => TerminalKind::Coordinate { i },
            TerminalConfig::Square { i, shift } => TerminalKind::Square { i, shift },
            TerminalConfig::ClippedSquare { i, shift, cap } => {
                TerminalKind::ClippedSquare { i, shift, cap }
            }
            TerminalConfig::ClippedCall { i, strike, cap } => {
                TerminalKind::ClippedCall { i, strike, cap }
            }
        }
    }

    /// The terminal datum read as a scalar function of position (single
    /// driver): the φ of a PDE comparison.
    pub fn phi_at(&self, x: f64) -> f64 {
        match *self {
            TerminalConfig::Constant { c } => c,
            TerminalConfig::Coordinate { .. } => x,
            TerminalConfig::Square { shift, .. } => (x + shift) * (x + shift),
            TerminalConfig::ClippedSquare { shift, cap, .. } => {
                ((x + shift) * (x + shift)).min(cap)
            }
            TerminalConfig::ClippedCall { strike, cap, .. } => (x - strike).max(0.0).min(cap),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    Density,
    Quadratic { c1: f64 },
    Kernel { c1: f64, weights: WeightsConfig },
}

impl FunctionalConfig {
    pub fn kind(&self) -> FunctionalKind {
        match self {
            FunctionalConfig::Density => FunctionalKind::Density,
            FunctionalConfig::Quadratic { c1 } => FunctionalKind::Quadratic { c1: *c1 },
            FunctionalConfig::Kernel { c1, weights } => {
                FunctionalKind::Kernel { c1: *c1, weights: weights.kind() }
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightsConfig {
    Dirac,
    Lebesgue,
    Matrix { rows: Vec<Vec<f64>> },
}

impl WeightsConfig {
    pub fn kind(&self) -> WeightsKind {
        match self {
            WeightsConfig::Dirac => WeightsKind::Dirac,
            WeightsConfig::Lebesgue => WeightsKind::Lebesgue,
            WeightsConfig::Matrix { rows } => WeightsKind::Matrix(rows.clone()),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub safety: f64,
    pub override_horizon: bool,
    pub seed: SeedConfig,
    pub mode: ModeConfig,
    /// Compare against the closed-form linear recursion and report the max
    /// deviation (zero / linear-in-y drivers with zero diffusion only).
    pub oracle_check: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolveOptions::default();
        Self {
            tol: d.tol,
            max_iter: d.max_iter,
            safety: d.safety,
            override_horizon: false,
            seed: SeedConfig::Zero,
            mode: ModeConfig::Auto,
            oracle_check: false,
        }
    }
}

impl SolverConfig {
    pub fn options(&self, override_flag: bool) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            safety: self.safety,
            override_horizon: self.override_horizon || override_flag,
            seed: match self.seed {
                SeedConfig::Zero => PicardSeed::Zero,
                SeedConfig::Constant { value } => PicardSeed::Constant(value),
                SeedConfig::Hash { key } => PicardSeed::Hash(key),
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedConfig {
    Zero,
    Constant { value: f64 },
    Hash { key: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    /// Global splice when the functional supports it, local otherwise.
    Auto,
    Local,
    Global,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: Option<PathBuf>,
    pub solution: bool,
    pub convergence: bool,
    pub lattice: bool,
    pub report: bool,
    /// Per-level aggregates instead of one row per node (large trees).
    pub aggregates_only: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            solution: true,
            convergence: true,
            lattice: false,
            report: true,
            aggregates_only: false,
        }
    }
}

fn default_anchors() -> Vec<f64> {
    vec![0.0]
}

fn default_threshold() -> f64 {
    0.05
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    /// Spatial anchors: the lattice leg solves ξ = φ(x0 + B_T) per anchor.
    #[serde(default = "default_anchors")]
    pub x0: Vec<f64>,
    /// Half-width of the PDE domain [-x_half, x_half].
    pub x_half: f64,
    pub dx: f64,
    /// Time steps; default: the smallest even count with dt ≤ 0.8·dx².
    pub steps: Option<usize>,
    /// Lattice levels to probe; empty means the root level only.
    #[serde(default)]
    pub levels: Vec<usize>,
    /// How many central position bins per level (0 = all).
    #[serde(default)]
    pub central_bins: usize,
    /// Mean relative discrepancy above this fails the check (exit 1).
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// No error column: report Y_0 alone.
    #[default]
    None,
    /// e^{a(T−τ)}·E(ξ): exact limit for zero / linear-in-y drivers.
    Exponential,
    /// u(τ, x0) from the deterministic PDE march.
    Pde { x0: f64, x_half: f64, dx: f64, steps: Option<usize> },
}
