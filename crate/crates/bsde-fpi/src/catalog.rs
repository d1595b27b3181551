//! Named parametric families of drivers, terminal conditions, and martingale
//! functionals. Every family carries an honest declared Lipschitz constant,
//! so configuration stays within the regime the step bound certifies.
//! z-consuming drivers read z blockwise: component j of the output uses the
//! mean of z's j-th block (block size = z-dimension / d′), which keeps the
//! declared constant valid for every functional output layout.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::functionals::{
    Density, DriverSpec, Kernel, KernelWeights, MartingaleFunctional, Quadratic,
};
use crate::grid::TimeGrid;
use crate::lattice::{LatticeSpace, TerminalCondition};

/// Drift coefficient f₀(t, y, z) families.
#[derive(Debug, Clone, PartialEq)]
pub enum F0Kind {
    Zero,
    /// f₀ ≡ c (Lipschitz constant 0; growth is inhomogeneous).
    Constant { c: f64 },
    /// f₀[j] = a·y[j].
    LinearY { a: f64 },
    /// f₀[j] = a·y[j] + b·mean(z block j).
    LinearYZ { a: f64, b: f64 },
    /// f₀[j] = b·mean(z block j).
    LinearZ { b: f64 },
    /// f₀[j] = amp·sin(y[j] + mean(z block j)); vanishes at the origin.
    SaturatedSin { amp: f64 },
    /// f₀[j] = amp·clamp(y[j], −cap, cap).
    ClipY { amp: f64, cap: f64 },
}

impl F0Kind {
    pub fn lipschitz(&self) -> f64 {
        match *self {
            F0Kind::Zero | F0Kind::Constant { .. } => 0.0,
            F0Kind::LinearY { a } => a.abs(),
            F0Kind::LinearYZ { a, b } => a.abs().max(b.abs()),
            F0Kind::LinearZ { b } => b.abs(),
            F0Kind::SaturatedSin { amp } => amp.abs(),
            F0Kind::ClipY { amp, .. } => amp.abs(),
        }
    }

    /// Whether |f₀(t, y, z)| ≤ C₂·(|y| + |z|) holds (the growth regime of the
    /// a-priori norm estimate); constants break it at the origin.
    pub fn homogeneous_growth(&self) -> bool {
        !matches!(self, F0Kind::Constant { c } if *c != 0.0)
    }
}

/// Diffusion coefficient f_i(t, y) families.
#[derive(Debug, Clone, PartialEq)]
pub enum FiKind {
    Zero,
    Constant { c: f64 },
    /// f_i[j] = a·y[j].
    LinearY { a: f64 },
    /// f_i[j] = amp·clamp(y[j], −cap, cap).
    ClipY { amp: f64, cap: f64 },
}

impl FiKind {
    pub fn lipschitz(&self) -> f64 {
        match *self {
            FiKind::Zero | FiKind::Constant { .. } => 0.0,
            FiKind::LinearY { a } => a.abs(),
            FiKind::ClipY { amp, .. } => amp.abs(),
        }
    }

    pub fn homogeneous_growth(&self) -> bool {
        !matches!(self, FiKind::Constant { c } if *c != 0.0)
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Argument(format!("{name} must be finite, got {v}")));
    }
    Ok(())
}

/// Assemble a `DriverSpec` with C₂ = max of the component constants.
/// `m` is the z-dimension f₀ consumes (the functional's output dimension)
/// and must be a multiple of `dprime` for z-consuming kinds.
pub fn build_driver(
    f0: &F0Kind,
    fi: &[FiKind],
    dprime: usize,
    m: usize,
    d: usize,
) -> Result<DriverSpec> {
    if fi.len() != d {
        return Err(Error::Dimension(format!(
            "{} diffusion coefficients configured for {d} drivers",
            fi.len()
        )));
    }
    let consumes_z = matches!(
        f0,
        F0Kind::LinearYZ { .. } | F0Kind::LinearZ { .. } | F0Kind::SaturatedSin { .. }
    );
    if consumes_z && m % dprime != 0 {
        return Err(Error::Dimension(format!(
            "z dimension {m} is not a multiple of the output dimension {dprime}"
        )));
    }
    match *f0 {
        F0Kind::Zero => {}
        F0Kind::Constant { c } => check_finite("constant drift", c)?,
        F0Kind::LinearY { a } => check_finite("drift slope", a)?,
        F0Kind::LinearYZ { a, b } => {
            check_finite("drift y-slope", a)?;
            check_finite("drift z-slope", b)?;
        }
        F0Kind::LinearZ { b } => check_finite("drift z-slope", b)?,
        F0Kind::SaturatedSin { amp } => check_finite("drift amplitude", amp)?,
        F0Kind::ClipY { amp, cap } => {
            check_finite("drift amplitude", amp)?;
            if !(cap > 0.0) || !cap.is_finite() {
                return Err(Error::Argument(format!("clip cap must be positive, got {cap}")));
            }
        }
    }
    let bs = if consumes_z { m / dprime } else { 0 };
    let f0_fn: Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync> = match f0.clone() {
        F0Kind::Zero => Arc::new(|_t, _y, _z, out: &mut [f64]| out.fill(0.0)),
        F0Kind::Constant { c } => Arc::new(move |_t, _y, _z, out: &mut [f64]| out.fill(c)),
        F0Kind::LinearY { a } => Arc::new(move |_t, y: &[f64], _z, out: &mut [f64]| {
            for (o, yj) in out.iter_mut().zip(y) {
                *o = a * yj;
            }
        }),
        F0Kind::LinearYZ { a, b } => Arc::new(move |_t, y: &[f64], z: &[f64], out: &mut [f64]| {
            for (j, o) in out.iter_mut().enumerate() {
                *o = a * y[j] + b * block_mean(z, j, bs);
            }
        }),
        F0Kind::LinearZ { b } => Arc::new(move |_t, _y, z: &[f64], out: &mut [f64]| {
            for (j, o) in out.iter_mut().enumerate() {
                *o = b * block_mean(z, j, bs);
            }
        }),
        F0Kind::SaturatedSin { amp } => {
            Arc::new(move |_t, y: &[f64], z: &[f64], out: &mut [f64]| {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = amp * (y[j] + block_mean(z, j, bs)).sin();
                }
            })
        }
        F0Kind::ClipY { amp, cap } => Arc::new(move |_t, y: &[f64], _z, out: &mut [f64]| {
            for (o, yj) in out.iter_mut().zip(y) {
                *o = amp * yj.clamp(-cap, cap);
            }
        }),
    };
    let mut c2 = f0.lipschitz();
    let mut fi_fns: Vec<Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>> =
        Vec::with_capacity(d);
    for kind in fi {
        c2 = c2.max(kind.lipschitz());
        let f: Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync> = match *kind {
            FiKind::Zero => Arc::new(|_t, _y, out: &mut [f64]| out.fill(0.0)),
            FiKind::Constant { c } => {
                check_finite("constant diffusion", c)?;
                Arc::new(move |_t, _y, out: &mut [f64]| out.fill(c))
            }
            FiKind::LinearY { a } => {
                check_finite("diffusion slope", a)?;
                Arc::new(move |_t, y: &[f64], out: &mut [f64]| {
                    for (o, yj) in out.iter_mut().zip(y) {
                        *o = a * yj;
                    }
                })
            }
            FiKind::ClipY { amp, cap } => {
                check_finite("diffusion amplitude", amp)?;
                if !(cap > 0.0) || !cap.is_finite() {
                    return Err(Error::Argument(format!(
                        "clip cap must be positive, got {cap}"
                    )));
                }
                Arc::new(move |_t, y: &[f64], out: &mut [f64]| {
                    for (o, yj) in out.iter_mut().zip(y) {
                        *o = amp * yj.clamp(-cap, cap);
                    }
                })
            }
        };
        fi_fns.push(f);
    }
    DriverSpec::new(dprime, m, c2, f0_fn, fi_fns)
}

fn block_mean(z: &[f64], j: usize, bs: usize) -> f64 {
    if bs == 0 {
        return 0.0;
    }
    let block = &z[j * bs..(j + 1) * bs];
    block.iter().sum::<f64>() / bs as f64
}

/// Terminal-value families, one per output component, evaluated on the
/// driver values at the terminal level.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalKind {
    Constant { c: f64 },
    /// B^i at the terminal level.
    Coordinate { i: usize },
    /// (B^i + shift)².
    Square { i: usize, shift: f64 },
    /// min((B^i + shift)², cap).
    ClippedSquare { i: usize, shift: f64, cap: f64 },
    /// min(max(B^i − strike, 0), cap).
    ClippedCall { i: usize, strike: f64, cap: f64 },
}

pub fn build_terminal(
    space: &Arc<LatticeSpace>,
    kinds: &[TerminalKind],
    level: usize,
) -> Result<TerminalCondition> {
    if kinds.is_empty() {
        return Err(Error::Argument("terminal condition needs at least one component".into()));
    }
    let d = space.d();
    for kind in kinds {
        let idx = match *kind {
            TerminalKind::Constant { c } => {
                check_finite("terminal constant", c)?;
                0
            }
            TerminalKind::Coordinate { i } => i,
            TerminalKind::Square { i, shift } => {
                check_finite("terminal shift", shift)?;
                i
            }
            TerminalKind::ClippedSquare { i, shift, cap } => {
                check_finite("terminal shift", shift)?;
                check_finite("terminal cap", cap)?;
                i
            }
            TerminalKind::ClippedCall { i, strike, cap } => {
                check_finite("terminal strike", strike)?;
                check_finite("terminal cap", cap)?;
                i
            }
        };
        if idx >= d {
            return Err(Error::Dimension(format!(
                "terminal condition references driver {idx} but the lattice has {d}"
            )));
        }
    }
    let kinds = kinds.to_vec();
    TerminalCondition::from_driver_fn(space, kinds.len(), level, move |b, out| {
        for (kind, o) in kinds.iter().zip(out.iter_mut()) {
            *o = match *kind {
                TerminalKind::Constant { c } => c,
                TerminalKind::Coordinate { i } => b[i],
                TerminalKind::Square { i, shift } => {
                    let v = b[i] + shift;
                    v * v
                }
                TerminalKind::ClippedSquare { i, shift, cap } => {
                    let v = b[i] + shift;
                    (v * v).min(cap)
                }
                TerminalKind::ClippedCall { i, strike, cap } => {
                    (b[i] - strike).max(0.0).min(cap)
                }
            };
        }
    })
}

/// Kernel weight families for the kernel functional.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsKind {
    /// w(k, l) = δ_{kl}: recovers the increment density.
    Dirac,
    /// w(k, l) = dt for l ≥ k: the running tail integral of Z.
    Lebesgue,
    /// Explicit K×K matrix.
    Matrix(Vec<Vec<f64>>),
}

/// Martingale-functional families; `c1` is the user-confirmed Lipschitz
/// constant for the families whose constant is not derived in closed form.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalKind {
    Density,
    Quadratic { c1: f64 },
    Kernel { c1: f64, weights: WeightsKind },
}

pub fn build_functional(
    kind: &FunctionalKind,
    grid: &TimeGrid,
) -> Result<Box<dyn MartingaleFunctional>> {
    match kind {
        FunctionalKind::Density => Ok(Box::new(Density)),
        FunctionalKind::Quadratic { c1 } => Ok(Box::new(Quadratic::new(*c1)?)),
        FunctionalKind::Kernel { c1, weights } => {
            let w = match weights {
                WeightsKind::Dirac => KernelWeights::dirac(grid.steps()),
                WeightsKind::Lebesgue => KernelWeights::uniform(grid.steps(), grid.dt()),
                WeightsKind::Matrix(rows) => {
                    let w = KernelWeights::from_matrix(rows.clone())?;
                    if w.steps() != grid.steps() {
                        return Err(Error::Dimension(format!(
                            "kernel weight matrix is {}x{} but the grid has {} steps",
                            w.steps(),
                            w.steps(),
                            grid.steps()
                        )));
                    }
                    w
                }
            };
            Ok(Box::new(Kernel::new(w, *c1)?))
        }
    }
}
