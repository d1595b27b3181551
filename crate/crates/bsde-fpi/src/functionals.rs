//! Path-space functionals: the pair Y(V), M(V) induced by a terminal datum,
//! the pluggable martingale functional trait, and its three built-in
//! instances (increment density, quadratic-variation tail, kernel-weighted
//! density). Every operation is exact lattice arithmetic; the only tolerances
//! in this module are floating-point rounding.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{backward_average, AdaptedProcess, MartingaleProcess, TerminalCondition};
use crate::par;

const NODES_PER_CHUNK: usize = 1 << 10;

/// Which norm the functional's output lives in: `H2` for predictable
/// integrands (left-endpoint square sum), `C` for pathwise-sup processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codomain {
    H2,
    C,
}

/// A mapping from martingales on a window to adapted processes on the same
/// window, with declared Lipschitz constant and structural properties.
///
/// `local_in_time`: the output on a sub-window depends only on the input
/// restricted to that sub-window. `differential`: the output is unchanged by
/// subtracting the window-start value, evaluate(M − M_start) = evaluate(M).
pub trait MartingaleFunctional: Send + Sync {
    fn name(&self) -> &'static str;
    fn codomain(&self) -> Codomain;
    fn local_in_time(&self) -> bool;
    fn differential(&self) -> bool;
    /// Declared Lipschitz constant C1 (may depend on the driver count d).
    fn lipschitz(&self, d: usize) -> f64;
    /// Output dimension m for a d′-dimensional martingale on a d-driver lattice.
    fn output_dim(&self, dprime: usize, d: usize) -> usize;
    fn evaluate(&self, m: &MartingaleProcess) -> AdaptedProcess;
}

/// Y(V) and M(V) from the terminal datum: M = E(ξ + V_end | F_·) backward over
/// V's window, Y = M − V with the terminal level pinned to ξ exactly.
pub fn ym_of_v(
    xi: &TerminalCondition,
    v: &AdaptedProcess,
) -> Result<(AdaptedProcess, MartingaleProcess)> {
    if !Arc::ptr_eq(xi.space(), v.space()) {
        return Err(Error::Dimension("terminal condition and V live on different lattices".into()));
    }
    if xi.dim() != v.dim() {
        return Err(Error::Dimension(format!(
            "terminal dimension {} != process dimension {}",
            xi.dim(),
            v.dim()
        )));
    }
    if xi.level() != v.end_level() {
        return Err(Error::LevelRange(format!(
            "terminal condition at level {} but V ends at level {}",
            xi.level(),
            v.end_level()
        )));
    }
    let end = v.end_level();
    let mut top: Vec<f64> = xi.values().to_vec();
    for (t, w) in top.iter_mut().zip(v.level(end)) {
        *t += w;
    }
    let m = backward_average(v.space(), v.dim(), end, top, v.start_level())?;
    let mut y = m.clone();
    y.axpy(-1.0, v);
    y.level_mut(end).copy_from_slice(xi.values());
    Ok((y, MartingaleProcess::from_process_unchecked(m)))
}

pub fn y_of_v(xi: &TerminalCondition, v: &AdaptedProcess) -> Result<AdaptedProcess> {
    Ok(ym_of_v(xi, v)?.0)
}

pub fn m_of_v(xi: &TerminalCondition, v: &AdaptedProcess) -> Result<MartingaleProcess> {
    Ok(ym_of_v(xi, v)?.1)
}

/// Increment density: the orthogonal projection of martingale increments onto
/// the driver increments, Z^{j,i}(n) = E[ΔM^j·ΔB^i | n]/dt. Output dimension
/// d′·d, flattened row-major (component j, then driver i); terminal level 0.
/// For d = 1 the representation is complete: ΔM = Z·ΔB exactly at every node.
#[derive(Debug, Clone, Copy, Default)]
pub struct Density;

impl Density {
    /// Per-branch projection remainder ΔM^j − Σ_i Z^{j,i}·ΔB^i as an adapted
    /// process of dimension d′·2^d (component j, then branch b); identically 0
    /// for d = 1, orthogonal to every driver increment in general.
    pub fn orthogonal_residual(&self, m: &MartingaleProcess) -> AdaptedProcess {
        let z = self.evaluate(m);
        let p = m.process();
        let space = p.space();
        let (d, dim, branches) = (space.d(), p.dim(), space.branches());
        let mut out =
            AdaptedProcess::zeros(space, dim * branches, p.start_level(), p.end_level());
        for lev in p.start_level()..p.end_level() {
            let here = p.level(lev);
            let kids = p.level(lev + 1);
            let zs = z.level(lev);
            let slot = out.level_mut(lev);
            for node in 0..space.nodes_at(lev) {
                for j in 0..dim {
                    for b in 0..branches {
                        let child = (node << d) | b;
                        let dm = kids[child * dim + j] - here[node * dim + j];
                        let mut proj = 0.0;
                        for i in 0..d {
                            proj += zs[node * dim * d + j * d + i] * space.increment(b, i);
                        }
                        slot[node * dim * branches + j * branches + b] = dm - proj;
                    }
                }
            }
        }
        out
    }
}

impl MartingaleFunctional for Density {
    fn name(&self) -> &'static str {
        "density"
    }

    fn codomain(&self) -> Codomain {
        Codomain::H2
    }

    fn local_in_time(&self) -> bool {
        true
    }

    fn differential(&self) -> bool {
        true
    }

    /// √d from the nodewise projection bound (the true constant is ≤ 1 by
    /// orthogonality of increments; √d is the declared conservative value).
    fn lipschitz(&self, d: usize) -> f64 {
        (d as f64).sqrt()
    }

    fn output_dim(&self, dprime: usize, d: usize) -> usize {
        dprime * d
    }

    fn evaluate(&self, m: &MartingaleProcess) -> AdaptedProcess {
        let p = m.process();
        let space = p.space();
        let d = space.d();
        let dim = p.dim();
        let branches = space.branches();
        let prob = space.branch_prob();
        let dt = space.grid().dt();
        let mut out = AdaptedProcess::zeros(space, dim * d, p.start_level(), p.end_level());
        for lev in p.start_level()..p.end_level() {
            let here = p.level(lev);
            let kids = p.level(lev + 1);
            let slot = out.level_mut(lev);
            let chunk = NODES_PER_CHUNK * dim * d;
            par::for_each_chunk_mut(slot, chunk, |ci, vals| {
                let first = ci * NODES_PER_CHUNK;
                for (local, zv) in vals.chunks_mut(dim * d).enumerate() {
                    let node = first + local;
                    for j in 0..dim {
                        let mj = here[node * dim + j];
                        for i in 0..d {
                            let mut sum = 0.0;
                            for b in 0..branches {
                                let child = (node << d) | b;
                                sum += (kids[child * dim + j] - mj) * space.increment(b, i);
                            }
                            zv[j * d + i] = prob * sum / dt;
                        }
                    }
                }
            });
        }
        out
    }
}

/// Quadratic-variation tail: per component, L(M)_k = sqrt(E[Σ_{l≥k} q_l | F_k])
/// with q_l(n) = E[(ΔM)²|n] the predictable bracket increment; 0 at the
/// terminal level. Differential but not local in time (it reads the whole
/// future bracket), codomain C; usable with local solves only.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic {
    c1: f64,
}

impl Quadratic {
    /// Declared default constant: the true one is ≤ 2√2 ≈ 2.83 (quotient rule
    /// for √, telescoping bracket sums, and the L² maximal inequality), and
    /// randomized probing stays under it; 3.2 keeps a margin.
    pub const DEFAULT_C1: f64 = 3.2;

    pub fn new(c1: f64) -> Result<Self> {
        if !(c1 > 0.0) || !c1.is_finite() {
            return Err(Error::Argument(format!("quadratic functional needs C1 > 0, got {c1}")));
        }
        Ok(Self { c1 })
    }
}

impl Default for Quadratic {
    fn default() -> Self {
        Self { c1: Self::DEFAULT_C1 }
    }
}

impl MartingaleFunctional for Quadratic {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn codomain(&self) -> Codomain {
        Codomain::C
    }

    fn local_in_time(&self) -> bool {
        false
    }

    fn differential(&self) -> bool {
        true
    }

    fn lipschitz(&self, _d: usize) -> f64 {
        self.c1
    }

    fn output_dim(&self, dprime: usize, _d: usize) -> usize {
        dprime
    }

    fn evaluate(&self, m: &MartingaleProcess) -> AdaptedProcess {
        let p = m.process();
        let space = p.space();
        let d = space.d();
        let dim = p.dim();
        let branches = space.branches();
        let prob = space.branch_prob();
        let mut out = AdaptedProcess::zeros(space, dim, p.start_level(), p.end_level());
        // Backward accumulation of A_k = q_k + E[A_{k+1} | F_k]; L = sqrt(A).
        let mut a_next = vec![0.0f64; space.nodes_at(p.end_level()) * dim];
        for lev in (p.start_level()..p.end_level()).rev() {
            let here = p.level(lev);
            let kids = p.level(lev + 1);
            let mut a_here = vec![0.0f64; space.nodes_at(lev) * dim];
            {
                let a_next_ref = &a_next;
                let chunk = NODES_PER_CHUNK * dim;
                par::for_each_chunk_mut(&mut a_here, chunk, |ci, vals| {
                    let first = ci * NODES_PER_CHUNK;
                    for (local, av) in vals.chunks_mut(dim).enumerate() {
                        let node = first + local;
                        for j in 0..dim {
                            let mj = here[node * dim + j];
                            let mut sum = 0.0;
                            for b in 0..branches {
                                let child = (node << d) | b;
                                let dm = kids[child * dim + j] - mj;
                                sum += dm * dm + a_next_ref[child * dim + j];
                            }
                            av[j] = prob * sum;
                        }
                    }
                });
            }
            let slot = out.level_mut(lev);
            for (s, a) in slot.iter_mut().zip(&a_here) {
                *s = a.max(0.0).sqrt();
            }
            a_next = a_here;
        }
        out
    }
}

/// Dense kernel weights w(k, l), k ≤ l ≤ K−1, over a grid with K steps.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    steps: usize,
    w: Vec<f64>,
}

impl KernelWeights {
    pub fn from_matrix(rows: Vec<Vec<f64>>) -> Result<Self> {
        let steps = rows.len();
        if steps == 0 {
            return Err(Error::Malformed("kernel weight matrix is empty".into()));
        }
        let mut w = Vec::with_capacity(steps * steps);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != steps {
                return Err(Error::Malformed(format!(
                    "kernel weight row {k} has {} entries, expected {steps}",
                    row.len()
                )));
            }
            for (l, &x) in row.iter().enumerate() {
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::Malformed(format!(
                        "kernel weight w({k},{l}) = {x} must be finite and >= 0"
                    )));
                }
            }
            w.extend_from_slice(row);
        }
        Ok(Self { steps, w })
    }

    /// w(k, l) = δ_{kl}: recovers the increment density.
    pub fn dirac(steps: usize) -> Self {
        let mut w = vec![0.0; steps * steps];
        for k in 0..steps {
            w[k * steps + k] = 1.0;
        }
        Self { steps, w }
    }

    /// w(k, l) = value for all l ≥ k (value = dt gives the running-tail sum).
    pub fn uniform(steps: usize, value: f64) -> Self {
        let mut w = vec![0.0; steps * steps];
        for k in 0..steps {
            for l in k..steps {
                w[k * steps + l] = value;
            }
        }
        Self { steps, w }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn get(&self, k: usize, l: usize) -> f64 {
        self.w[k * self.steps + l]
    }
}

/// Kernel-weighted density: L(M)_k = E[Σ_{l≥k} w(k,l)·Z_l | F_k] with Z the
/// increment density. Differential but not local in time in general (weights
/// may reach arbitrarily far forward), codomain H².
#[derive(Debug, Clone)]
pub struct Kernel {
    weights: KernelWeights,
    c1: f64,
}

impl Kernel {
    pub fn new(weights: KernelWeights, c1: f64) -> Result<Self> {
        if !(c1 > 0.0) || !c1.is_finite() {
            return Err(Error::Argument(format!("kernel functional needs C1 > 0, got {c1}")));
        }
        Ok(Self { weights, c1 })
    }

    pub fn weights(&self) -> &KernelWeights {
        &self.weights
    }
}

impl MartingaleFunctional for Kernel {
    fn name(&self) -> &'static str {
        "kernel"
    }

    fn codomain(&self) -> Codomain {
        Codomain::H2
    }

    fn local_in_time(&self) -> bool {
        false
    }

    fn differential(&self) -> bool {
        true
    }

    fn lipschitz(&self, _d: usize) -> f64 {
        self.c1
    }

    fn output_dim(&self, dprime: usize, d: usize) -> usize {
        dprime * d
    }

    fn evaluate(&self, m: &MartingaleProcess) -> AdaptedProcess {
        let p = m.process();
        let space = p.space();
        let dim_z = p.dim() * space.d();
        let s = p.start_level();
        let e = p.end_level();
        assert!(
            e <= self.weights.steps(),
            "kernel weight matrix covers {} steps but the window ends at level {e}",
            self.weights.steps()
        );
        let z = Density.evaluate(m);
        let mut out = AdaptedProcess::zeros(space, dim_z, s, e);
        if e == s {
            return out;
        }
        // acc[l−s] carries E[Z_l | F_j] during the backward sweep over j.
        let mut acc: Vec<Vec<f64>> = vec![Vec::new(); e - s];
        for j in (s..e).rev() {
            for l in j + 1..e {
                let child = std::mem::take(&mut acc[l - s]);
                let mut here = vec![0.0f64; space.nodes_at(j) * dim_z];
                crate::lattice::average_children(space, dim_z, &child, &mut here);
                acc[l - s] = here;
            }
            acc[j - s] = z.level(j).to_vec();
            let slot = out.level_mut(j);
            for l in j..e {
                let w = self.weights.get(j, l);
                if w != 0.0 {
                    for (g, zl) in slot.iter_mut().zip(&acc[l - s]) {
                        *g += w * zl;
                    }
                }
            }
        }
        out
    }
}

/// The BSDE coefficients: f₀(t, y, z) and the d diffusion coefficients
/// f_i(t, y), with declared Lipschitz constant C2 and the z-dimension `m`
/// that f₀ consumes (must match the functional's output dimension).
#[derive(Clone)]
pub struct DriverSpec {
    dprime: usize,
    m: usize,
    c2: f64,
    f0: Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>,
    fi: Vec<Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>>,
}

impl std::fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriverSpec")
            .field("dprime", &self.dprime)
            .field("m", &self.m)
            .field("d", &self.fi.len())
            .field("c2", &self.c2)
            .finish()
    }
}

impl DriverSpec {
    pub fn new(
        dprime: usize,
        m: usize,
        c2: f64,
        f0: Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>,
        fi: Vec<Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>>,
    ) -> Result<Self> {
        if dprime == 0 || m == 0 {
            return Err(Error::Argument("driver dimensions must be positive".into()));
        }
        if !(c2 >= 0.0) || !c2.is_finite() {
            return Err(Error::Argument(format!("driver needs C2 >= 0, got {c2}")));
        }
        Ok(Self { dprime, m, c2, f0, fi })
    }

    pub fn dprime(&self) -> usize {
        self.dprime
    }

    /// z-dimension f₀ consumes.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of diffusion coefficients (must equal the lattice driver count).
    pub fn d(&self) -> usize {
        self.fi.len()
    }

    pub fn c2(&self) -> f64 {
        self.c2
    }

    pub fn eval_f0(&self, t: f64, y: &[f64], z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.dprime);
        debug_assert_eq!(z.len(), self.m);
        debug_assert_eq!(out.len(), self.dprime);
        (self.f0)(t, y, z, out);
    }

    pub fn eval_fi(&self, i: usize, t: f64, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dprime);
        (self.fi[i])(t, y, out);
    }
}

/// Audit of the differential property: sup |evaluate(M − M_start) − evaluate(M)|.
/// Zero up to floating cancellation for a differential functional.
pub fn differential_audit(l: &dyn MartingaleFunctional, m: &MartingaleProcess) -> f64 {
    let p = m.process();
    let space = Arc::clone(p.space());
    let dim = p.dim();
    let s = p.start_level();
    let d = space.d();
    let base = p.level(s).to_vec();
    let shifted = AdaptedProcess::from_fn(&space, dim, s, p.end_level(), |k, node, out| {
        let anc = node >> (d * (k - s));
        for (j, o) in out.iter_mut().enumerate() {
            *o = p.value(k, node, j) - base[anc * dim + j];
        }
    });
    let m2 = MartingaleProcess::from_process_unchecked(shifted);
    l.evaluate(&m2).max_abs_diff(&l.evaluate(m))
}

/// Audit of the local-in-time property by restriction: compare the full-window
/// output on [a, b] against the output computed from M restricted to [a, b].
/// H²-codomain outputs are predictable integrands, so their sub-window
/// terminal level is a padding convention and excluded from the comparison.
pub fn restriction_audit(l: &dyn MartingaleFunctional, m: &MartingaleProcess, a: usize, b: usize) -> f64 {
    let p = m.process();
    assert!(a >= p.start_level() && b <= p.end_level() && a < b);
    let cmp_end = match l.codomain() {
        Codomain::H2 => b - 1,
        Codomain::C => b,
    };
    let full = l.evaluate(m).restrict(a, cmp_end);
    let sub = l.evaluate(&m.restrict(a, b)).restrict(a, cmp_end);
    full.max_abs_diff(&sub)
}

/// M + N where N is a pure future martingale: N ≡ 0 through level `cut`, and
/// N_t = lambda·ΔB^driver (the increment over step cut→cut+1, added to every
/// component) for t > cut. E[N_{cut+1} | F_cut] = 0, so the sum is again a
/// martingale, and it agrees with M on [start, cut] bitwise.
pub fn future_perturbation(
    m: &MartingaleProcess,
    cut: usize,
    lambda: f64,
    driver: usize,
) -> MartingaleProcess {
    let p = m.process();
    let space = Arc::clone(p.space());
    let d = space.d();
    assert!(cut < p.end_level() && cut >= p.start_level());
    assert!(driver < d);
    let perturbed = AdaptedProcess::from_fn(&space, p.dim(), p.start_level(), p.end_level(), |k, node, out| {
        let n = if k <= cut {
            0.0
        } else {
            let branch = (node >> (d * (k - cut - 1))) & (space.branches() - 1);
            lambda * space.increment(branch, driver)
        };
        for (j, o) in out.iter_mut().enumerate() {
            *o = p.value(k, node, j) + n;
        }
    });
    MartingaleProcess::from_process_unchecked(perturbed)
}

/// Audit of the local-in-time property by future perturbation: how much the
/// output on [start, cmp_end] moves when M is perturbed strictly above `cut`.
/// Zero (bitwise) for a local-in-time functional; the constructed witness for
/// a non-local functional drives this to order one.
pub fn future_perturbation_audit(
    l: &dyn MartingaleFunctional,
    m: &MartingaleProcess,
    cut: usize,
    lambda: f64,
    driver: usize,
) -> f64 {
    let p = m.process();
    let s = p.start_level();
    let cmp_end = match l.codomain() {
        Codomain::H2 => cut.saturating_sub(1).max(s),
        Codomain::C => cut,
    };
    let m2 = future_perturbation(m, cut, lambda, driver);
    let full = l.evaluate(m).restrict(s, cmp_end);
    let pert = l.evaluate(&m2).restrict(s, cmp_end);
    full.max_abs_diff(&pert)
}

/// Empirical Lipschitz ratio ||L(M) − L(M̃)|| / ||M − M̃||_C with the codomain
/// norm on top; `None` when the inputs coincide.
pub fn lipschitz_ratio(
    l: &dyn MartingaleFunctional,
    m1: &MartingaleProcess,
    m2: &MartingaleProcess,
) -> Option<f64> {
    let denom = crate::lattice::norm_c(&m1.process().sub(m2.process()));
    if denom == 0.0 {
        return None;
    }
    let diff = l.evaluate(m1).sub(&l.evaluate(m2));
    let num = match l.codomain() {
        Codomain::H2 => crate::lattice::norm_h2(&diff),
        Codomain::C => crate::lattice::norm_c(&diff),
    };
    Some(num / denom)
}
