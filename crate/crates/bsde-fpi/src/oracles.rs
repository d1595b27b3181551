//! Independent ground truth: the closed-form discrete solution for the
//! linear drift, Gaussian-quadrature heat-semigroup expectations, an explicit
//! finite-difference march for the nonlocal backward PDE whose source term is
//! the square root of a forward-smoothed gradient tail, and the binning
//! comparison between a lattice solution and a PDE slice.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::lattice::{cond_expect_terminal, AdaptedProcess, TerminalCondition};
use crate::solver::Solution;

const QUAD_TOL: f64 = 1e-10;
/// Integration window in standard deviations; the omitted Gaussian mass is
/// ~1.2e−15, below the quadrature tolerance.
const QUAD_RANGE: f64 = 8.0;

/// Y_k = (1 − a·dt)^{−(K−k)}·E(ξ | F_k): the exact solution of the one-step
/// backward recursion for f₀ = a·y, f_i ≡ 0, scalar ξ.
pub fn discrete_linear_oracle(xi: &TerminalCondition, a: f64) -> Result<AdaptedProcess> {
    if xi.dim() != 1 {
        return Err(Error::Dimension("the linear oracle is scalar".into()));
    }
    let dt = xi.space().grid().dt();
    if !a.is_finite() || (a * dt).abs() >= 1.0 {
        return Err(Error::Argument(format!(
            "the linear oracle needs |a·dt| < 1, got a = {a}, dt = {dt}"
        )));
    }
    let mut e = cond_expect_terminal(xi, 0)?;
    let k1 = xi.level();
    for k in 0..=k1 {
        let factor = (1.0 - a * dt).powi(-((k1 - k) as i32));
        for v in e.level_mut(k) {
            *v *= factor;
        }
    }
    Ok(e)
}

fn gauss_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let left = simpson(f, a, m);
    let right = simpson(f, m, b);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol {
        return Ok(left + right + err / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature { tol, estimate: err.abs() });
    }
    Ok(adaptive_simpson(f, a, m, left, 0.5 * tol, depth - 1)?
        + adaptive_simpson(f, m, b, right, 0.5 * tol, depth - 1)?)
}

/// P_{T−t}φ(x) = ∫ φ(x + z·√(T−t))·(2π)^{−1/2}e^{−z²/2} dz by adaptive
/// Simpson quadrature to absolute tolerance 1e−10.
pub fn heat_kernel_expectation<F: Fn(f64) -> f64>(
    phi: F,
    t: f64,
    x: f64,
    big_t: f64,
) -> Result<f64> {
    if !t.is_finite() || !x.is_finite() || !big_t.is_finite() {
        return Err(Error::Argument("heat kernel arguments must be finite".into()));
    }
    if big_t < t {
        return Err(Error::Argument(format!(
            "heat kernel needs T >= t, got t = {t}, T = {big_t}"
        )));
    }
    if big_t == t {
        return Ok(phi(x));
    }
    let s = (big_t - t).sqrt();
    let g = |z: f64| phi(x + z * s) * gauss_pdf(z);
    let panels = 16usize;
    let width = 2.0 * QUAD_RANGE / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = -QUAD_RANGE + p as f64 * width;
        let b = a + width;
        let whole = simpson(&g, a, b);
        total += adaptive_simpson(&g, a, b, whole, QUAD_TOL / panels as f64, 48)?;
    }
    Ok(total)
}

/// Sampled, renormalized Gaussian kernel of standard deviation `sigma` on a
/// grid of spacing `dx`, truncated at `QUAD_RANGE` standard deviations.
fn gaussian_weights(dx: f64, sigma: f64) -> Vec<f64> {
    let r = (QUAD_RANGE * sigma / dx).ceil() as i64;
    let mut w: Vec<f64> = (-r..=r)
        .map(|off| {
            let z = off as f64 * dx / sigma;
            (-0.5 * z * z).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// out[j] = Σ_off w[off]·x[clamp(j + off)] (edge values replicated).
fn convolve_clamped(x: &[f64], weights: &[f64], out: &mut [f64]) {
    let r = (weights.len() / 2) as i64;
    let n = x.len() as i64;
    for (j, o) in out.iter_mut().enumerate() {
        let mut sum = 0.0;
        for (wi, w) in weights.iter().enumerate() {
            let idx = (j as i64 + wi as i64 - r).clamp(0, n - 1);
            sum += w * x[idx as usize];
        }
        *o = sum;
    }
}

/// Finite-difference solution of the backward nonlocal PDE
///   ∂_t u + ½·∂²_x u + f₀(t, u, K(u)) = 0, u(T, ·) = φ,
///   K(u)(t, x) = sqrt(∫_t^T P_{s−t}|∂_x u|²(s, x) ds),
/// on [−X, X] with the heat semigroup realized as a discrete Gaussian
/// convolution and the time integral as a left-endpoint sum maintained by the
/// recurrence W_k = g_k·dt + P_dt[W_{k+1}], W_K = 0, g = |∂_x u|².
#[derive(Debug, Clone)]
pub struct PdeGrid {
    grid: TimeGrid,
    x_half: f64,
    dx: f64,
    nx: usize,
    /// u[k][j], level-major.
    u: Vec<Vec<f64>>,
    /// W[k][j]; K(u) = sqrt(W).
    w: Vec<Vec<f64>>,
    /// |∂_x u|²[k][j], kept for diagnostics and tests.
    g: Vec<Vec<f64>>,
    clip_count: usize,
}

impl PdeGrid {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x_half(&self) -> f64 {
        self.x_half
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.x_half + j as f64 * self.dx
    }

    pub fn u_at(&self, k: usize, j: usize) -> f64 {
        self.u[k][j]
    }

    pub fn u_slice(&self, k: usize) -> &[f64] {
        &self.u[k]
    }

    /// K(u)(t_k, x_j), the square root of the smoothed gradient tail.
    pub fn k_at(&self, k: usize, j: usize) -> f64 {
        self.w[k][j].max(0.0).sqrt()
    }

    pub fn w_slice(&self, k: usize) -> &[f64] {
        &self.w[k]
    }

    pub fn g_slice(&self, k: usize) -> &[f64] {
        &self.g[k]
    }

    /// Times the radicand of K(u) was clipped at 0; nonzero only through
    /// rounding (the radicand is a sum of squares).
    pub fn clip_count(&self) -> usize {
        self.clip_count
    }

    /// Linear interpolation of u(t_k, ·) at x.
    pub fn interp_u(&self, k: usize, x: f64) -> Result<f64> {
        if !(x >= -self.x_half && x <= self.x_half) {
            return Err(Error::Argument(format!(
                "x = {x} outside the PDE domain [-{0}, {0}]",
                self.x_half
            )));
        }
        let pos = (x + self.x_half) / self.dx;
        let j = (pos.floor() as usize).min(self.nx - 2);
        let frac = pos - j as f64;
        Ok((1.0 - frac) * self.u[k][j] + frac * self.u[k][j + 1])
    }
}

pub fn solve_nonlocal_pde<P, F>(
    phi: P,
    f0: F,
    x_half: f64,
    dx: f64,
    grid: &TimeGrid,
) -> Result<PdeGrid>
where
    P: Fn(f64) -> f64,
    F: Fn(f64, f64, f64) -> f64,
{
    if !(dx > 0.0) || !dx.is_finite() || !(x_half > 0.0) || !x_half.is_finite() {
        return Err(Error::Argument(format!(
            "PDE grid needs positive extent and spacing, got X = {x_half}, dx = {dx}"
        )));
    }
    let half = (x_half / dx).round() as usize;
    if half < 2 {
        return Err(Error::Argument("PDE domain must span at least 2 cells per side".into()));
    }
    let x_half = half as f64 * dx;
    let nx = 2 * half + 1;
    let dt = grid.dt();
    let dx2 = dx * dx;
    if dt > dx2 {
        return Err(Error::PdeStability { dt, dx2 });
    }
    let steps = grid.steps();
    let big_t = grid.t(steps);

    let xs: Vec<f64> = (0..nx).map(|j| -x_half + j as f64 * dx).collect();
    let weights = gaussian_weights(dx, dt.sqrt());

    let mut u: Vec<Vec<f64>> = vec![Vec::new(); steps + 1];
    let mut w: Vec<Vec<f64>> = vec![Vec::new(); steps + 1];
    let mut g: Vec<Vec<f64>> = vec![Vec::new(); steps + 1];
    let mut clip_count = 0usize;

    u[steps] = xs.iter().map(|&x| phi(x)).collect();
    w[steps] = vec![0.0; nx];
    g[steps] = gradient_squared(&u[steps], dx);

    for k in (0..steps).rev() {
        let t_next = grid.t(k + 1);
        let (u_next, w_next) = (&u[k + 1], &w[k + 1]);
        let mut u_here = vec![0.0f64; nx];
        for j in 1..nx - 1 {
            let lap = (u_next[j - 1] - 2.0 * u_next[j] + u_next[j + 1]) / dx2;
            let rad = w_next[j];
            if rad < 0.0 {
                clip_count += 1;
            }
            let kval = rad.max(0.0).sqrt();
            u_here[j] = u_next[j] + dt * (0.5 * lap + f0(t_next, u_next[j], kval));
        }
        // Dirichlet boundary frozen to the pure heat evolution of φ.
        let t_here = grid.t(k);
        u_here[0] = heat_kernel_expectation(&phi, t_here, xs[0], big_t)?;
        u_here[nx - 1] = heat_kernel_expectation(&phi, t_here, xs[nx - 1], big_t)?;

        let g_here = gradient_squared(&u_here, dx);
        let mut w_here = vec![0.0f64; nx];
        convolve_clamped(w_next, &weights, &mut w_here);
        for j in 0..nx {
            w_here[j] += g_here[j] * dt;
        }
        u[k] = u_here;
        g[k] = g_here;
        w[k] = w_here;
    }

    Ok(PdeGrid { grid: *grid, x_half, dx, nx, u, w, g, clip_count })
}

/// Central-difference |∂_x u|², one-sided at the boundary.
fn gradient_squared(u: &[f64], dx: f64) -> Vec<f64> {
    let n = u.len();
    let mut g = vec![0.0f64; n];
    g[0] = ((u[1] - u[0]) / dx).powi(2);
    for j in 1..n - 1 {
        g[j] = ((u[j + 1] - u[j - 1]) / (2.0 * dx)).powi(2);
    }
    g[n - 1] = ((u[n - 1] - u[n - 2]) / dx).powi(2);
    g
}

/// One probe of the lattice-vs-PDE comparison u(t, x) ~ E[Y_t | B_t = x − x₀].
#[derive(Debug, Clone, Copy)]
pub struct CrossRow {
    pub t: f64,
    pub x: f64,
    pub u_pde: f64,
    pub y_lattice: f64,
    pub abs_err: f64,
}

#[derive(Debug, Clone)]
pub struct CrossReport {
    pub rows: Vec<CrossRow>,
    pub max_abs: f64,
    pub mean_abs: f64,
    pub max_rel: f64,
    pub mean_rel: f64,
}

/// Bin the lattice nodes at each probe level by their driver value, average
/// Y within bins (all nodes at a level are equally likely, so the plain mean
/// is the conditional expectation), and compare with the interpolated PDE
/// value at x = x₀ + B. `central_bins` limits each level to the bins nearest
/// B = 0 (0 keeps every bin inside the PDE domain).
pub fn cross_validate(
    sol: &Solution,
    pde: &PdeGrid,
    x0: f64,
    levels: &[usize],
    central_bins: usize,
) -> Result<CrossReport> {
    let space = Arc::clone(sol.y.space());
    if space.d() != 1 || sol.y.dim() != 1 {
        return Err(Error::Dimension("cross-validation needs a scalar, single-driver problem".into()));
    }
    let lgrid = space.grid();
    let sqrt_dt = space.sqrt_dt();
    let mut rows: Vec<CrossRow> = Vec::new();
    for &k in levels {
        if k < sol.y.start_level() || k > sol.y.end_level() {
            return Err(Error::LevelRange(format!("probe level {k} outside the solution window")));
        }
        let t = lgrid.t(k);
        let kp = (0..=pde.grid().steps())
            .find(|&i| (pde.grid().t(i) - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| {
                Error::Argument(format!("probe time {t} is not a PDE grid time"))
            })?;
        // key = (#up − #down) moves; B = key·√dt exactly.
        let mut bins: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
        for node in 0..space.nodes_at(k) {
            let ups = (node as u64 & ((1u64 << k) - 1)).count_ones() as i64;
            let key = 2 * ups - k as i64;
            let e = bins.entry(key).or_insert((0.0, 0));
            e.0 += sol.y.value(k, node, 0);
            e.1 += 1;
        }
        let mut keys: Vec<i64> = bins.keys().copied().collect();
        keys.sort_by_key(|&key| (key.abs(), key));
        let take = if central_bins == 0 { keys.len() } else { central_bins.min(keys.len()) };
        let mut level_rows: Vec<CrossRow> = Vec::new();
        for &key in &keys[..take] {
            let (sum, n) = bins[&key];
            let b = key as f64 * sqrt_dt;
            let x = x0 + b;
            if x.abs() > pde.x_half() - pde.dx() {
                continue;
            }
            let u = pde.interp_u(kp, x)?;
            let y = sum / n as f64;
            level_rows.push(CrossRow { t, x, u_pde: u, y_lattice: y, abs_err: (u - y).abs() });
        }
        level_rows.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap());
        rows.extend(level_rows);
    }
    if rows.is_empty() {
        return Err(Error::Argument("no probe fell inside the PDE domain".into()));
    }
    let mut max_abs: f64 = 0.0;
    let mut sum_abs = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut sum_rel = 0.0;
    for r in &rows {
        let rel = r.abs_err / r.u_pde.abs().max(1e-8);
        max_abs = max_abs.max(r.abs_err);
        sum_abs += r.abs_err;
        max_rel = max_rel.max(rel);
        sum_rel += rel;
    }
    Ok(CrossReport {
        max_abs,
        mean_abs: sum_abs / rows.len() as f64,
        max_rel,
        mean_rel: sum_rel / rows.len() as f64,
        rows,
    })
}
