//! The discrete filtered probability space: a non-recombining 2^d-ary tree
//! whose branches move every driver by ±√dt with uniform probability 2^(−d).
//! Driver increments have exact moments (Σp = 1, E ΔB = 0, E ΔBᵢΔBⱼ = δᵢⱼ·dt),
//! so conditional expectations and martingale identities hold to machine
//! precision rather than to a sampling error.
//!
//! Node (k, i) at level k has children (k+1, (i << d) | b) for branches
//! b ∈ [0, 2^d); bit j of b selects +√dt (set) or −√dt (clear) for driver j.
//! A node index therefore encodes its whole path, earliest step in the highest
//! bits, and each leaf identifies a unique root-to-leaf path.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::par;

/// Default cap on the total node count across all levels.
pub const DEFAULT_NODE_CAP: u64 = 1 << 22;

/// Parents per parallel chunk in level sweeps (children chunks are this times 2^d).
const PARENTS_PER_CHUNK: usize = 1 << 10;

#[derive(Debug)]
pub struct LatticeSpace {
    grid: TimeGrid,
    d: usize,
    sqrt_dt: f64,
    cap: u64,
}

impl LatticeSpace {
    /// Build the lattice over [tau, t_end] with `steps` levels of branching and
    /// `d` drivers, under the default node cap.
    pub fn build(tau: f64, t_end: f64, steps: usize, d: usize) -> Result<Arc<Self>> {
        Self::build_with_cap(tau, t_end, steps, d, DEFAULT_NODE_CAP)
    }

    pub fn build_with_cap(
        tau: f64,
        t_end: f64,
        steps: usize,
        d: usize,
        cap: u64,
    ) -> Result<Arc<Self>> {
        let grid = TimeGrid::new(tau, t_end, steps)?;
        if d == 0 {
            return Err(Error::Argument("driver dimension d must be >= 1".into()));
        }
        if d >= 20 {
            return Err(Error::Argument(format!("driver dimension d = {d} is not tractable")));
        }
        let total = total_node_count(steps, d)
            .ok_or(Error::Capacity { requested: u128::MAX, cap })?;
        if total > cap as u128 {
            return Err(Error::Capacity { requested: total, cap });
        }
        let sqrt_dt = grid.dt().sqrt();
        Ok(Arc::new(Self { grid, d, sqrt_dt, cap }))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn node_cap(&self) -> u64 {
        self.cap
    }

    /// Number of child branches per node, 2^d.
    pub fn branches(&self) -> usize {
        1 << self.d
    }

    /// Uniform branch probability 2^(−d), an exact dyadic.
    pub fn branch_prob(&self) -> f64 {
        1.0 / (1u64 << self.d) as f64
    }

    /// Probability of any single node at level k, 2^(−d·k).
    pub fn node_prob(&self, k: usize) -> f64 {
        2f64.powi(-((self.d * k) as i32))
    }

    pub fn nodes_at(&self, k: usize) -> usize {
        debug_assert!(k <= self.grid.steps());
        1usize << (self.d * k)
    }

    pub fn total_nodes(&self) -> u64 {
        total_node_count(self.grid.steps(), self.d).unwrap() as u64
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn parent(&self, node: usize) -> usize {
        node >> self.d
    }

    pub fn child(&self, node: usize, branch: usize) -> usize {
        debug_assert!(branch < self.branches());
        (node << self.d) | branch
    }

    /// Driver increment ΔB^driver on branch `branch`: ±√dt by bit `driver` of the branch.
    pub fn increment(&self, branch: usize, driver: usize) -> f64 {
        debug_assert!(driver < self.d);
        if (branch >> driver) & 1 == 1 {
            self.sqrt_dt
        } else {
            -self.sqrt_dt
        }
    }

    /// Driver value B^driver at node (k, node): the running sum of increments
    /// recovered from the branch history encoded in the node index.
    pub fn driver_value(&self, k: usize, node: usize, driver: usize) -> f64 {
        let mut b = 0.0;
        for step in 1..=k {
            let branch = (node >> (self.d * (k - step))) & (self.branches() - 1);
            b += self.increment(branch, driver);
        }
        b
    }

    /// All d driver values at every node of level k, node-major.
    pub fn driver_slice(&self, k: usize) -> Vec<f64> {
        let d = self.d;
        let mut prev = vec![0.0f64; d];
        for lev in 1..=k {
            let mut next = vec![0.0f64; self.nodes_at(lev) * d];
            let chunk = PARENTS_PER_CHUNK * self.branches() * d;
            let branches = self.branches();
            let prev_ref = &prev;
            par::for_each_chunk_mut(&mut next, chunk, |ci, out| {
                let first_child = ci * PARENTS_PER_CHUNK * branches;
                for (local, vals) in out.chunks_mut(d).enumerate() {
                    let child = first_child + local;
                    let parent = child >> self.d;
                    let branch = child & (branches - 1);
                    for i in 0..d {
                        vals[i] = prev_ref[parent * d + i] + self.increment(branch, i);
                    }
                }
            });
            prev = next;
        }
        prev
    }

    /// The d-dimensional driver path B as an adapted process over [0, K].
    pub fn driver_paths(self: &Arc<Self>) -> AdaptedProcess {
        let steps = self.grid.steps();
        let mut levels: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
        levels.push(vec![0.0f64; self.d]);
        for lev in 1..=steps {
            let next = {
                let prev_ref = &levels[lev - 1];
                let mut next = vec![0.0f64; self.nodes_at(lev) * self.d];
                let chunk = PARENTS_PER_CHUNK * self.branches() * self.d;
                let branches = self.branches();
                let d = self.d;
                par::for_each_chunk_mut(&mut next, chunk, |ci, out| {
                    let first_child = ci * PARENTS_PER_CHUNK * branches;
                    for (local, vals) in out.chunks_mut(d).enumerate() {
                        let child = first_child + local;
                        let parent = child >> d;
                        let branch = child & (branches - 1);
                        for i in 0..d {
                            vals[i] = prev_ref[parent * d + i] + self.increment(branch, i);
                        }
                    }
                });
                next
            };
            levels.push(next);
        }
        AdaptedProcess { space: Arc::clone(self), dim: self.d, start_level: 0, values: levels }
    }
}

fn total_node_count(steps: usize, d: usize) -> Option<u128> {
    let mut total: u128 = 0;
    for k in 0..=steps {
        let bits = (d as u128).checked_mul(k as u128)?;
        if bits >= 127 {
            return None;
        }
        total = total.checked_add(1u128 << bits)?;
    }
    Some(total)
}

/// One real vector of length `dim` per node, per level of a window
/// [start_level, end_level]. The value at a node is the process value at that
/// time on every path through the node (adaptedness).
#[derive(Debug, Clone)]
pub struct AdaptedProcess {
    space: Arc<LatticeSpace>,
    dim: usize,
    start_level: usize,
    values: Vec<Vec<f64>>,
}

impl AdaptedProcess {
    pub fn zeros(space: &Arc<LatticeSpace>, dim: usize, start_level: usize, end_level: usize) -> Self {
        assert!(dim > 0, "process dimension must be positive");
        assert!(start_level <= end_level && end_level <= space.grid().steps());
        let values = (start_level..=end_level)
            .map(|k| vec![0.0f64; space.nodes_at(k) * dim])
            .collect();
        Self { space: Arc::clone(space), dim, start_level, values }
    }

    /// Build from a per-node closure `f(level, node, out)`.
    pub fn from_fn<F>(
        space: &Arc<LatticeSpace>,
        dim: usize,
        start_level: usize,
        end_level: usize,
        mut f: F,
    ) -> Self
    where
        F: FnMut(usize, usize, &mut [f64]),
    {
        let mut p = Self::zeros(space, dim, start_level, end_level);
        for k in start_level..=end_level {
            let level = &mut p.values[k - start_level];
            for node in 0..space.nodes_at(k) {
                f(k, node, &mut level[node * dim..(node + 1) * dim]);
            }
        }
        p
    }

    pub fn from_levels(
        space: &Arc<LatticeSpace>,
        dim: usize,
        start_level: usize,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if dim == 0 || values.is_empty() {
            return Err(Error::Malformed("empty adapted process".into()));
        }
        let end_level = start_level + values.len() - 1;
        if end_level > space.grid().steps() {
            return Err(Error::LevelRange(format!(
                "process end level {end_level} exceeds grid terminal level {}",
                space.grid().steps()
            )));
        }
        for (off, level) in values.iter().enumerate() {
            let expect = space.nodes_at(start_level + off) * dim;
            if level.len() != expect {
                return Err(Error::Malformed(format!(
                    "level {} holds {} values, expected {expect}",
                    start_level + off,
                    level.len()
                )));
            }
        }
        Ok(Self { space: Arc::clone(space), dim, start_level, values })
    }

    pub fn space(&self) -> &Arc<LatticeSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start_level(&self) -> usize {
        self.start_level
    }

    pub fn end_level(&self) -> usize {
        self.start_level + self.values.len() - 1
    }

    pub fn level(&self, k: usize) -> &[f64] {
        assert!(k >= self.start_level && k <= self.end_level(), "level {k} outside window");
        &self.values[k - self.start_level]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        assert!(k >= self.start_level && k <= self.end_level(), "level {k} outside window");
        let s = self.start_level;
        &mut self.values[k - s]
    }

    pub fn node(&self, k: usize, node: usize) -> &[f64] {
        let dim = self.dim;
        &self.level(k)[node * dim..(node + 1) * dim]
    }

    pub fn value(&self, k: usize, node: usize, j: usize) -> f64 {
        self.level(k)[node * self.dim + j]
    }

    pub fn same_window(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.space, &other.space)
            && self.dim == other.dim
            && self.start_level == other.start_level
            && self.values.len() == other.values.len()
    }

    /// self += a·x over the shared window.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        assert!(self.same_window(x), "window/dimension mismatch");
        for (mine, theirs) in self.values.iter_mut().zip(&x.values) {
            for (v, w) in mine.iter_mut().zip(theirs) {
                *v += a * w;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for level in &mut self.values {
            for v in level.iter_mut() {
                *v *= a;
            }
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert!(self.same_window(other), "window/dimension mismatch");
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Max over nodes and components of |self − other|.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert!(self.same_window(other), "window/dimension mismatch");
        let mut m: f64 = 0.0;
        for (mine, theirs) in self.values.iter().zip(&other.values) {
            for (v, w) in mine.iter().zip(theirs) {
                m = m.max((v - w).abs());
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for level in &self.values {
            for v in level {
                m = m.max(v.abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|level| level.iter().all(|v| v.is_finite()))
    }

    /// Clone of the sub-window [a, b].
    pub fn restrict(&self, a: usize, b: usize) -> Self {
        assert!(a >= self.start_level && b <= self.end_level() && a <= b);
        Self {
            space: Arc::clone(&self.space),
            dim: self.dim,
            start_level: a,
            values: self.values[a - self.start_level..=b - self.start_level].to_vec(),
        }
    }
}

/// An adapted process whose value at every non-terminal node equals the
/// probability-weighted mean of its children's values.
#[derive(Debug, Clone)]
pub struct MartingaleProcess(AdaptedProcess);

impl MartingaleProcess {
    /// Exact martingale closure of a terminal slice: values at `level` are
    /// averaged backward to `start_level`.
    pub fn from_terminal_slice(
        space: &Arc<LatticeSpace>,
        dim: usize,
        level: usize,
        slice: Vec<f64>,
        start_level: usize,
    ) -> Result<Self> {
        let p = backward_average(space, dim, level, slice, start_level)?;
        Ok(Self(p))
    }

    /// Wrap a process the caller asserts to be a martingale (e.g. assembled
    /// by the splice construction, or re-ingested from a solution file).
    /// Nothing is recomputed: `martingale_defect` and solution verification
    /// measure the property instead of trusting this constructor.
    pub fn from_process_unchecked(p: AdaptedProcess) -> Self {
        Self(p)
    }

    pub fn process(&self) -> &AdaptedProcess {
        &self.0
    }

    pub fn into_process(self) -> AdaptedProcess {
        self.0
    }

    /// Max over non-terminal nodes of |value − mean of children|: 0 up to
    /// rounding for a true martingale.
    pub fn martingale_defect(&self) -> f64 {
        let p = &self.0;
        let space = p.space();
        let prob = space.branch_prob();
        let branches = space.branches();
        let dim = p.dim();
        let mut defect: f64 = 0.0;
        for k in p.start_level()..p.end_level() {
            let here = p.level(k);
            let kids = p.level(k + 1);
            for node in 0..space.nodes_at(k) {
                for j in 0..dim {
                    let mut sum = 0.0;
                    for b in 0..branches {
                        sum += kids[(space.child(node, b)) * dim + j];
                    }
                    defect = defect.max((here[node * dim + j] - prob * sum).abs());
                }
            }
        }
        defect
    }

    /// Restriction of a martingale to a sub-window is again a martingale.
    pub fn restrict(&self, a: usize, b: usize) -> Self {
        Self(self.0.restrict(a, b))
    }
}

/// The terminal datum ξ: one vector of length `dim` per node at `level`.
#[derive(Debug, Clone)]
pub struct TerminalCondition {
    space: Arc<LatticeSpace>,
    dim: usize,
    level: usize,
    values: Vec<f64>,
}

impl TerminalCondition {
    pub fn new(space: &Arc<LatticeSpace>, dim: usize, level: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Malformed("terminal condition dimension must be positive".into()));
        }
        if level > space.grid().steps() {
            return Err(Error::LevelRange(format!(
                "terminal level {level} exceeds grid terminal level {}",
                space.grid().steps()
            )));
        }
        if values.len() != space.nodes_at(level) * dim {
            return Err(Error::Malformed(format!(
                "terminal condition holds {} values, expected {}",
                values.len(),
                space.nodes_at(level) * dim
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("terminal condition".into()));
        }
        Ok(Self { space: Arc::clone(space), dim, level, values })
    }

    pub fn constant(space: &Arc<LatticeSpace>, dim: usize, level: usize, c: f64) -> Result<Self> {
        Self::new(space, dim, level, vec![c; space.nodes_at(level) * dim])
    }

    /// ξ(node) = f(B(node)) componentwise from the driver values at `level`.
    pub fn from_driver_fn<F>(
        space: &Arc<LatticeSpace>,
        dim: usize,
        level: usize,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let b = space.driver_slice(level);
        let d = space.d();
        let mut values = vec![0.0f64; space.nodes_at(level) * dim];
        for node in 0..space.nodes_at(level) {
            f(&b[node * d..(node + 1) * d], &mut values[node * dim..(node + 1) * dim]);
        }
        Self::new(space, dim, level, values)
    }

    pub fn space(&self) -> &Arc<LatticeSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// sqrt(E|ξ|²), exact probability weights.
    pub fn l2_norm(&self) -> f64 {
        let prob = self.space.node_prob(self.level);
        let mut sum = 0.0;
        for v in &self.values {
            sum += v * v;
        }
        (prob * sum).sqrt()
    }
}

/// Exact conditional expectation of the end-level slice of `x`, backward to
/// level `k`: returns a process over [k, x.end_level()] whose every value is
/// the probability-weighted average of `x`'s end-level values over the node's
/// descendants. At the end level it equals `x`'s own slice.
pub fn cond_expect(x: &AdaptedProcess, k: usize) -> Result<AdaptedProcess> {
    let top = x.end_level();
    backward_average(x.space(), x.dim(), top, x.level(top).to_vec(), k)
}

/// Conditional expectation of the terminal condition, backward to level `k`.
pub fn cond_expect_terminal(xi: &TerminalCondition, k: usize) -> Result<AdaptedProcess> {
    backward_average(xi.space(), xi.dim(), xi.level(), xi.values().to_vec(), k)
}

pub(crate) fn backward_average(
    space: &Arc<LatticeSpace>,
    dim: usize,
    top_level: usize,
    top: Vec<f64>,
    k: usize,
) -> Result<AdaptedProcess> {
    if k > top_level {
        return Err(Error::LevelRange(format!(
            "requested level {k} is above the data level {top_level}"
        )));
    }
    if top.len() != space.nodes_at(top_level) * dim {
        return Err(Error::Malformed(format!(
            "slice holds {} values, expected {}",
            top.len(),
            space.nodes_at(top_level) * dim
        )));
    }
    let mut levels = vec![Vec::new(); top_level - k + 1];
    levels[top_level - k] = top;
    for lev in (k..top_level).rev() {
        let child = &levels[lev + 1 - k];
        let mut here = vec![0.0f64; space.nodes_at(lev) * dim];
        average_children(space, dim, child, &mut here);
        levels[lev - k] = here;
    }
    AdaptedProcess::from_levels(space, dim, k, levels)
}

/// parent[i] = 2^(−d) · Σ_b child[(i<<d)|b], summed in branch order.
pub(crate) fn average_children(
    space: &LatticeSpace,
    dim: usize,
    child: &[f64],
    parent: &mut [f64],
) {
    let prob = space.branch_prob();
    let branches = space.branches();
    let chunk = PARENTS_PER_CHUNK * dim;
    par::for_each_chunk_mut(parent, chunk, |ci, out| {
        let first_parent = ci * PARENTS_PER_CHUNK;
        for (local, vals) in out.chunks_mut(dim).enumerate() {
            let node = first_parent + local;
            let base = (node << space.d()) * dim;
            for (j, v) in vals.iter_mut().enumerate() {
                let mut sum = 0.0;
                for b in 0..branches {
                    sum += child[base + b * dim + j];
                }
                *v = prob * sum;
            }
        }
    });
}

/// Path-space norm sqrt(Σ_j E sup_k |V^j|²): the pathwise running max of |V|
/// is propagated from the window start to the window end (each end node is a
/// distinct path), then averaged with exact probabilities.
pub fn norm_c(v: &AdaptedProcess) -> f64 {
    let space = v.space();
    let dim = v.dim();
    let s = v.start_level();
    let e = v.end_level();
    let mut maxv: Vec<f64> = v.level(s).iter().map(|x| x.abs()).collect();
    for lev in s + 1..=e {
        let here = v.level(lev);
        let mut next = vec![0.0f64; here.len()];
        let chunk = PARENTS_PER_CHUNK * space.branches() * dim;
        let maxv_ref = &maxv;
        par::for_each_chunk_mut(&mut next, chunk, |ci, out| {
            let first_child = ci * PARENTS_PER_CHUNK * space.branches();
            for (local, vals) in out.chunks_mut(dim).enumerate() {
                let child = first_child + local;
                let parent = child >> space.d();
                for j in 0..dim {
                    vals[j] = maxv_ref[parent * dim + j].max(here[child * dim + j].abs());
                }
            }
        });
        maxv = next;
    }
    let prob = space.node_prob(e);
    let mut total = 0.0;
    for m in &maxv {
        total += m * m;
    }
    (prob * total).sqrt()
}

/// Predictable-integrand norm sqrt(Σ_j Σ_{k<end} E|Z^j_k|²·dt): left-endpoint
/// sum, the terminal level of `z` is not consumed.
pub fn norm_h2(z: &AdaptedProcess) -> f64 {
    let space = z.space();
    let dt = space.grid().dt();
    let mut total = 0.0;
    for lev in z.start_level()..z.end_level() {
        let prob = space.node_prob(lev);
        let mut level_sum = 0.0;
        for v in z.level(lev) {
            level_sum += v * v;
        }
        total += prob * level_sum * dt;
    }
    total.sqrt()
}
