//! Brute-force reimplementations of the lattice statistics by explicit path
//! enumeration, plus seeded generators. These deliberately share no code with
//! the production recursions they cross-check.

#![allow(dead_code)]

use std::sync::Arc;

use bsde_fpi::{AdaptedProcess, LatticeSpace, MartingaleProcess};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// E[top | F_k] for every node at level k, as the plain mean over the node's
/// descendant block (all paths equally likely).
pub fn bf_cond_expect_slice(
    space: &Arc<LatticeSpace>,
    dim: usize,
    top_level: usize,
    top: &[f64],
    k: usize,
) -> Vec<f64> {
    let span = space.d() * (top_level - k);
    let count = 1usize << span;
    let mut out = vec![0.0f64; space.nodes_at(k) * dim];
    for node in 0..space.nodes_at(k) {
        for j in 0..dim {
            let mut sum = 0.0;
            for i in 0..count {
                sum += top[((node << span) + i) * dim + j];
            }
            out[node * dim + j] = sum / count as f64;
        }
    }
    out
}

/// sqrt(Σ_j E sup_k |V^j|²) by walking every path of the window.
pub fn bf_norm_c(v: &AdaptedProcess) -> f64 {
    let space = v.space();
    let (a, b, dim) = (v.start_level(), v.end_level(), v.dim());
    let leaves = space.nodes_at(b);
    let mut total = 0.0;
    for j in 0..dim {
        let mut acc = 0.0;
        for leaf in 0..leaves {
            let mut sup = 0.0f64;
            for k in a..=b {
                let anc = leaf >> (space.d() * (b - k));
                sup = sup.max(v.value(k, anc, j).abs());
            }
            acc += sup * sup;
        }
        total += acc / leaves as f64;
    }
    total.sqrt()
}

/// sqrt(Σ_j Σ_{k<end} E|Z^j_k|²·dt), left-endpoint sum with exact node
/// probabilities.
pub fn bf_norm_h2(z: &AdaptedProcess) -> f64 {
    let space = z.space();
    let dt = space.grid().dt();
    let mut total = 0.0;
    for k in z.start_level()..z.end_level() {
        let prob = space.node_prob(k);
        for node in 0..space.nodes_at(k) {
            for j in 0..z.dim() {
                total += prob * z.value(k, node, j).powi(2) * dt;
            }
        }
    }
    total.sqrt()
}

/// Largest one-step closure gap |M_k − E[M_{k+1} | F_k]| over the window.
pub fn bf_defect(p: &AdaptedProcess) -> f64 {
    let space = p.space();
    let prob = space.branch_prob();
    let mut worst = 0.0f64;
    for k in p.start_level()..p.end_level() {
        for node in 0..space.nodes_at(k) {
            for j in 0..p.dim() {
                let mut mean = 0.0;
                for br in 0..space.branches() {
                    mean += p.value(k + 1, space.child(node, br), j);
                }
                worst = worst.max((p.value(k, node, j) - prob * mean).abs());
            }
        }
    }
    worst
}

/// Adapted process with independent uniform values in [-1, 1).
pub fn random_process(
    space: &Arc<LatticeSpace>,
    dim: usize,
    a: usize,
    b: usize,
    rng: &mut ChaCha8Rng,
) -> AdaptedProcess {
    AdaptedProcess::from_fn(space, dim, a, b, |_, _, out| {
        for v in out {
            *v = rng.gen_range(-1.0..1.0);
        }
    })
}

/// Martingale closed from a uniform random slice at `level`.
pub fn random_martingale(
    space: &Arc<LatticeSpace>,
    dim: usize,
    level: usize,
    start: usize,
    rng: &mut ChaCha8Rng,
) -> MartingaleProcess {
    let slice: Vec<f64> =
        (0..space.nodes_at(level) * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    MartingaleProcess::from_terminal_slice(space, dim, level, slice, start).unwrap()
}
