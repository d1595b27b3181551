//! The martingale functionals against hand-computable cases, the conditional
//! pair Y/M against closed forms, and the structural audits (differential,
//! restriction, future perturbation) over randomized martingales.

mod common;

use bsde_fpi::{
    differential_audit, future_perturbation, future_perturbation_audit, lipschitz_ratio,
    norm_c, restriction_audit, ym_of_v, AdaptedProcess, Codomain, Density, Kernel,
    KernelWeights, LatticeSpace, MartingaleFunctional, MartingaleProcess, Quadratic,
    TerminalCondition,
};

/// dt = 1/4 makes √dt = 1/2 exact, so driver examples compute in short
/// dyadic arithmetic.
fn dyadic_space(d: usize) -> std::sync::Arc<LatticeSpace> {
    LatticeSpace::build(0.0, 1.0, 4, d).unwrap()
}

fn driver_martingale(space: &std::sync::Arc<LatticeSpace>, j: usize) -> MartingaleProcess {
    let k = space.grid().steps();
    let slice: Vec<f64> = (0..space.nodes_at(k)).map(|n| space.driver_value(k, n, j)).collect();
    MartingaleProcess::from_terminal_slice(space, 1, k, slice, 0).unwrap()
}

#[test]
fn density_of_a_driver_is_a_unit_vector() {
    let space = dyadic_space(2);
    let m = driver_martingale(&space, 0);
    let z = Density.evaluate(&m);
    assert_eq!(z.dim(), 2);
    for k in 0..4 {
        for node in 0..space.nodes_at(k) {
            assert!((z.value(k, node, 0) - 1.0).abs() <= 1e-13);
            assert!(z.value(k, node, 1).abs() <= 1e-13);
        }
    }
}

#[test]
fn density_recovers_the_integrand_of_the_squared_driver() {
    let space = dyadic_space(1);
    let big_t = 1.0;
    let slice: Vec<f64> = (0..space.nodes_at(4))
        .map(|n| space.driver_value(4, n, 0).powi(2) - big_t)
        .collect();
    let m = MartingaleProcess::from_terminal_slice(&space, 1, 4, slice, 0).unwrap();
    let z = Density.evaluate(&m);
    for k in 0..4 {
        for node in 0..space.nodes_at(k) {
            let b = space.driver_value(k, node, 0);
            assert!((z.value(k, node, 0) - 2.0 * b).abs() <= 1e-12);
        }
    }
}

#[test]
fn density_residual_vanishes_for_a_single_driver() {
    let space = LatticeSpace::build(0.0, 0.7, 5, 1).unwrap();
    let mut r = common::rng(11);
    let m = common::random_martingale(&space, 2, 5, 0, &mut r);
    let res = Density.orthogonal_residual(&m);
    assert!(res.max_abs() <= 1e-13);
}

#[test]
fn density_residual_is_orthogonal_to_every_increment() {
    let space = LatticeSpace::build(0.0, 0.7, 4, 2).unwrap();
    let mut r = common::rng(12);
    let m = common::random_martingale(&space, 1, 4, 0, &mut r);
    let res = Density.orthogonal_residual(&m);
    let branches = space.branches();
    for k in 0..4 {
        for node in 0..space.nodes_at(k) {
            let slot = &res.level(k)[node * branches..(node + 1) * branches];
            let mean: f64 = slot.iter().sum::<f64>() * space.branch_prob();
            assert!(mean.abs() <= 1e-13, "residual not mean-zero: {mean:.3e}");
            for i in 0..2 {
                let dot: f64 = (0..branches)
                    .map(|b| slot[b] * space.increment(b, i))
                    .sum::<f64>()
                    * space.branch_prob();
                assert!(dot.abs() <= 1e-13, "residual correlated with driver {i}: {dot:.3e}");
            }
        }
    }
}

#[test]
fn quadratic_tail_of_the_driver_is_the_remaining_time() {
    let space = dyadic_space(1);
    let m = driver_martingale(&space, 0);
    let l = Quadratic::new(3.2).unwrap().evaluate(&m);
    let dt = space.grid().dt();
    for k in 0..=4 {
        let expect = ((4 - k) as f64 * dt).sqrt();
        for node in 0..space.nodes_at(k) {
            assert!((l.value(k, node, 0) - expect).abs() <= 1e-13);
        }
    }
    assert!(l.level(4).iter().all(|&v| v == 0.0));
}

#[test]
fn quadratic_tail_squared_is_a_supermartingale() {
    let space = LatticeSpace::build(0.0, 0.9, 5, 1).unwrap();
    let mut r = common::rng(21);
    for _ in 0..20 {
        let m = common::random_martingale(&space, 1, 5, 0, &mut r);
        let l = Quadratic::new(3.2).unwrap().evaluate(&m);
        for k in 0..5 {
            for node in 0..space.nodes_at(k) {
                let here = l.value(k, node, 0).powi(2);
                let mut mean = 0.0;
                for b in 0..space.branches() {
                    mean += l.value(k + 1, space.child(node, b), 0).powi(2);
                }
                mean *= space.branch_prob();
                assert!(here >= mean - 1e-12);
            }
        }
    }
}

#[test]
fn kernel_with_a_point_mass_is_the_density() {
    let space = LatticeSpace::build(0.0, 0.7, 4, 2).unwrap();
    let mut r = common::rng(31);
    let kernel = Kernel::new(KernelWeights::dirac(4), 1.0).unwrap();
    for _ in 0..10 {
        let m = common::random_martingale(&space, 1, 4, 0, &mut r);
        let g = kernel.evaluate(&m);
        let z = Density.evaluate(&m);
        assert_eq!(g.max_abs_diff(&z), 0.0);
    }
}

#[test]
fn kernel_with_flat_weights_integrates_remaining_time() {
    let space = dyadic_space(1);
    let dt = space.grid().dt();
    let m = driver_martingale(&space, 0);
    let kernel = Kernel::new(KernelWeights::uniform(4, dt), 1.0).unwrap();
    let g = kernel.evaluate(&m);
    for k in 0..4 {
        let expect = 1.0 - k as f64 * dt;
        for node in 0..space.nodes_at(k) {
            assert!((g.value(k, node, 0) - expect).abs() <= 1e-12);
        }
    }
}

#[test]
fn kernel_of_a_constant_martingale_vanishes() {
    let space = LatticeSpace::build(0.0, 0.7, 4, 1).unwrap();
    let slice = vec![1.75; space.nodes_at(4)];
    let m = MartingaleProcess::from_terminal_slice(&space, 1, 4, slice, 0).unwrap();
    for weights in [KernelWeights::dirac(4), KernelWeights::uniform(4, 0.3)] {
        let g = Kernel::new(weights, 1.0).unwrap().evaluate(&m);
        assert_eq!(g.max_abs(), 0.0);
    }
}

#[test]
fn conditional_pair_of_zero_process_is_the_closed_terminal() {
    let space = LatticeSpace::build(0.0, 0.7, 4, 1).unwrap();
    let mut r = common::rng(41);
    use rand::Rng;
    let slice: Vec<f64> = (0..space.nodes_at(4)).map(|_| r.gen_range(-1.0..1.0)).collect();
    let xi = TerminalCondition::new(&space, 1, 4, slice).unwrap();
    let v = AdaptedProcess::zeros(&space, 1, 0, 4);
    let (y, m) = ym_of_v(&xi, &v).unwrap();
    let e = bsde_fpi::cond_expect_terminal(&xi, 0).unwrap();
    for k in 0..=4 {
        assert_eq!(y.level(k), e.level(k));
        assert_eq!(m.process().level(k), e.level(k));
    }
}

#[test]
fn conditional_pair_of_the_running_time_is_time_to_go() {
    let space = LatticeSpace::build(0.0, 1.0, 4, 1).unwrap();
    let grid = *space.grid();
    let xi = TerminalCondition::constant(&space, 1, 4, 0.0).unwrap();
    let v = AdaptedProcess::from_fn(&space, 1, 0, 4, |k, _, out| out[0] = grid.t(k));
    let (y, _) = ym_of_v(&xi, &v).unwrap();
    for k in 0..=4 {
        let expect = grid.t(4) - grid.t(k);
        for node in 0..space.nodes_at(k) {
            assert_eq!(y.value(k, node, 0), expect);
        }
    }
}

#[test]
fn conditional_pair_of_the_driver_returns_the_driver() {
    let space = LatticeSpace::build(0.0, 1.0, 2, 1).unwrap();
    let xi = TerminalCondition::from_driver_fn(&space, 1, 2, |b, out| out[0] = b[0]).unwrap();
    let v = space.driver_paths();
    let (y, _) = ym_of_v(&xi, &v).unwrap();
    for k in 0..=2 {
        for node in 0..space.nodes_at(k) {
            let b = space.driver_value(k, node, 0);
            assert!((y.value(k, node, 0) - b).abs() <= 1e-14);
        }
    }
    assert_eq!(y.level(2), xi.values());
}

#[test]
fn conditional_pair_ignores_constant_shifts() {
    let space = LatticeSpace::build(0.0, 0.7, 4, 1).unwrap();
    let mut r = common::rng(42);
    let v = common::random_process(&space, 1, 0, 4, &mut r);
    let mut shifted = v.clone();
    shifted.axpy(1.0, &AdaptedProcess::from_fn(&space, 1, 0, 4, |_, _, out| out[0] = 0.35));
    let xi = TerminalCondition::from_driver_fn(&space, 1, 4, |b, out| out[0] = b[0].powi(2))
        .unwrap();
    let (y1, _) = ym_of_v(&xi, &v).unwrap();
    let (y2, _) = ym_of_v(&xi, &shifted).unwrap();
    assert!(y1.max_abs_diff(&y2) <= 1e-13);
}

#[test]
fn density_survives_randomized_structure_audits() {
    let space = LatticeSpace::build(0.0, 0.8, 5, 1).unwrap();
    let mut r = common::rng(51);
    for _ in 0..50 {
        let m = common::random_martingale(&space, 1, 5, 0, &mut r);
        assert!(differential_audit(&Density, &m) <= 1e-12);
        assert_eq!(restriction_audit(&Density, &m, 0, 3), 0.0);
        assert_eq!(restriction_audit(&Density, &m, 1, 4), 0.0);
        assert_eq!(future_perturbation_audit(&Density, &m, 2, 3.0, 0), 0.0);
    }
}

#[test]
fn perturbed_martingales_stay_martingales_and_agree_below_the_cut() {
    let space = LatticeSpace::build(0.0, 0.8, 5, 2).unwrap();
    let mut r = common::rng(52);
    let m = common::random_martingale(&space, 1, 5, 0, &mut r);
    let m2 = future_perturbation(&m, 2, 1.7, 1);
    assert!(m2.martingale_defect() <= 1e-12);
    for k in 0..=2 {
        assert_eq!(m.process().level(k), m2.process().level(k));
    }
    assert!(m.process().max_abs_diff(m2.process()) > 0.1);
}

#[test]
fn quadratic_tail_sees_future_perturbations() {
    let space = LatticeSpace::build(0.0, 0.8, 5, 1).unwrap();
    let q = Quadratic::new(3.2).unwrap();
    let mut r = common::rng(53);
    for _ in 0..10 {
        let m = common::random_martingale(&space, 1, 5, 0, &mut r);
        let lambda = 8.0 * (1.0 + m.process().max_abs()) / space.sqrt_dt();
        let violation = future_perturbation_audit(&q, &m, 2, lambda, 0);
        assert!(violation >= 0.1, "expected an order-one violation, got {violation:.3e}");
        assert!(differential_audit(&q, &m) <= 1e-10);
    }
}

/// Deliberately broken functional: returns M itself, which depends on the
/// window's start value, while claiming to be differential.
struct ValueReadout;

impl MartingaleFunctional for ValueReadout {
    fn name(&self) -> &'static str {
        "value-readout"
    }
    fn codomain(&self) -> Codomain {
        Codomain::C
    }
    fn local_in_time(&self) -> bool {
        true
    }
    fn differential(&self) -> bool {
        true
    }
    fn lipschitz(&self, _d: usize) -> f64 {
        1.0
    }
    fn output_dim(&self, dprime: usize, _d: usize) -> usize {
        dprime
    }
    fn evaluate(&self, m: &MartingaleProcess) -> AdaptedProcess {
        m.process().clone()
    }
}

#[test]
fn value_readout_fails_the_differential_audit() {
    let space = LatticeSpace::build(0.0, 0.8, 5, 1).unwrap();
    let mut r = common::rng(54);
    use rand::Rng;
    // Positive terminal data keeps the start value, and so the audit gap,
    // of order one.
    let slice: Vec<f64> = (0..space.nodes_at(5)).map(|_| r.gen_range(2.0..4.0)).collect();
    let m = MartingaleProcess::from_terminal_slice(&space, 1, 5, slice, 0).unwrap();
    assert!(differential_audit(&ValueReadout, &m) > 1.0);
    assert_eq!(restriction_audit(&ValueReadout, &m, 0, 3), 0.0);
}

#[test]
fn measured_lipschitz_ratios_stay_under_declared_constants() {
    let space = LatticeSpace::build(0.0, 1.0, 5, 1).unwrap();
    let functionals: Vec<Box<dyn MartingaleFunctional>> = vec![
        Box::new(Density),
        Box::new(Quadratic::new(3.2).unwrap()),
        Box::new(Kernel::new(KernelWeights::dirac(5), 1.0).unwrap()),
        Box::new(Kernel::new(KernelWeights::uniform(5, space.grid().dt()), 1.0).unwrap()),
    ];
    let mut r = common::rng(55);
    for f in &functionals {
        let declared = f.lipschitz(space.d());
        let mut seen: f64 = 0.0;
        for _ in 0..30 {
            let m1 = common::random_martingale(&space, 1, 5, 0, &mut r);
            let m2 = common::random_martingale(&space, 1, 5, 0, &mut r);
            if let Some(ratio) = lipschitz_ratio(f.as_ref(), &m1, &m2) {
                assert!(ratio.is_finite());
                seen = seen.max(ratio);
            }
        }
        assert!(
            seen <= declared * (1.0 + 1e-9),
            "{}: measured {seen:.4} above declared {declared:.4}",
            f.name()
        );
        assert!(seen > 0.0);
    }
}

#[test]
fn identical_inputs_give_no_lipschitz_ratio() {
    let space = LatticeSpace::build(0.0, 1.0, 4, 1).unwrap();
    let mut r = common::rng(56);
    let m = common::random_martingale(&space, 1, 4, 0, &mut r);
    assert!(lipschitz_ratio(&Density, &m, &m).is_none());
}

#[test]
fn flat_kernel_ratio_scales_with_total_weight() {
    // Doubling every weight doubles the measured ratio: the kernel is linear
    // in its weights.
    let space = LatticeSpace::build(0.0, 1.0, 5, 1).unwrap();
    let dt = space.grid().dt();
    let mut r = common::rng(57);
    let m1 = common::random_martingale(&space, 1, 5, 0, &mut r);
    let m2 = common::random_martingale(&space, 1, 5, 0, &mut r);
    let k1 = Kernel::new(KernelWeights::uniform(5, dt), 1.0).unwrap();
    let k2 = Kernel::new(KernelWeights::uniform(5, 2.0 * dt), 2.0).unwrap();
    let r1 = lipschitz_ratio(&k1, &m1, &m2).unwrap();
    let r2 = lipschitz_ratio(&k2, &m1, &m2).unwrap();
    assert!((r2 - 2.0 * r1).abs() <= 1e-12 * (1.0 + r1));
}

#[test]
fn norms_separate_the_codomains() {
    // The H² norm of a density output and the C norm of a quadratic output
    // are both controlled by the martingale's path norm.
    let space = LatticeSpace::build(0.0, 1.0, 5, 1).unwrap();
    let mut r = common::rng(58);
    let m = common::random_martingale(&space, 1, 5, 0, &mut r);
    let z = Density.evaluate(&m);
    let q = Quadratic::new(3.2).unwrap().evaluate(&m);
    let base = norm_c(m.process());
    assert!(bsde_fpi::norm_h2(&z) <= Density.lipschitz(1) * base * (1.0 + 1e-12));
    assert!(norm_c(&q) <= 3.2 * base * (1.0 + 1e-12));
}
