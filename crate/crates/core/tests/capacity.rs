use metastable::analysis::{Landscape, Setup, SetupChoice};
use metastable::capacity::{
    dirichlet_energy, flow_lower_bound, solve_equilibrium_potential, test_function, test_function_upper_bound,
    FlowOptions, SolveOptions, SolverKind, UpperOptions,
};
use proptest::prelude::*;

fn setup(name: &str, n: u32) -> (Landscape, Setup) {
    let l = Landscape::builtin(name).unwrap();
    let s = l.setup(n, &SetupChoice::default()).unwrap();
    (l, s)
}

#[test]
fn upper_bound_orientation_flip() {
    for (name, n) in [("double_well", 60), ("four_well", 32), ("two_saddle", 32)] {
        let (_, s) = setup(name, n);
        let a = vec![0];
        let b = s.complement(&a);
        let opts = UpperOptions::default();
        let (va, ua) = test_function(&s.chain, &s.decomp, s.component, &a, &s.sets, &opts).unwrap();
        let (vb, ub) = test_function(&s.chain, &s.decomp, s.component, &b, &s.sets, &opts).unwrap();
        assert_eq!(ua.epsilon, ub.epsilon, "{name}");
        assert!((ua.capacity.prefactor / ub.capacity.prefactor - 1.0).abs() < 1e-12, "{name}");
        for site in s.chain.sites() {
            assert!((va[site] + vb[site] - 1.0).abs() < 1e-12, "{name} site {site}");
        }
    }
}

#[test]
fn sandwich_on_builtins() {
    for (name, n) in [("double_well", 100), ("tilted_double_well", 100), ("four_well", 32), ("two_saddle", 32)] {
        let (l, s) = setup(name, n);
        let w = s
            .sandwich(&l.model, &[0], &UpperOptions::default(), &FlowOptions::default(), &SolveOptions::default())
            .unwrap();
        assert!(w.kappa_lower <= w.kappa_exact * (1.0 + 1e-10), "{name}");
        assert!(w.kappa_exact < w.kappa_upper, "{name}");
        if l.model.dim > 1 {
            assert!(w.kappa_lower < w.kappa_exact, "{name}");
        }
        assert!(w.flow_divergence <= 1e-12, "{name} divergence {}", w.flow_divergence);
        assert!(w.flow_unitarity <= 1e-10, "{name} unitarity {}", w.flow_unitarity);
        assert!(w.path_rise <= 10.0, "{name} rise {}", w.path_rise);
    }
}

#[test]
fn one_dimensional_flow_is_the_equilibrium_current() {
    let (l, s) = setup("double_well", 100);
    let w = s.sandwich(&l.model, &[0], &UpperOptions::default(), &FlowOptions::default(), &SolveOptions::default()).unwrap();
    assert!((w.kappa_lower / w.kappa_exact - 1.0).abs() < 1e-9);
    assert_eq!(w.lower.thetas, vec![1.0]);
}

#[test]
fn symmetric_saddles_share_the_flow() {
    let (l, s) = setup("four_well", 40);
    let flows = s.saddle_flows(&l.model, &[0], &FlowOptions::default()).unwrap();
    let lb = flow_lower_bound(&s.chain, &flows, s.height()).unwrap();
    assert_eq!(lb.thetas.len(), 2);
    for t in &lb.thetas {
        assert!((t - 0.5).abs() < 1e-9);
    }
}

#[test]
fn pre_repair_flux_is_nearly_unitary() {
    let (l, s) = setup("four_well", 100);
    let flows = s.saddle_flows(&l.model, &[0], &FlowOptions::default()).unwrap();
    for f in &flows {
        assert!((f.raw_flux - 1.0).abs() <= 0.05, "raw flux {}", f.raw_flux);
    }
}

#[test]
fn conjugate_gradient_matches_dense() {
    for (name, n) in [("double_well", 50), ("tilted_double_well", 80), ("four_well", 12), ("two_saddle", 10)] {
        let (_, s) = setup(name, n);
        assert!(s.chain.sites().count() <= 2000, "{name}");
        let a = [0];
        let b = s.complement(&a);
        let cg = s.exact_capacity(&a, &b, &SolveOptions::default()).unwrap();
        let dense = s.exact_capacity(&a, &b, &SolveOptions { solver: SolverKind::Dense, ..Default::default() }).unwrap();
        let elim = s.exact_capacity(&a, &b, &SolveOptions { solver: SolverKind::Elimination, ..Default::default() }).unwrap();
        assert!((cg.energy / dense.energy - 1.0).abs() < 1e-8, "{name}");
        assert!((elim.energy / dense.energy - 1.0).abs() < 1e-10, "{name}");
        for site in s.chain.sites() {
            let (x, y, z) = (cg.value(site), dense.value(site), elim.value(site));
            assert!((x - y).abs() <= 1e-8, "{name} site {site}: {x} {y}");
            assert!((z - y).abs() <= 1e-10, "{name} site {site}: {z} {y}");
        }
    }
}

#[test]
fn elimination_keeps_symmetric_pairs_equal() {
    // Two wells stay free, where conductances span many orders of magnitude.
    let (_, s) = setup("four_well", 64);
    let opts = SolveOptions { solver: SolverKind::Elimination, ..Default::default() };
    let kappa = |b: usize| s.exact_capacity(&[0], &[b], &opts).unwrap().capacity(&s.chain).kappa(s.height());
    let (k1, k2) = (kappa(1), kappa(2));
    assert!((k1 / k2 - 1.0).abs() < 1e-12, "{k1} {k2}");
    assert!((k1 / 0.9428090415812422 - 1.0).abs() < 0.02);
}

#[test]
fn upper_bound_reports_short_cuts() {
    let (_, s) = setup("four_well", 32);
    let ub = test_function_upper_bound(&s.chain, &s.decomp, s.component, &[0], &s.sets, &UpperOptions { epsilon: Some(0.1) })
        .unwrap();
    assert!(ub.cut_sigmas.iter().all(|&c| c < 3.0));
    assert!(!ub.warnings.is_empty());
}

#[test]
fn overlapping_boxes_are_rejected() {
    let (_, s) = setup("four_well", 32);
    let err = test_function_upper_bound(&s.chain, &s.decomp, s.component, &[0], &s.sets, &UpperOptions { epsilon: Some(1.2) })
        .unwrap_err();
    assert!(err.to_string().contains("epsilon"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn dirichlet_principle_for_random_test_functions(seed in any::<u64>(), n in 20u32..40) {
        let (_, s) = setup("two_saddle", n);
        let a = s.sites_of(&[0]).unwrap();
        let b = s.sites_of(&s.complement(&[0])).unwrap();
        let sol = solve_equilibrium_potential(&s.chain, &a, &b, &SolveOptions::default()).unwrap();
        let mut rng = seed;
        let mut f = sol.potential();
        for site in s.chain.sites() {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let u = (rng >> 11) as f64 / (1u64 << 53) as f64;
            if sol.label[site] == 0 {
                f[site] = (f[site] + 0.2 * (u - 0.5)).clamp(0.0, 1.0);
            }
        }
        let e = dirichlet_energy(&s.chain, &f, sol.reference);
        prop_assert!(e >= sol.energy - 1e-10 * e);
    }

    #[test]
    fn thomson_principle_for_perturbed_flows(seed in any::<u64>(), eps in 0.15f64..0.35) {
        let (l, s) = setup("four_well", 32);
        let b = s.complement(&[0]);
        let exact = s.exact_capacity(&[0], &b, &SolveOptions::default()).unwrap().capacity(&s.chain).at(s.height());
        let flows = s.saddle_flows(&l.model, &[0], &FlowOptions { epsilon: Some(eps) }).unwrap();
        let mut f = flows[0].clone();
        let c = &s.chain;
        let mut rng = seed;
        for site in c.sites() {
            let (Some(r), Some(u)) = (c.neighbor(site, 0), c.neighbor(site, 2)) else { continue };
            if c.neighbor(r, 2).is_none() {
                continue;
            }
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let q = 1e-3 * ((rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * c.conductance(site, 0).min(1.0);
            f.flow[site * 2] += q;
            f.flow[r * 2 + 1] += q;
            f.flow[u * 2] -= q;
            f.flow[site * 2 + 1] -= q;
        }
        let lb = 1.0 / f.energy(c, s.height());
        prop_assert!(lb <= exact * (1.0 + 1e-10), "{lb} {exact}");
    }

    #[test]
    fn kappa_is_invariant_under_reference_shift(shift in -3.0f64..3.0) {
        let l = Landscape::builtin("double_well").unwrap();
        let base = l.chain(60).unwrap();
        let moved = base.with_reference(base.f_ref + shift).unwrap();
        let k0 = l.setup_on(base, &SetupChoice::default()).unwrap();
        let k1 = l.setup_on(moved, &SetupChoice::default()).unwrap();
        let e0 = k0.exact_capacity(&[0], &[1], &SolveOptions::default()).unwrap().capacity(&k0.chain).kappa(k0.height());
        let e1 = k1.exact_capacity(&[0], &[1], &SolveOptions::default()).unwrap().capacity(&k1.chain).kappa(k1.height());
        prop_assert!((e0 / e1 - 1.0).abs() < 1e-12, "{e0} {e1}");
    }
}
