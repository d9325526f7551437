use metastable::analysis::Landscape;
use metastable::potential::builtin_names;
use metastable::landscape::DepthPartition;
use metastable::reduction::{collapsed_conductance_cm, star_mesh_reduce, ReducedGraph};
use metastable::verify::{random_network, three_capacity_vs_star_mesh};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn models() -> Vec<Landscape> {
    builtin_names().into_iter().map(|n| Landscape::builtin(n).unwrap()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn symbolic_derivatives_match_finite_differences(which in 0usize..5, u in prop::collection::vec(0.05f64..0.95, 2)) {
        let ls = models();
        let m = &ls[which % ls.len()].model;
        let x: Vec<f64> = (0..m.dim).map(|j| m.domain.lo[j] + u[j] * (m.domain.hi[j] - m.domain.lo[j])).collect();
        let g = m.gradient(&x);
        let h = m.hessian(&x);
        let step = 1e-5;
        for j in 0..m.dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let fd = (m.value(&xp) - m.value(&xm)) / (2.0 * step);
            prop_assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + g[j].abs()), "{fd} {}", g[j]);
            let (gp, gm) = (m.gradient(&xp), m.gradient(&xm));
            for k in 0..m.dim {
                let fd = (gp[k] - gm[k]) / (2.0 * step);
                prop_assert!((fd - h[(k, j)]).abs() <= 1e-5 * (1.0 + h[(k, j)].abs()));
                prop_assert_eq!(h[(k, j)], h[(j, k)]);
            }
        }
    }

    #[test]
    fn conductances_are_symmetric(which in 0usize..5, n in 6u32..24) {
        let ls = models();
        let chain = ls[which % ls.len()].chain(n).unwrap();
        for (s, t, axis) in chain.edges() {
            let g = chain.conductance(s, axis);
            let forward = chain.weight(s) * chain.log_rate_sites(s, t).exp();
            let backward = chain.weight(t) * chain.log_rate_sites(t, s).exp();
            prop_assert!((forward - backward).abs() <= 1e-12 * g);
            prop_assert!((forward - g).abs() <= 1e-12 * g);
        }
    }

    #[test]
    fn three_capacity_matches_star_mesh(seed in any::<u64>(), n in 3usize..=8, k in 2usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng, n);
        let keep: Vec<usize> = (0..k.min(n)).collect();
        prop_assert!(three_capacity_vs_star_mesh(&net, &keep).unwrap() <= 1e-10);
    }

    #[test]
    fn collapsed_conductance_is_kron_reduction(seed in any::<u64>(), n in 3usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng, n);
        let keep: Vec<usize> = (n / 2..n).collect();
        let depth: Vec<f64> = (0..n).map(|a| if a < n / 2 { 1.0 } else { 2.0 }).collect();
        let p = DepthPartition {
            depths: vec![1.0, 2.0],
            classes: vec![(0..n / 2).collect(), keep.clone()],
            tails: vec![(0..n).collect(), keep.clone()],
        };
        let g = ReducedGraph::from_conductances(net.clone(), vec![1.0; n], depth, 3.0, 1);
        let cm = collapsed_conductance_cm(&g, &p, 1).unwrap();
        let red = star_mesh_reduce(&net, &keep).unwrap();
        let scale = red.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, &a) in keep.iter().enumerate() {
            for (j, &b) in keep.iter().enumerate() {
                if i != j {
                    prop_assert!((cm[(a, b)] - red[(i, j)]).abs() <= 1e-10 * scale);
                }
            }
        }
        prop_assert!((0..n).all(|a| cm[(a, a)] == 0.0));
    }
}
