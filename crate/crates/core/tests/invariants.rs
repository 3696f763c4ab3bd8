mod common;

use std::collections::BTreeSet;

use dsse_core::estimator::{estimate_constants, gradient, project, projected_step, wls_objective, Feedback};
use dsse_core::grid::{partition, Region};
use dsse_core::SensitivityModel;
use proptest::prelude::*;

use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lca_matches_path_oracle(size in 2usize..60, seed in 0u64..1000) {
        let m = single_phase(size, seed);
        let t = tree(&m);
        for i in 0..m.num_nodes() {
            for j in 0..m.num_nodes() {
                prop_assert_eq!(m.id(m.lca(i, j)).0, lca(&t, m.id(i).0, m.id(j).0));
            }
        }
    }

    #[test]
    fn common_path_matches_oracle(size in 2usize..40, seed in 0u64..1000) {
        let m = single_phase(size, seed);
        let t = tree(&m);
        for i in 1..m.num_nodes() {
            for j in 1..m.num_nodes() {
                let got: BTreeSet<u32> =
                    m.common_path(m.id(i), m.id(j)).unwrap().into_iter().map(|(_, to)| to.0).collect();
                prop_assert_eq!(got, common_lines(&t, m.id(i).0, m.id(j).0));
            }
        }
    }

    #[test]
    fn sensitivities_match_path_enumeration(size in 2usize..40, seed in 0u64..1000, three in any::<bool>()) {
        let m = if three { three_phase(size, seed) } else { single_phase(size, seed) };
        let sm = SensitivityModel::build_auto(&m);
        let (r, x) = sensitivity_oracle(&m);
        prop_assert!((sm.r() - r).amax() <= 1e-12);
        prop_assert!((sm.x() - x).amax() <= 1e-12);
    }

    #[test]
    fn partition_covers_every_node_once(size in 3usize..80, seed in 0u64..1000, k in 0usize..6) {
        let m = single_phase(size, seed);
        let roots = disjoint_roots(&m, k, seed);
        let p = partition(&m, &roots).unwrap();
        let mut seen = vec![0usize; m.num_nodes()];
        for a in p.areas() {
            prop_assert!(a.is_subtree);
            for &i in &a.nodes {
                seen[i] += 1;
                // Every area node descends from its root.
                prop_assert!(m.is_ancestor(a.root, i));
            }
            // Subtree closure: all descendants of the root are inside.
            for i in 0..m.num_nodes() {
                if m.is_ancestor(a.root, i) {
                    prop_assert!(a.nodes.contains(&i));
                }
            }
        }
        for &i in p.unclustered() {
            seen[i] += 1;
            prop_assert_eq!(p.region(i), Region::Unclustered);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(p.region(0), Region::Unclustered);
    }

    #[test]
    fn block_form_is_exact(size in 3usize..50, seed in 0u64..1000, k in 1usize..5, three in any::<bool>()) {
        let m = if three { three_phase(size, seed) } else { single_phase(size, seed) };
        let sm = SensitivityModel::build_auto(&m);
        let p = partition(&m, &disjoint_roots(&m, k, seed)).unwrap();
        let bf = sm.compress(&p).unwrap();
        let idx = sm.state_index();
        for a in 0..idx.len() {
            let (i, phi) = idx.slot(a);
            for b in 0..idx.len() {
                let (j, psi) = idx.slot(b);
                if let Some(blk) = bf.lookup(i, j) {
                    prop_assert_eq!(blk.r[phi.index()][psi.index()], sm.r()[(a, b)]);
                    prop_assert_eq!(blk.x[phi.index()][psi.index()], sm.x()[(a, b)]);
                }
            }
        }
    }

    #[test]
    fn single_phase_feeder_in_multi_phase_mode_is_bitwise_equal(size in 2usize..40, seed in 0u64..1000) {
        let m = single_phase(size, seed);
        let a = SensitivityModel::build_single_phase(&m).unwrap();
        let b = SensitivityModel::build_multi_phase(&m).unwrap();
        prop_assert_eq!(a.r(), b.r());
        prop_assert_eq!(a.x(), b.x());
    }

    #[test]
    fn gradient_matches_central_differences(size in 2usize..15, seed in 0u64..1000) {
        let m = single_phase(size, seed);
        let sm = SensitivityModel::build_single_phase(&m).unwrap();
        let ms = measurements(&m, 0.4, seed);
        let mut z = ms.z_hat();
        for (k, p) in z.p.iter_mut().enumerate() {
            *p += 0.003 * ((k as f64) * 0.7).sin();
        }
        let g = gradient(&ms, &sm, &z).unwrap().stacked();
        let fd = fd_gradient(|z| wls_objective(&ms, &sm, z).unwrap(), &z, 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn projection_is_idempotent(size in 2usize..40, seed in 0u64..1000, scale in 0.0f64..5.0) {
        let m = single_phase(size, seed);
        let ms = measurements(&m, 0.2, seed);
        let mut z = ms.z_hat().scaled(scale);
        project(&ms, &mut z);
        let once = z.clone();
        project(&ms, &mut z);
        prop_assert_eq!(&once, &z);
        for (k, b) in ms.omega.iter().enumerate() {
            prop_assert!(b.contains(z.p[k], z.q[k]));
        }
    }

    #[test]
    fn objective_never_increases_with_short_steps(size in 2usize..30, seed in 0u64..1000) {
        let m = single_phase(size, seed);
        let sm = SensitivityModel::build_single_phase(&m).unwrap();
        let ms = measurements(&m, 0.3, seed);
        let c = estimate_constants(&ms, &sm).unwrap();
        let eps = 1.0 / c.l;
        let mut z = ms.z_hat().scaled(0.0);
        project(&ms, &mut z);
        let mut obj = wls_objective(&ms, &sm, &z).unwrap();
        for _ in 0..50 {
            let v = Feedback::Linear.voltages(&sm, &z).unwrap();
            z = projected_step(&ms, &sm, &z, &v, eps);
            let next = wls_objective(&ms, &sm, &z).unwrap();
            prop_assert!(next <= obj + 1e-12 * obj.abs().max(1.0), "{} -> {}", obj, next);
            obj = next;
        }
    }
}
