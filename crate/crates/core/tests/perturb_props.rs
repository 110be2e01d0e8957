mod common;

use std::collections::BTreeSet;

use common::{check_properties, enumeration_graphs, random_graph, sorted_topk};
use projrank::perturb::{binomial, operation_elements, AllowedOps};
use projrank::{apply, enumerate_space, project_topk, similarity_check, size_of, BudgetedSpace, Tensor2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn algebra_laws_hold(seed in any::<u64>(), n in 2usize..=10, p in 0.0f64..1.0, d in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, seed, n, p, d);
        if let Err(msg) = check_properties(&mut rng, &g) {
            prop_assert!(false, "{}", msg);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn topk_matches_full_sort(seed in any::<u64>(), n in 2usize..=9, k in 0usize..=6, coarse in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 0, n, 0.4, 1);
        // Coarse scores force ties, exercising the tie-break.
        let scores = Tensor2::from_fn(n, n, |_, _| {
            let v: f64 = rand::Rng::random(&mut rng);
            if coarse { (v * 4.0).floor() } else { v }
        });
        let top = project_topk(&scores, &g, k).unwrap();
        let chosen: BTreeSet<_> = top.selected.iter().copied().collect();
        prop_assert_eq!(chosen, sorted_topk(&scores, &g, k));
        let candidates = projrank::candidate_add_edges(&g).len();
        prop_assert_eq!(top.budget_used(), k.min(candidates));
        prop_assert_eq!(size_of(&top.perturbation).unwrap(), k.min(candidates));
        let g_hat = apply(&g, &top.perturbation).unwrap();
        prop_assert!(similarity_check(&g_hat, &g, k).unwrap());
    }

    #[test]
    fn topk_is_invariant_under_increasing_maps(seed in any::<u64>(), n in 2usize..=9, k in 0usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, 0, n, 0.3, 1);
        let scores = Tensor2::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
        let base = project_topk(&scores, &g, k).unwrap().selected;
        for f in [|x: f64| x.exp(), |x: f64| 3.0 * x + 1.0, |x: f64| x.powi(3)] {
            // Symmetrise first so the transform acts on the ranked quantity.
            let sym = Tensor2::from_fn(n, n, |i, j| f(0.5 * (scores[(i, j)] + scores[(j, i)])));
            prop_assert_eq!(&project_topk(&sym, &g, k).unwrap().selected, &base);
        }
    }
}

#[test]
fn enumeration_sizes_are_binomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let allowed = [
        AllowedOps::ADD_ONLY,
        AllowedOps { add_edge: false, remove_edge: true, flip_feature: false },
        AllowedOps { add_edge: true, remove_edge: true, flip_feature: false },
    ];
    let mut checked = 0;
    for g in enumeration_graphs(&mut rng) {
        for ops in allowed {
            let e = operation_elements(&g, ops).len();
            if e > 12 {
                continue;
            }
            for k in 0..=3 {
                let space = BudgetedSpace { base: g.id(), budget: k, allowed_ops: ops };
                let mut seen = BTreeSet::new();
                for (_, dg) in enumerate_space(&space, &g).unwrap() {
                    assert_eq!(size_of(&dg).unwrap(), k);
                    seen.insert(format!("{dg:?}"));
                }
                assert_eq!(seen.len() as u128, binomial(e, k), "E={e} k={k}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 40);
}
