use std::sync::Arc;

use mfdbsde::basis::{build_tree, NodeRef, ScenarioTree};
use mfdbsde::contraction::{c_beta, finite_condition};
use mfdbsde::picard::{project_children, solve_finite};
use mfdbsde::process::{norm_l2_beta, norm_s2_beta, triple_distance};
use mfdbsde::{builtin, AdaptedProcess, Builtin, JumpSpec, PicardConfig, SolutionTriple, TimeGrid};
use proptest::prelude::*;

fn tree_strategy() -> impl Strategy<Value = ScenarioTree> {
    (1usize..=5, 0.25f64..2.0, prop::collection::vec(0.0f64..1.0, 0..=2)).prop_map(|(n, t, lam)| {
        let dt = t / n as f64;
        let scale = 0.9 / (dt * lam.len().max(1) as f64);
        let lam: Vec<f64> = lam.iter().map(|l| l * scale.min(2.0)).collect();
        let marks: Vec<f64> = (0..lam.len()).map(|j| 1.0 + j as f64).collect();
        build_tree(TimeGrid::new(t, n, 0.0, 0.0).unwrap(), JumpSpec::new(marks, lam).unwrap()).unwrap()
    })
}

fn layer_values(tree: &ScenarioTree, layer: usize, seed: u64) -> Vec<f64> {
    (0..tree.layer_len(layer))
        .map(|k| (((k as u64 + 1) * 2654435761 + seed) % 1000) as f64 / 100.0 - 5.0)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layer_probabilities_sum_to_one(tree in tree_strategy()) {
        for i in 0..=tree.steps() {
            let s: f64 = tree.layer_probs(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tower_property(tree in tree_strategy(), seed in 0u64..1000) {
        let i = tree.steps() - 1;
        let next = layer_values(&tree, i + 1, seed);
        let cond: Vec<f64> = (0..tree.layer_len(i))
            .map(|k| tree.conditional_expectation(&next, NodeRef::new(i, k)).unwrap())
            .collect();
        let a = tree.layer_expectation(&next, i + 1).unwrap();
        let b = tree.layer_expectation(&cond, i).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn projection_recovers_spanned_children(
        tree in tree_strategy(),
        c in -3.0f64..3.0,
        z in -3.0f64..3.0,
        k in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let children: Vec<f64> = tree
            .branches()
            .iter()
            .map(|b| c + z * b.db + b.dn.iter().zip(&k).map(|(d, kj)| d * kj).sum::<f64>())
            .collect();
        let p = project_children(&tree, &children);
        prop_assert!((p.z - z).abs() < 1e-9);
        for (j, lam) in tree.jumps().intensities().iter().enumerate() {
            if *lam > 0.0 {
                prop_assert!((p.k[j] - k[j]).abs() < 1e-9);
            }
        }
        prop_assert!(p.residual < 1e-9);
    }

    #[test]
    fn norms_are_quadratic(tree in tree_strategy(), seed in 0u64..1000, c in -4.0f64..4.0, beta in 0.0f64..3.0) {
        let n = tree.steps();
        let y = AdaptedProcess::from_layers(1, (0..=n).map(|i| layer_values(&tree, i, seed)).collect());
        let s = norm_s2_beta(&tree, &y, beta);
        let cs = norm_s2_beta(&tree, &y.map(|v| c * v), beta);
        prop_assert!(s >= 0.0);
        prop_assert!((cs - c * c * s).abs() <= 1e-12 * s.max(1.0) * c * c + 1e-12);
        let z = y.truncated(n);
        prop_assert!(norm_l2_beta(&tree, &z, beta) <= (beta * tree.grid().horizon()).exp() * norm_l2_beta(&tree, &z, 0.0) * (1.0 + 1e-12));
    }

    #[test]
    fn zero_generator_gives_conditional_expectations(tree in tree_strategy(), seed in 0u64..1000) {
        let tree = Arc::new(tree);
        let n = tree.steps();
        let xi = layer_values(&tree, n, seed);
        let gen = builtin(&Builtin::Zero, tree.jumps()).unwrap();
        let sol = solve_finite(tree.clone(), &gen, &xi, &PicardConfig::default()).unwrap().solution;
        let mean = tree.layer_expectation(&xi, n).unwrap();
        prop_assert!((sol.y0() - mean).abs() < 1e-12);
        let zero = SolutionTriple::zeros(tree.clone());
        let d = triple_distance(&sol, &zero, 0.5).unwrap();
        prop_assert!((d - triple_distance(&zero, &sol, 0.5).unwrap()).abs() == 0.0);
    }

    #[test]
    fn condition_is_linear_in_constant(c in 0.0f64..5.0, beta in 0.01f64..10.0, t in 0.1f64..4.0, s in -1.0f64..0.0) {
        let one = finite_condition(beta, 1.0, t, s).unwrap();
        let v = finite_condition(beta, c, t, s).unwrap();
        prop_assert!((v - c * one).abs() <= 1e-12 * one.max(1.0) * c.max(1.0));
        prop_assert!(c_beta(beta, t).unwrap() >= 9.0);
    }
}
