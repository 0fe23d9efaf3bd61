use proptest::prelude::*;
use rand::Rng;
use rwlab::entropy::{check_lemma_xy, check_mean_inequality, check_tv_delta, JointTable};
use rwlab::environment::{
    ball, gen_balanced, gen_kesten_tree_with_spine, gen_percolation, gen_random_conductance, VertexId,
};
use rwlab::harmonic::{check_reverse_poincare, dirichlet_solve};
use rwlab::rng::stream;
use rwlab::walk::{empirical_law, propagate, propagate_unchecked, DistributionVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn law(weights: &[f64]) -> DistributionVector {
    let total: f64 = weights.iter().sum();
    DistributionVector::from_dense(&weights.iter().map(|w| w / total).collect::<Vec<_>>())
}

/// Weights with a good share of exact zeros.
fn sparse_weights(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 1e-9..1.0f64, 0.0..1e-6f64], len)
        .prop_filter("some mass", |w| w.iter().sum::<f64>() > 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tv_is_dominated_by_delta((a, b) in (1usize..=64).prop_flat_map(|n| (sparse_weights(n), sparse_weights(n)))) {
        let r = check_tv_delta(&law(&a), &law(&b));
        prop_assert!(r.is_ok(), "{r:?}");
    }

    #[test]
    fn mean_difference_is_controlled(
        (a, b, f) in (1usize..=64).prop_flat_map(|n| (sparse_weights(n), sparse_weights(n), prop::collection::vec(-1e3..1e3f64, n)))
    ) {
        let r = check_mean_inequality(&law(&a), &law(&b), |v| f[v as usize]);
        prop_assert!(r.is_ok(), "{r:?}");
    }

    #[test]
    fn lemma_xy_holds((rows, cols, q) in (1usize..=8, 1usize..=8).prop_flat_map(|(r, c)| (Just(r), Just(c), sparse_weights(r * c)))) {
        let total: f64 = q.iter().sum();
        let table = JointTable::new(rows, cols, q.iter().map(|v| v / total).collect()).unwrap();
        let r = check_lemma_xy(&table);
        prop_assert!(r.is_ok(), "{r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn reverse_poincare_on_conductance_balls(seed in any::<u64>(), n in 1usize..6) {
        let env = gen_random_conductance(2, 14, 0.5, seed).unwrap();
        let mut rng = stream(seed, "boundary", 0);
        let data: Vec<f64> = (0..env.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let domain = ball(&env, env.root(), 2 * n);
        let h = dirichlet_solve(&env, &domain, |v| data[v as usize], 1e-12).unwrap();
        let s = check_reverse_poincare(&env, &h, env.root(), n).unwrap();
        prop_assert!(s.lhs <= s.rhs * (1.0 + 1e-9));
    }

    #[test]
    fn chapman_kolmogorov(seed in any::<u64>(), m in 0usize..8, k in 0usize..8) {
        let env = gen_percolation(2, 24, 0.6, seed).unwrap();
        let start = DistributionVector::point(env.root());
        let whole = propagate(&env, &start, m + k).unwrap();
        let split = propagate(&env, &propagate(&env, &start, m).unwrap(), k).unwrap();
        for (v, p) in whole.iter() {
            prop_assert!((p - split.get(v)).abs() < 1e-15);
        }
        prop_assert_eq!(whole.len(), split.len());
    }

    #[test]
    fn detailed_balance_of_kernels(seed in any::<u64>(), n in 1usize..10) {
        let env = gen_random_conductance(2, 10, 0.3, seed).unwrap();
        let x = env.root();
        let from_x = propagate_unchecked(&env, &DistributionVector::point(x), n);
        for (y, p) in from_x.iter() {
            let back = propagate_unchecked(&env, &DistributionVector::point(y), n).get(x);
            let (a, b) = (env.vertex_weight(x) * p, env.vertex_weight(y) * back);
            prop_assert!((a - b).abs() <= 1e-13 * a.max(b));
        }
    }
}

#[test]
fn generator_invariants_over_many_seeds() {
    for seed in 0..100 {
        let perc = gen_percolation(2, 12, 0.55, seed).unwrap();
        perc.validate().unwrap();
        assert!(perc.edges().all(|(_, _, w)| w == 1.0));
        let cond = gen_random_conductance(2, 6, 0.4, seed).unwrap();
        cond.validate().unwrap();
        assert!(cond.edges().all(|(_, _, w)| (0.4..=2.5).contains(&w)));
        let bal = gen_balanced(2, 6, seed).unwrap();
        bal.validate().unwrap();
        // balanced: zero drift on the 13-periodic torus
        let side = 13i64;
        for x in 0..bal.len() as VertexId {
            let cx = bal.coords(x).unwrap();
            let mut drift = [0.0f64; 2];
            for (y, p) in bal.arcs(x) {
                let cy = bal.coords(y).unwrap();
                for i in 0..2 {
                    let d = (cy[i] - cx[i] + side + 1).rem_euclid(side) - 1;
                    drift[i] += p * d as f64;
                }
            }
            assert!(drift.iter().all(|d| d.abs() < 1e-15), "{drift:?}");
        }
    }
}

#[test]
fn monte_carlo_matches_exact_law() {
    let env = gen_random_conductance(2, 10, 0.5, 2).unwrap();
    let n = 6;
    let exact = propagate(&env, &DistributionVector::point(env.root()), n).unwrap();
    let paths = 200_000;
    let sampled = empirical_law(&env, env.root(), n, paths, 17);
    // Pearson statistic over cells with expected count ≥ 5
    let (mut stat, mut cells) = (0.0, 0usize);
    let mut rest = (0.0, 0.0);
    for (v, p) in exact.iter() {
        let expected = p * paths as f64;
        let observed = sampled.get(v) * paths as f64;
        if expected >= 5.0 {
            stat += (observed - expected).powi(2) / expected;
            cells += 1;
        } else {
            rest.0 += expected;
            rest.1 += observed;
        }
    }
    if rest.0 > 0.0 {
        stat += (rest.1 - rest.0).powi(2) / rest.0;
        cells += 1;
    }
    let p_value = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat);
    assert!(p_value > 1e-3, "chi-square {stat} on {cells} cells, p = {p_value}");
}

#[test]
fn kesten_offspring_laws() {
    let pmf = [0.3, 0.45, 0.2, 0.05];
    let depth = 12;
    let mut spine_counts = [0u64; 4];
    let mut other_counts = [0u64; 4];
    for seed in 0..300 {
        let tree = gen_kesten_tree_with_spine(&pmf, depth, seed).unwrap();
        let env = &tree.env;
        let dist = rwlab::environment::distances_from(env, 0);
        for v in 0..env.len() as VertexId {
            if dist[v as usize] as usize >= depth {
                continue;
            }
            let children = env.neighbors(v).iter().filter(|&&w| w > v).count();
            if tree.spine.contains(&v) {
                spine_counts[children] += 1;
            } else {
                other_counts[children] += 1;
            }
        }
    }
    let biased: Vec<f64> = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).collect();
    for (counts, probs) in [(&spine_counts, biased.as_slice()), (&other_counts, pmf.as_slice())] {
        let total: u64 = counts.iter().sum();
        let mut stat = 0.0;
        let mut cells = 0;
        for (c, p) in counts.iter().zip(probs) {
            if *p == 0.0 {
                assert_eq!(*c, 0);
                continue;
            }
            let e = p * total as f64;
            stat += (*c as f64 - e).powi(2) / e;
            cells += 1;
        }
        let p_value = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat);
        assert!(p_value > 1e-3, "{counts:?} vs {probs:?}: p = {p_value}");
    }
}

#[test]
fn million_paths_second_moment_on_z2() {
    let env = rwlab::environment::gen_lattice(2, 20, false).unwrap();
    let n = 10;
    let paths = 1_000_000;
    let mut rng = stream(5, "srw", 0);
    let origin = env.coords(env.root()).unwrap().to_vec();
    let mut acc = 0.0;
    for _ in 0..paths {
        let end = *rwlab::walk::sample_path_with(&env, env.root(), n, &mut rng).last().unwrap();
        let c = env.coords(end).unwrap();
        acc += c.iter().zip(&origin).map(|(a, b)| ((a - b) * (a - b)) as f64).sum::<f64>();
    }
    let m = acc / paths as f64;
    // |X_n|² has variance below 2n² here, so 5 standard errors ≈ 0.07
    assert!((m - n as f64).abs() < 0.07, "{m}");
}
