//! Property tests for spec invariants that hold over whole input classes.

use proptest::prelude::*;
use std::sync::Arc;
use wiplab::grid::GridFunction;
use wiplab::maps::MapFamily;
use wiplab::process::{g_transform, index_nn, PathConvention, PolygonalPath};
use wiplab::transfer::{ulam_discretize, OperatorChain};
use wiplab::wasserstein::{
    brute_force_assignment, levy_prokhorov_bound, path_sup_distance, solve_assignment, wp_1d,
};

fn arb_beta() -> impl Strategy<Value = f64> {
    1.05f64..4.0
}

fn arb_path(max_m: usize) -> impl Strategy<Value = PolygonalPath> {
    (2..max_m)
        .prop_flat_map(|m| {
            (
                proptest::collection::vec(0.01f64..1.0, m - 1),
                proptest::collection::vec(-2.0f64..2.0, m),
            )
        })
        .prop_map(|(gaps, vals)| {
            let total: f64 = gaps.iter().sum::<f64>();
            let mut t = 0.0;
            let mut times = vec![0.0];
            for g in &gaps[..gaps.len() - 1] {
                t += g / total;
                times.push(t);
            }
            times.push(1.0);
            PolygonalPath::new(times, vals, PathConvention::Standard)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ulam_columns_are_stochastic(beta in arb_beta(), n_pow in 4u32..8) {
        let n = 1usize << n_pow;
        let fam = MapFamily::beta_constant(beta).unwrap();
        let m = ulam_discretize(&fam, 1, n).unwrap();
        prop_assert!(m.max_mass_defect() < 1e-12);
        let one = m.apply(&GridFunction::one(n));
        prop_assert!((one.integral() - 1.0).abs() < 1e-12);
        prop_assert!(one.min_value() >= 0.0);
    }

    #[test]
    fn preimages_roundtrip_and_sorted(beta in arb_beta(), y in 0.0f64..1.0) {
        let fam = MapFamily::beta_constant(beta).unwrap();
        let inv = fam.branch_inverses(1, y).unwrap();
        for w in inv.windows(2) {
            prop_assert!(w[0].0 < w[1].0);
        }
        for (x, d) in &inv {
            prop_assert!((fam.eval(1, *x).unwrap() - y).abs() <= 1e-12);
            prop_assert!((d - beta).abs() < 1e-12);
        }
        // pointwise transfer of 1: between 1/beta and (branches)/beta
        let sum: f64 = inv.iter().map(|(_, d)| 1.0 / d).sum();
        prop_assert!(sum >= 0.0 && sum <= (beta.ceil() + 1.0) / beta);
    }

    #[test]
    fn chain_preserves_integral_and_positivity(
        beta in arb_beta(),
        len in 1usize..6,
        coeff in -1.0f64..1.0,
    ) {
        let fam = Arc::new(MapFamily::beta_constant(beta).unwrap());
        let chain = OperatorChain::build(fam, 64, len).unwrap();
        let f = GridFunction::from_fn(64, |x| 1.0 + coeff * (5.0 * x).sin());
        let g = chain.apply_chain(0, len, &f).unwrap();
        prop_assert!((g.integral() - f.integral()).abs() <= 1e-10 * (1.0 + f.sup_norm()));
        if f.min_value() >= 0.0 {
            prop_assert!(g.min_value() >= -1e-12);
        }
    }

    #[test]
    fn path_eval_reproduces_vertices(path in arb_path(24)) {
        for (t, v) in path.times().iter().zip(path.values()) {
            prop_assert_eq!(path.eval(*t), *v);
        }
    }

    #[test]
    fn sup_distance_is_a_metric(a in arb_path(16), b in arb_path(16), c in arb_path(16)) {
        let dab = path_sup_distance(&a, &b);
        let dba = path_sup_distance(&b, &a);
        prop_assert!((dab - dba).abs() < 1e-15);
        prop_assert_eq!(path_sup_distance(&a, &a), 0.0);
        let dac = path_sup_distance(&a, &c);
        let dbc = path_sup_distance(&b, &c);
        prop_assert!(dac <= dab + dbc + 1e-12);
    }

    #[test]
    fn g_transform_involution_and_lipschitz(
        a in arb_path_zero_based(16),
        b in arb_path_zero_based(16),
    ) {
        let gga = g_transform(&g_transform(&a));
        for (x, y) in gga.values().iter().zip(a.values()) {
            prop_assert!((x - y).abs() < 1e-14);
        }
        let d = path_sup_distance(&a, &b);
        let dg = path_sup_distance(&g_transform(&a), &g_transform(&b));
        prop_assert!(dg <= 2.0 * d + 1e-12);
    }

    #[test]
    fn wp_1d_is_a_metric_on_samples(
        xs in proptest::collection::vec(-3.0f64..3.0, 8),
        ys in proptest::collection::vec(-3.0f64..3.0, 8),
        zs in proptest::collection::vec(-3.0f64..3.0, 8),
        p in 1.0f64..4.0,
    ) {
        prop_assert_eq!(wp_1d(&xs, &xs, p).unwrap(), 0.0);
        let dxy = wp_1d(&xs, &ys, p).unwrap();
        let dyx = wp_1d(&ys, &xs, p).unwrap();
        prop_assert!((dxy - dyx).abs() < 1e-14);
        let dxz = wp_1d(&xs, &zs, p).unwrap();
        let dyz = wp_1d(&ys, &zs, p).unwrap();
        prop_assert!(dxz <= dxy + dyz + 1e-12);
    }

    #[test]
    fn assignment_optimality(k in 2usize..6, seed in 0u64..5000) {
        use rand::Rng;
        let mut rng = wiplab::rng::stream_rng(seed, wiplab::rng::StreamDomain::Diagnostics, 0);
        let cost: Vec<f64> = (0..k * k).map(|_| rng.gen::<f64>()).collect();
        let (asg, total) = solve_assignment(&cost, k);
        // assignment is a permutation
        let mut seen = vec![false; k];
        for &j in &asg {
            prop_assert!(!seen[j]);
            seen[j] = true;
        }
        prop_assert!((total - brute_force_assignment(&cost, k)).abs() < 1e-12);
    }

    #[test]
    fn index_nn_is_the_stated_minimum(
        incs in proptest::collection::vec(0.0f64..1.0, 1..20),
        t in 0.0f64..1.0,
    ) {
        let mut sig2 = vec![0.0];
        for i in &incs {
            sig2.push(sig2.last().unwrap() + i);
        }
        let n = incs.len();
        prop_assume!(sig2[n] > 0.0);
        let k = index_nn(t, &sig2, n).unwrap();
        prop_assert!(k >= 1 && k <= n);
        if t * sig2[n] <= sig2[n] {
            // k satisfies the inequality unless t = 1 hits the cap
            if k < n || t * sig2[n] <= sig2[n] {
                prop_assert!(t * sig2[n] <= sig2[k] + 1e-12);
            }
        }
        if k > 1 {
            prop_assert!(t * sig2[n] > sig2[k - 1]);
        }
    }

    #[test]
    fn levy_prokhorov_monotone(w1 in 0.0f64..2.0, w2 in 0.0f64..2.0, p in 1.0f64..4.0) {
        let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
        prop_assert!(levy_prokhorov_bound(lo, p) <= levy_prokhorov_bound(hi, p) + 1e-15);
    }
}

/// Paths with u(0) = 0, the class the reversal transform acts on.
fn arb_path_zero_based(max_m: usize) -> impl Strategy<Value = PolygonalPath> {
    arb_path(max_m).prop_map(|p| {
        let times = p.times().to_vec();
        let mut values = p.values().to_vec();
        values[0] = 0.0;
        PolygonalPath::new(times, values, p.convention())
    })
}
