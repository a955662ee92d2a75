//! Independent-oracle tests: each expected value here is produced by a
//! second computational route (eigendecomposition, brute-force
//! enumeration, untruncated quadrature, Monte Carlo with known limits)
//! and then compared against the implementation path.

use std::sync::Arc;
use wiplab::decomp::{
    build_decomposition, moment_diagnostics, variances, CorrWindow, DecompOptions,
};
use wiplab::grid::GridFunction;
use wiplab::maps::{MapFamily, Observable};
use wiplab::process::{sample_orbit, PathConvention, PathEnsemble, PolygonalPath};
use wiplab::rng::{SeedRecord, StreamDomain};
use wiplab::transfer::{fit_dec_rate, OperatorChain};
use wiplab::wasserstein::{empirical_wp_paths, path_sup_distance, OtMode, OtOptions};

/// The decay rate fitted from composed-operator norms approximates the
/// second eigenvalue modulus of the single Ulam matrix when the chain is
/// constant (powers of one matrix).
#[test]
fn dec_rate_matches_second_eigenvalue_oracle() {
    let n_cells = 64;
    let fam = Arc::new(MapFamily::beta_constant(1.5).unwrap());
    let chain = OperatorChain::build(fam.clone(), n_cells, 80).unwrap();

    // oracle: dense eigendecomposition of the one matrix
    let dense = chain.matrix(1).unwrap().to_dense();
    let m = nalgebra::DMatrix::from_row_slice(n_cells, n_cells, &dense);
    let mut moduli: Vec<f64> = m.complex_eigenvalues().iter().map(|c| c.norm()).collect();
    moduli.sort_by(|a, b| b.partial_cmp(a).unwrap());
    assert!((moduli[0] - 1.0).abs() < 1e-10, "leading eigenvalue");
    let lambda2 = moduli[1];

    let cos = GridFunction::from_fn(n_cells, |x| (2.0 * std::f64::consts::PI * x).cos());
    let cos = cos.shifted(-cos.integral());
    let lin = GridFunction::from_fn(n_cells, |x| x);
    let lin = lin.shifted(-lin.integral());
    let fit = fit_dec_rate(&chain, &[cos, lin]).unwrap();
    assert!(
        (fit.gamma_hat - lambda2).abs() < 0.05,
        "gamma {} vs |lambda_2| {}",
        fit.gamma_hat,
        lambda2
    );
    assert!(fit.dec_ok);
}

/// Windowed variance quadrature agrees with the untruncated (full-lag)
/// evaluation.
#[test]
fn windowed_variance_matches_full_window_oracle() {
    let n = 48;
    let fam = Arc::new(MapFamily::beta_sequence(2.0, 1.0, 0.5).unwrap());
    let chain = OperatorChain::build(fam, 512, n + 1).unwrap();
    let set = build_decomposition(
        &chain,
        Arc::new(Observable::cosine()),
        &DecompOptions {
            horizon: n,
            corr_window: CorrWindow::Auto { gamma_hat: 0.6 },
        },
    )
    .unwrap();
    let (full, _) = variances(&set, &chain, CorrWindow::Full).unwrap();
    for k in 0..=n {
        assert!(
            (full[k] - set.big_sigma2()[k]).abs() < 1e-9,
            "k={k}: {} vs {}",
            full[k],
            set.big_sigma2()[k]
        );
    }
}

/// Exact ensemble transport equals brute-force enumeration over all
/// matchings for small ensembles of genuine polygonal paths.
#[test]
fn path_transport_matches_brute_force_oracle() {
    let fam = Arc::new(MapFamily::beta_constant(2.0).unwrap());
    let chain = OperatorChain::build(fam, 128, 9).unwrap();
    let set = build_decomposition(
        &chain,
        Arc::new(Observable::cosine()),
        &DecompOptions {
            horizon: 8,
            corr_window: CorrWindow::Fixed(4),
        },
    )
    .unwrap();
    let k = 6;
    let mk_ensemble = |offset: u64| -> PathEnsemble {
        let paths: Vec<PolygonalPath> = (0..k)
            .map(|r| {
                let orbit = sample_orbit(
                    set.family(),
                    8,
                    SeedRecord::new(77, StreamDomain::Orbit, offset + r as u64),
                )
                .unwrap();
                wiplab::process::build_wn(&orbit, &set, PathConvention::Standard).unwrap()
            })
            .collect();
        PathEnsemble::from_paths(&paths).unwrap()
    };
    let a = mk_ensemble(0);
    let b = mk_ensemble(1000);
    let p = 2.0;
    let res = empirical_wp_paths(&a, &b, p, OtMode::Exact, &OtOptions::default()).unwrap();

    // oracle: enumerate all 720 permutations over pairwise sup distances
    let mut cost = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            cost[i * k + j] = path_sup_distance(&a.path(i), &b.path(j)).powf(p);
        }
    }
    let best = wiplab::wasserstein::brute_force_assignment(&cost, k);
    let oracle_value = (best / k as f64).powf(1.0 / p);
    assert!(
        (res.value - oracle_value).abs() < 1e-12,
        "{} vs {}",
        res.value,
        oracle_value
    );
}

/// Moment diagnostics on the doubling/cosine case: the coboundary
/// vanishes, so the corollary ratio is numerically zero, and the
/// finite-sample max-of-n inequality holds on the same sample.
#[test]
fn moment_diagnostics_doubling_oracle() {
    let n = 256;
    let fam = Arc::new(MapFamily::beta_constant(2.0).unwrap());
    let chain = OperatorChain::build(fam.clone(), 512, n + 1).unwrap();
    let set = build_decomposition(
        &chain,
        Arc::new(Observable::cosine()),
        &DecompOptions {
            horizon: n,
            corr_window: CorrWindow::Fixed(8),
        },
    )
    .unwrap();
    let orbits: Vec<_> = (0..1500u64)
        .map(|r| {
            sample_orbit(&fam, n, SeedRecord::new(5150, StreamDomain::Orbit, r)).unwrap()
        })
        .collect();
    let report = moment_diagnostics(&set, &chain, &orbits, 4.0).unwrap();
    assert!(report.corollary_ratio_max < 1e-9, "{}", report.corollary_ratio_max);
    assert!(report.max_of_n_ok);
    assert!(!report.low_power_warning);
    // Var(S_n Psi) stays bounded relative to 1 + Var(S_n vbar):
    // for cos, Psi = cos^2 has its own decorrelating dynamics.
    assert!(report.var_ratio < 10.0, "{}", report.var_ratio);
    // E max_k |S_k| / (1 + ||S_n||_2) is order one
    assert!(report.max_partial_ratio > 0.1 && report.max_partial_ratio < 10.0);
}

/// The 0.99 quantile of the Hölder seminorm over Brownian paths stays
/// finite and stable as the vertex grid refines.
#[test]
fn holder_quantile_stable_across_refinement() {
    let gamma = 0.4;
    let count = 2000;
    let q99 = |steps: usize, offset: u64| -> f64 {
        let e = wiplab::brownian::sample_bm(count, steps, 31338, offset).unwrap();
        let mut vals: Vec<f64> = (0..count)
            .map(|i| wiplab::brownian::holder_seminorm(&e.paths.path(i), gamma))
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals[(0.99 * count as f64) as usize]
    };
    let coarse = q99(256, 0);
    let fine = q99(1024, 10_000);
    assert!(coarse.is_finite() && fine.is_finite());
    // refinement exposes more pairs, so the quantile may grow slightly,
    // but it must stay within a stable band
    let ratio = fine / coarse;
    assert!(ratio > 0.85 && ratio < 1.35, "ratio {ratio}");
}

/// Verbatim-convention path values against hand-applied formula on a
/// short orbit.
#[test]
fn verbatim_formula_hand_check() {
    let fam = Arc::new(MapFamily::beta_constant(2.0).unwrap());
    let chain = OperatorChain::build(fam, 128, 5).unwrap();
    let set = build_decomposition(
        &chain,
        Arc::new(Observable::cosine()),
        &DecompOptions {
            horizon: 4,
            corr_window: CorrWindow::Fixed(4),
        },
    )
    .unwrap();
    let orbit = wiplab::process::sample_orbit_from(set.family(), 4, 0.1375).unwrap();
    let w = wiplab::process::build_wn(&orbit, &set, PathConvention::Verbatim).unwrap();
    let sig2 = set.big_sigma2();
    let total = sig2[4];
    let norm = total.sqrt();
    // hand evaluation of the displayed interpolation at a few t
    for &t in &[0.0, 0.3, 0.5, 0.77, 1.0] {
        let nn = wiplab::process::index_nn(t, sig2, 4).unwrap();
        let mut s = 0.0;
        for i in 0..nn {
            s += set.vbar_at(i, orbit.point(i));
        }
        let frac = if sig2[nn] > sig2[nn - 1] {
            (t * total - sig2[nn - 1]) / (sig2[nn] - sig2[nn - 1])
        } else {
            0.0
        };
        let expect = (s + frac * set.vbar_at(nn, orbit.point(nn))) / norm;
        assert!(
            (w.eval(t) - expect).abs() < 1e-12,
            "t={t}: {} vs {expect}",
            w.eval(t)
        );
    }
}
