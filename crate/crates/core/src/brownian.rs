//! Brownian path sampling on a uniform grid, plus the continuity and
//! marginal-normality diagnostics used to certify the target law.

use crate::error::{Error, Result};
use crate::process::{PathConvention, PathEnsemble, PolygonalPath};
use crate::rng::{standard_normal, SeedRecord, StreamDomain};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::ContinuousCDF;

/// Piecewise-linear Brownian paths on `m + 1` uniform grid points.
#[derive(Debug, Clone)]
pub struct BrownianEnsemble {
    pub paths: PathEnsemble,
    pub seed: SeedRecord,
}

/// Samples `count` Brownian paths: independent N(0, 1/m) increments,
/// cumulative sums, linear interpolation between grid points. Each path
/// draws from its own (master, Brownian, offset + index) stream, so the
/// ensemble is reproducible under any parallel schedule.
pub fn sample_bm(
    count: usize,
    grid_steps: usize,
    master_seed: u64,
    stream_offset: u64,
) -> Result<BrownianEnsemble> {
    if grid_steps < 1 {
        return Err(Error::InvalidConfig("BM grid needs >= 1 step".into()));
    }
    let m = grid_steps;
    let times: Vec<f64> = (0..=m).map(|j| j as f64 / m as f64).collect();
    let step = (1.0 / m as f64).sqrt();
    let rows: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng =
                SeedRecord::new(master_seed, StreamDomain::Brownian, stream_offset + i as u64)
                    .rng();
            let mut vals = Vec::with_capacity(m + 1);
            vals.push(0.0);
            let mut acc = 0.0;
            for _ in 0..m {
                acc += step * standard_normal(&mut rng);
                vals.push(acc);
            }
            vals
        })
        .collect();
    let mut values = Vec::with_capacity(count * (m + 1));
    for row in rows {
        values.extend_from_slice(&row);
    }
    Ok(BrownianEnsemble {
        paths: PathEnsemble::new(times, values, PathConvention::Standard),
        seed: SeedRecord::new(master_seed, StreamDomain::Brownian, stream_offset),
    })
}

/// Samples Brownian paths on an arbitrary strictly increasing grid
/// starting at 0 (increment variance = time step).
pub fn sample_bm_on_grid(
    count: usize,
    times: &[f64],
    master_seed: u64,
    stream_offset: u64,
) -> Result<BrownianEnsemble> {
    if times.len() < 2 || times[0] != 0.0 {
        return Err(Error::InvalidConfig(
            "BM grid must start at 0 with >= 2 points".into(),
        ));
    }
    if !times.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::InvalidConfig(
            "BM grid must be strictly increasing".into(),
        ));
    }
    let m = times.len() - 1;
    let steps: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]).sqrt()).collect();
    let rows: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng =
                SeedRecord::new(master_seed, StreamDomain::Brownian, stream_offset + i as u64)
                    .rng();
            let mut vals = Vec::with_capacity(m + 1);
            vals.push(0.0);
            let mut acc = 0.0;
            for s in &steps {
                acc += s * standard_normal(&mut rng);
                vals.push(acc);
            }
            vals
        })
        .collect();
    let mut values = Vec::with_capacity(count * (m + 1));
    for row in rows {
        values.extend_from_slice(&row);
    }
    Ok(BrownianEnsemble {
        paths: PathEnsemble::new(times.to_vec(), values, PathConvention::Standard),
        seed: SeedRecord::new(master_seed, StreamDomain::Brownian, stream_offset),
    })
}

/// Empirical Hölder seminorm over the vertex grid:
/// `max_{s != t} |B(s) - B(t)| / |s - t|^gamma`.
pub fn holder_seminorm(path: &PolygonalPath, gamma: f64) -> f64 {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma in (0, 1]");
    let t = path.times();
    let v = path.values();
    let mut best = 0.0f64;
    for i in 0..t.len() {
        for j in (i + 1)..t.len() {
            let r = (v[j] - v[i]).abs() / (t[j] - t[i]).powf(gamma);
            best = best.max(r);
        }
    }
    best
}

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    statrs::distribution::Normal::new(0.0, 1.0)
        .expect("unit normal")
        .cdf(x)
}

/// Kolmogorov distance `sup_x |F_emp(x) - F(x)|` against a reference CDF,
/// evaluated at the sorted sample points (where the sup is attained).
pub fn kolmogorov_distance(samples: &[f64], reference: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("empty sample".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = reference(x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    Ok(d)
}

/// Summary statistics used by the verification suite.
#[derive(Debug, Clone, Serialize)]
pub struct BmDiagnostics {
    pub var_at_one: f64,
    pub cov_half_one: f64,
    pub disjoint_increment_corr: f64,
}

pub fn bm_diagnostics(ensemble: &BrownianEnsemble) -> BmDiagnostics {
    let paths = &ensemble.paths;
    let m = paths.grid_len() - 1;
    let count = paths.count();
    let (mut var1, mut cov) = (0.0, 0.0);
    // increments over [0, 1/2) and [1/2, 1)
    let half = m / 2;
    let (mut s_a, mut s_b, mut s_ab, mut s_a2, mut s_b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..count {
        let v = paths.path_values(i);
        let b1 = v[m];
        let bh = v[half];
        var1 += b1 * b1;
        cov += bh * b1;
        let a = bh;
        let b = b1 - bh;
        s_a += a;
        s_b += b;
        s_ab += a * b;
        s_a2 += a * a;
        s_b2 += b * b;
    }
    let n = count as f64;
    let cov_ab = s_ab / n - (s_a / n) * (s_b / n);
    let var_a = s_a2 / n - (s_a / n).powi(2);
    let var_b = s_b2 / n - (s_b / n).powi(2);
    BmDiagnostics {
        var_at_one: var1 / n,
        cov_half_one: cov / n,
        disjoint_increment_corr: cov_ab / (var_a * var_b).sqrt(),
    }
}
