//! Orbits and the variance-time polygonal processes built from them.
//!
//! `W_n` interpolates the normalized partial sums of the centered
//! observables at the variance times `Sigma_k^2 / Sigma_n^2`; `M_n` does
//! the same for the martingale part with `sigma^2`; `X_n` runs the
//! martingale difference array backwards in time against its own
//! quadratic variation. Two vertex conventions are implemented and tagged on every
//! path: `Standard` places vertices at `(Sigma_k^2/Sigma_n^2, S_k/Sigma_n)`
//! so the path starts at 0, while `Verbatim` realizes the displayed
//! interpolation formula literally (the fractional term uses the
//! observable at index `N_n(t)`, so the path starts at `vbar_0(x_0)/Sigma_n`
//! and its right endpoint consumes observable index `n`).

use crate::decomp::{DecompositionSet, SegmentVariance};
use crate::error::{Error, Result};
use crate::maps::MapFamily;
use crate::rng::{uniform01, SeedRecord, StreamDomain};
use crate::transfer::OperatorChain;
use rand::RngCore;
use serde::Serialize;
use std::io::{Read, Write};

/// One sampled trajectory `x_0, ..., x_n` with `x_k = T_k(x_{k-1})`.
#[derive(Debug, Clone)]
pub struct Orbit {
    points: Vec<f64>,
    seed: Option<SeedRecord>,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> f64 {
        self.points[k]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn seed(&self) -> Option<SeedRecord> {
        self.seed
    }
}

/// Samples an orbit of length `n + 1` with `x_0` uniform under Lebesgue.
///
/// For the exact doubling family the orbit is driven by a sliding window
/// over an i.i.d. bit stream: `x_{k+1}` equals `2 x_k mod 1` up to the
/// freshly injected low-order bit (2^-53), which keeps the trajectory
/// ergodic instead of collapsing to 0 in 53 iterations of exact dyadic
/// arithmetic.
pub fn sample_orbit(family: &MapFamily, n: usize, seed: SeedRecord) -> Result<Orbit> {
    let mut rng = seed.rng();
    let orbit = if family.is_exact_doubling() {
        let mut points = Vec::with_capacity(n + 1);
        const MASK: u64 = (1u64 << 53) - 1;
        let mut window = rng.next_u64() & MASK;
        let mut reservoir = rng.next_u64();
        let mut reservoir_left = 64u32;
        points.push(window as f64 / (1u64 << 53) as f64);
        for _ in 0..n {
            let bit = reservoir & 1;
            reservoir >>= 1;
            reservoir_left -= 1;
            if reservoir_left == 0 {
                reservoir = rng.next_u64();
                reservoir_left = 64;
            }
            window = ((window << 1) & MASK) | bit;
            points.push(window as f64 / (1u64 << 53) as f64);
        }
        Orbit {
            points,
            seed: Some(seed),
        }
    } else {
        let x0 = uniform01(&mut rng);
        sample_orbit_from(family, n, x0)?
    };
    Ok(Orbit {
        seed: Some(seed),
        ..orbit
    })
}

/// Deterministic orbit from a forced initial point.
pub fn sample_orbit_from(family: &MapFamily, n: usize, x0: f64) -> Result<Orbit> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(Error::OutOfDomain { x: x0 });
    }
    let mut points = Vec::with_capacity(n + 1);
    points.push(x0);
    let mut x = x0;
    for k in 1..=n {
        x = family.eval(k, x)?;
        points.push(x);
    }
    Ok(Orbit { points, seed: None })
}

/// Vertex convention tag carried by every polygonal path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PathConvention {
    Standard,
    Verbatim,
}

/// A continuous piecewise-linear path on [0, 1].
#[derive(Debug, Clone)]
pub struct PolygonalPath {
    times: Vec<f64>,
    values: Vec<f64>,
    convention: PathConvention,
}

impl PolygonalPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>, convention: PathConvention) -> Self {
        assert_eq!(times.len(), values.len(), "vertex count mismatch");
        assert!(!times.is_empty(), "path needs at least one vertex");
        assert!(
            times.windows(2).all(|w| w[1] > w[0]),
            "vertex times must be strictly increasing"
        );
        Self {
            times,
            values,
            convention,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn convention(&self) -> PathConvention {
        self.convention
    }

    pub fn vertex_count(&self) -> usize {
        self.times.len()
    }

    /// Linear interpolation; clamped outside the vertex range.
    pub fn eval(&self, t: f64) -> f64 {
        let ts = &self.times;
        if t <= ts[0] {
            return self.values[0];
        }
        let m = ts.len();
        if t >= ts[m - 1] {
            return self.values[m - 1];
        }
        let i = match ts.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.values[i],
            Err(i) => i - 1,
        };
        let w = (t - ts[i]) / (ts[i + 1] - ts[i]);
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }
}

/// `N_n(t) = min{1 <= k <= n : t Sigma_n^2 <= Sigma_k^2}`.
pub fn index_nn(t: f64, sigma2: &[f64], n: usize) -> Result<usize> {
    let total = sigma2[n];
    if total <= 0.0 {
        return Err(Error::DegenerateVariance { n });
    }
    let target = t * total;
    for k in 1..=n {
        if target <= sigma2[k] {
            return Ok(k);
        }
    }
    Ok(n)
}

/// Partial sums `S_k = Σ_{i<k} vbar_i(x_i)` for `k = 0..=n+1`; the last
/// entry consumes observable index `n` (needed by the verbatim path).
fn partial_sums_vbar(orbit: &Orbit, set: &DecompositionSet, n: usize) -> Vec<f64> {
    assert!(orbit.len() >= n + 1, "orbit shorter than horizon");
    let mut sums = Vec::with_capacity(n + 2);
    sums.push(0.0);
    let mut acc = 0.0;
    for k in 0..=n {
        acc += set.vbar_at(k, orbit.point(k));
        sums.push(acc);
    }
    sums
}

/// Partial sums of `psi_k(x_k)`, `k = 0..=n`; `psi_n` composes through
/// the map since the orbit ends at `x_n`.
fn psi_values(orbit: &Orbit, set: &DecompositionSet) -> Result<Vec<f64>> {
    let n = set.horizon();
    assert!(orbit.len() >= n + 1, "orbit shorter than horizon");
    let mut vals = Vec::with_capacity(n + 1);
    for k in 0..n {
        vals.push(set.psi_at(k, orbit.point(k), orbit.point(k + 1)));
    }
    let x_next = set.family().eval(n + 1, orbit.point(n))?;
    vals.push(set.psi_at(n, orbit.point(n), x_next));
    Ok(vals)
}

/// Builds a polygonal path from variance times and cumulative sums,
/// dropping vertices whose time increment is zero (keeping the earliest,
/// matching the min in the time-index definition).
fn polygonal_from(
    variance: &[f64],
    sums: &[f64],
    norm: f64,
    offset: usize,
    convention: PathConvention,
) -> PolygonalPath {
    let total = *variance.last().unwrap();
    let mut times = Vec::with_capacity(variance.len());
    let mut values = Vec::with_capacity(variance.len());
    for (k, &v) in variance.iter().enumerate() {
        let t = v / total;
        if let Some(&last) = times.last() {
            if t <= last {
                continue;
            }
        }
        times.push(t);
        values.push(sums[k + offset] / norm);
    }
    PolygonalPath::new(times, values, convention)
}

/// The rescaled partial-sum process of the centered observables.
pub fn build_wn(
    orbit: &Orbit,
    set: &DecompositionSet,
    convention: PathConvention,
) -> Result<PolygonalPath> {
    build_wn_at(orbit, set, set.horizon(), convention)
}

/// `W_n` at a horizon at or below the set's own: prefixes of the
/// decomposition tables are the decomposition at the smaller horizon.
pub fn build_wn_at(
    orbit: &Orbit,
    set: &DecompositionSet,
    n: usize,
    convention: PathConvention,
) -> Result<PolygonalPath> {
    assert!(n <= set.horizon(), "horizon exceeds the decomposition");
    let sig2 = &set.big_sigma2()[..=n];
    if sig2[n] <= 0.0 {
        return Err(Error::DegenerateVariance { n });
    }
    let norm = sig2[n].sqrt();
    let sums = partial_sums_vbar(orbit, set, n);
    Ok(match convention {
        PathConvention::Standard => {
            polygonal_from(sig2, &sums, norm, 0, PathConvention::Standard)
        }
        // Literal formula: at t = Sigma_k^2/Sigma_n^2 the fractional
        // coefficient is 1, so the vertex value is S_{k+1}/Sigma_n and the
        // path starts at S_1/Sigma_n.
        PathConvention::Verbatim => {
            polygonal_from(sig2, &sums, norm, 1, PathConvention::Verbatim)
        }
    })
}

/// The martingale analogue of `W_n`, normalized by `sigma_n`.
pub fn build_mn(
    orbit: &Orbit,
    set: &DecompositionSet,
    convention: PathConvention,
) -> Result<PolygonalPath> {
    let n = set.horizon();
    let sig2 = set.sigma2();
    if sig2[n] <= 0.0 {
        return Err(Error::DegenerateVariance { n });
    }
    let norm = sig2[n].sqrt();
    let psi = psi_values(orbit, set)?;
    let mut sums = Vec::with_capacity(n + 2);
    sums.push(0.0);
    let mut acc = 0.0;
    for &p in &psi {
        acc += p;
        sums.push(acc);
    }
    Ok(match convention {
        PathConvention::Standard => {
            polygonal_from(&sig2[..=n], &sums, norm, 0, PathConvention::Standard)
        }
        PathConvention::Verbatim => {
            polygonal_from(&sig2[..=n], &sums, norm, 1, PathConvention::Verbatim)
        }
    })
}

/// Quadratic variation `V_{n,l} = (1/sigma_n^2) Σ_{j<=l}
/// Q_{n-j+1}(psi_{n-j}^2)(x_{n-j+1})`, `l = 0..=n`. Nondecreasing.
pub fn quadratic_variation(orbit: &Orbit, set: &DecompositionSet) -> Result<Vec<f64>> {
    let n = set.horizon();
    assert!(orbit.len() >= n + 1, "orbit shorter than horizon");
    let sigma_n2 = set.sigma2()[n];
    if sigma_n2 <= 0.0 {
        return Err(Error::DegenerateVariance { n });
    }
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for j in 1..=n {
        let k = n - j; // conditional variance of xi_{n,j} given the future
        acc += set.cond_var(k).eval_cell(orbit.point(k + 1)) / sigma_n2;
        out.push(acc);
    }
    Ok(out)
}

/// The time-changed martingale process: vertices at `V_{n,k}/V_{n,n}`
/// with values `Σ_{j<=k} xi_{n,j}` where `xi_{n,j} =
/// psi_{n-j}(x_{n-j})/sigma_n`.
pub fn build_xn(orbit: &Orbit, set: &DecompositionSet) -> Result<PolygonalPath> {
    let n = set.horizon();
    let v = quadratic_variation(orbit, set)?;
    if *v.last().unwrap() <= 0.0 {
        return Err(Error::DegenerateVariance { n });
    }
    let sigma_n = set.sigma2()[n].sqrt();
    let psi = psi_values(orbit, set)?;
    let mut sums = Vec::with_capacity(n + 1);
    sums.push(0.0);
    let mut acc = 0.0;
    for j in 1..=n {
        acc += psi[n - j] / sigma_n;
        sums.push(acc);
    }
    Ok(polygonal_from(&v, &sums, 1.0, 0, PathConvention::Standard))
}

/// The reversal `g(u)(t) = u(1) - u(1 - t)`. On paths with `u(0) = 0`
/// (every process built here) this is an exact vertexwise involution;
/// in general `g(g(u)) = u - u(0)`.
pub fn g_transform(path: &PolygonalPath) -> PolygonalPath {
    let m = path.times.len();
    let last = *path.values.last().unwrap();
    let mut times = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m);
    for i in (0..m).rev() {
        times.push(1.0 - path.times[i]);
        values.push(last - path.values[i]);
    }
    PolygonalPath::new(times, values, path.convention)
}

/// Disjoint interval cover of `{0, ..., n-1}` with per-block variance in
/// the band `[2 B Sigma_n, 4 B Sigma_n]` (up to `8 B Sigma_n` after the
/// final merge).
#[derive(Debug, Clone, Serialize)]
pub struct BlockDecomposition {
    /// Half-open index intervals `[a_j, b_j)`.
    pub intervals: Vec<(usize, usize)>,
    /// `E(S_{I_j} vbar)^2` per block.
    pub block_variance: Vec<f64>,
    pub threshold_b: f64,
    pub qn: usize,
    pub qn_over_sigma: f64,
    /// Last block absorbed into the penultimate one.
    pub merged_last: bool,
    /// Blocks whose variance overshot `4 B Sigma_n` (a single large
    /// increment can force this).
    pub overshoot: Vec<usize>,
    /// Set when `2 B Sigma_n` exceeds the total variance.
    pub degenerate: bool,
}

/// Default threshold constant: the measured variance-gap ratio
/// `max_k |Sigma_k^2 - sigma_k^2| / sigma_k`.
pub fn default_block_constant(set: &DecompositionSet) -> f64 {
    let mut b = 0.0f64;
    for k in 1..=set.horizon() {
        let s = set.sigma2()[k].sqrt();
        if s > 0.0 {
            b = b.max((set.big_sigma2()[k] - set.sigma2()[k]).abs() / s);
        }
    }
    b
}

/// Greedy left-to-right block construction.
pub fn block_decomposition(
    set: &DecompositionSet,
    chain: &OperatorChain,
    b: f64,
) -> Result<BlockDecomposition> {
    if b < 0.0 {
        return Err(Error::InvalidConfig("block constant must be >= 0".into()));
    }
    let n = set.horizon();
    let sigma_n = set.big_sigma2()[n].sqrt();
    let lo = 2.0 * b * sigma_n;
    let hi = 4.0 * b * sigma_n;

    if lo > set.big_sigma2()[n] {
        let mut seg = SegmentVariance::new(chain, set, 0);
        while seg.range().1 < n {
            seg.extend()?;
        }
        return Ok(BlockDecomposition {
            intervals: vec![(0, n)],
            block_variance: vec![seg.value()],
            threshold_b: b,
            qn: 1,
            qn_over_sigma: 1.0 / sigma_n,
            merged_last: false,
            overshoot: vec![],
            degenerate: true,
        });
    }

    let mut intervals = Vec::new();
    let mut block_variance = Vec::new();
    let mut start = 0usize;
    while start < n {
        let mut seg = SegmentVariance::new(chain, set, start);
        while seg.range().1 < n {
            seg.extend()?;
            if seg.value() >= lo {
                break;
            }
        }
        let (a, e) = seg.range();
        intervals.push((a, e));
        block_variance.push(seg.value());
        start = e;
    }

    // Absorb a deficient final block into the penultimate one.
    let mut merged_last = false;
    if intervals.len() >= 2 && *block_variance.last().unwrap() < lo {
        let (a_last, b_last) = intervals.pop().unwrap();
        block_variance.pop();
        let (a_prev, _) = intervals.pop().unwrap();
        block_variance.pop();
        let mut seg = SegmentVariance::new(chain, set, a_prev);
        while seg.range().1 < b_last {
            seg.extend()?;
        }
        let _ = a_last;
        intervals.push((a_prev, b_last));
        block_variance.push(seg.value());
        merged_last = true;
    }

    let mut overshoot = Vec::new();
    for (j, &v) in block_variance.iter().enumerate() {
        let cap = if merged_last && j + 1 == block_variance.len() {
            2.0 * hi
        } else {
            hi
        };
        if v > cap {
            overshoot.push(j);
        }
    }
    let qn = intervals.len();
    Ok(BlockDecomposition {
        intervals,
        block_variance,
        threshold_b: b,
        qn,
        qn_over_sigma: qn as f64 / sigma_n,
        merged_last,
        overshoot,
        degenerate: false,
    })
}

// ---------------------------------------------------------------------------
// ensembles

/// A set of piecewise-linear paths sharing one vertex grid.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    times: Vec<f64>,
    /// Row-major `count x grid_len` vertex values.
    values: Vec<f64>,
    convention: PathConvention,
}

impl PathEnsemble {
    pub fn new(times: Vec<f64>, values: Vec<f64>, convention: PathConvention) -> Self {
        assert!(!times.is_empty());
        assert_eq!(values.len() % times.len(), 0, "ragged ensemble");
        Self {
            times,
            values,
            convention,
        }
    }

    /// Collects paths defined on a common grid.
    pub fn from_paths(paths: &[PolygonalPath]) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::InvalidConfig("empty ensemble".into()))?;
        let times = first.times().to_vec();
        let mut values = Vec::with_capacity(paths.len() * times.len());
        for p in paths {
            if p.times() != times.as_slice() {
                return Err(Error::InvalidConfig(
                    "paths do not share a vertex grid".into(),
                ));
            }
            values.extend_from_slice(p.values());
        }
        Ok(Self {
            times,
            values,
            convention: first.convention(),
        })
    }

    pub fn count(&self) -> usize {
        self.values.len() / self.times.len()
    }

    pub fn grid_len(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn convention(&self) -> PathConvention {
        self.convention
    }

    pub fn path_values(&self, i: usize) -> &[f64] {
        let m = self.times.len();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn path(&self, i: usize) -> PolygonalPath {
        PolygonalPath::new(
            self.times.clone(),
            self.path_values(i).to_vec(),
            self.convention,
        )
    }

    /// Columnar binary format: magic, version, count, grid length,
    /// convention tag, vertex times, then per-path vertex values, all
    /// little-endian 64-bit floats after the header.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"WLPATHS1")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.count() as u64).to_le_bytes())?;
        w.write_all(&(self.grid_len() as u64).to_le_bytes())?;
        w.write_all(&[match self.convention {
            PathConvention::Standard => 0u8,
            PathConvention::Verbatim => 1u8,
        }])?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"WLPATHS1" {
            return Err(Error::Parse("bad ensemble magic".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(Error::Parse("unsupported ensemble version".into()));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        r.read_exact(&mut b8)?;
        let grid_len = u64::from_le_bytes(b8) as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let convention = match tag[0] {
            0 => PathConvention::Standard,
            1 => PathConvention::Verbatim,
            _ => return Err(Error::Parse("unknown convention tag".into())),
        };
        let read_f64s = |r: &mut dyn Read, n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let times = read_f64s(&mut r, grid_len)?;
        let values = read_f64s(&mut r, count * grid_len)?;
        Ok(Self {
            times,
            values,
            convention,
        })
    }

    /// CSV export: a header comment, the vertex times, then one row per
    /// path. Meant for small ensembles.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# schema=wiplab.paths.v1")?;
        let fmt = |xs: &[f64]| {
            xs.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(w, "{}", fmt(&self.times))?;
        for i in 0..self.count() {
            writeln!(w, "{}", fmt(self.path_values(i)))?;
        }
        Ok(())
    }
}

/// Samples `count` orbits with split streams and builds the `W_n`
/// ensemble on the shared variance grid.
pub fn sample_wn_ensemble(
    set: &DecompositionSet,
    count: usize,
    master_seed: u64,
    stream_offset: u64,
    convention: PathConvention,
) -> Result<PathEnsemble> {
    use rayon::prelude::*;
    let n = set.horizon();
    let paths: Vec<PolygonalPath> = (0..count)
        .into_par_iter()
        .map(|r| {
            let seed = SeedRecord::new(
                master_seed,
                StreamDomain::Orbit,
                stream_offset + r as u64,
            );
            let orbit = sample_orbit(set.family(), n, seed)?;
            build_wn(&orbit, set, convention)
        })
        .collect::<Result<Vec<_>>>()?;
    PathEnsemble::from_paths(&paths)
}
