//! Sequential families of expanding interval maps and their observables.
//!
//! A family is an indexed sequence `T_1, T_2, ...` of piecewise expanding
//! maps of `[0, 1]`. Three kinds are provided: a constant family (the same
//! map at every index), the sequential beta-transformations
//! `T_k(x) = beta_k x mod 1` with `beta_k = beta + k^-theta`, and a base
//! piecewise map perturbed by additive noise `T_k = T + eps_k`.
//!
//! Branch endpoints follow a right-continuous convention: a point on a
//! branch boundary belongs to the branch on its right, and `x = 1` belongs
//! to the closure of the last branch.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use serde::{Deserialize, Serialize};

/// Slopes below this are rejected as non-expanding.
pub const MIN_EXPANSION: f64 = 1.0 + 1e-9;

/// Duplicate preimages closer than this are merged.
pub const PREIMAGE_DEDUP: f64 = 1e-14;

// ---------------------------------------------------------------------------
// monotone cubic interpolation (Fritsch-Carlson), used for tabulated branches

/// Monotone C1 cubic interpolant through strictly monotone sample data.
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    tangents: Vec<f64>,
    increasing: bool,
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidConfig(
                "tabulated branch needs >= 2 matching samples".into(),
            ));
        }
        if !xs.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig(
                "tabulated branch abscissae must be strictly increasing".into(),
            ));
        }
        let increasing = ys[1] > ys[0];
        let ordered = if increasing {
            ys.windows(2).all(|w| w[1] > w[0])
        } else {
            ys.windows(2).all(|w| w[1] < w[0])
        };
        if !ordered {
            return Err(Error::InvalidConfig(
                "tabulated branch must be strictly monotone".into(),
            ));
        }

        // Fritsch-Carlson tangents: secant averages, clipped so the
        // interpolant stays monotone on every interval.
        let n = xs.len();
        let mut secants = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            secants.push((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]));
        }
        let mut m = vec![0.0; n];
        m[0] = secants[0];
        m[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            m[i] = 0.5 * (secants[i - 1] + secants[i]);
        }
        for i in 0..n - 1 {
            let s = secants[i];
            if s == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            let a = m[i] / s;
            let b = m[i + 1] / s;
            let r = a * a + b * b;
            if r > 9.0 {
                let t = 3.0 / r.sqrt();
                m[i] = t * a * s;
                m[i + 1] = t * b * s;
            }
        }
        Ok(Self {
            xs,
            ys,
            tangents: m,
            increasing,
        })
    }

    fn segment(&self, x: f64) -> usize {
        match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).expect("non-NaN abscissa"))
        {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (m0, m1) = (self.tangents[i] * h, self.tangents[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + m0 * (t3 - 2.0 * t2 + t)
            + y1 * (-2.0 * t3 + 3.0 * t2)
            + m1 * (t3 - t2)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (m0, m1) = (self.tangents[i] * h, self.tangents[i + 1] * h);
        let dt = (6.0 * t * t - 6.0 * t) * y0
            + (3.0 * t * t - 4.0 * t + 1.0) * m0
            + (-6.0 * t * t + 6.0 * t) * y1
            + (3.0 * t * t - 2.0 * t) * m1;
        dt / h
    }

    pub fn min_abs_derivative(&self) -> f64 {
        // Sampled bound: tangents at knots plus a dense sweep.
        let mut m = f64::INFINITY;
        for &t in &self.tangents {
            m = m.min(t.abs());
        }
        let (lo, hi) = (self.xs[0], *self.xs.last().unwrap());
        for i in 0..=400 {
            let x = lo + (hi - lo) * i as f64 / 400.0;
            m = m.min(self.derivative(x).abs());
        }
        m
    }

    pub fn range(&self) -> (f64, f64) {
        let a = self.ys[0];
        let b = *self.ys.last().unwrap();
        if self.increasing {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Solves `eval(x) = y` by bisection on the monotone segment.
    pub fn invert(&self, y: f64) -> Option<f64> {
        let (lo_y, hi_y) = self.range();
        if y < lo_y || y > hi_y {
            return None;
        }
        let (mut lo, mut hi) = (self.xs[0], *self.xs.last().unwrap());
        for _ in 0..90 {
            let mid = 0.5 * (lo + hi);
            let v = self.eval(mid);
            let below = if self.increasing { v < y } else { v > y };
            if below {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

// ---------------------------------------------------------------------------
// branches

#[derive(Debug, Clone)]
pub enum BranchForward {
    Affine { slope: f64, intercept: f64 },
    Tabulated(MonotoneCubic),
}

/// One injective branch of a piecewise map.
#[derive(Debug, Clone)]
pub struct BranchSpec {
    /// Left endpoint of the branch domain.
    pub left: f64,
    /// Right endpoint; the domain is `[left, right)` except for the last
    /// branch of a map, whose closure includes `right`.
    pub right: f64,
    pub forward: BranchForward,
    /// Infimum of |T'| over the branch.
    pub derivative_bound: f64,
}

impl BranchSpec {
    pub fn affine(left: f64, right: f64, slope: f64, intercept: f64) -> Self {
        Self {
            left,
            right,
            forward: BranchForward::Affine { slope, intercept },
            derivative_bound: slope.abs(),
        }
    }

    pub fn tabulated(left: f64, right: f64, curve: MonotoneCubic) -> Self {
        let bound = curve.min_abs_derivative();
        Self {
            left,
            right,
            forward: BranchForward::Tabulated(curve),
            derivative_bound: bound,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.forward {
            BranchForward::Affine { slope, intercept } => slope * x + intercept,
            BranchForward::Tabulated(c) => c.eval(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.forward {
            BranchForward::Affine { slope, .. } => *slope,
            BranchForward::Tabulated(c) => c.derivative(x),
        }
    }

    /// Oriented image `(min, max)` of the branch closure.
    pub fn image(&self) -> (f64, f64) {
        let a = self.eval(self.left);
        let b = self.eval(self.right);
        if a <= b {
            (a, b)
        } else {
            (b, a)
        }
    }

    /// Preimage of `y` within the branch closure, if any.
    pub fn invert(&self, y: f64) -> Option<f64> {
        match &self.forward {
            BranchForward::Affine { slope, intercept } => {
                let x = (y - intercept) / slope;
                (x >= self.left - PREIMAGE_DEDUP && x <= self.right + PREIMAGE_DEDUP)
                    .then(|| x.clamp(self.left, self.right))
            }
            BranchForward::Tabulated(c) => {
                let x = c.invert(y)?;
                (x >= self.left - PREIMAGE_DEDUP && x <= self.right + PREIMAGE_DEDUP)
                    .then(|| x.clamp(self.left, self.right))
            }
        }
    }

    fn shifted(&self, eps: f64) -> BranchSpec {
        let forward = match &self.forward {
            BranchForward::Affine { slope, intercept } => BranchForward::Affine {
                slope: *slope,
                intercept: intercept + eps,
            },
            BranchForward::Tabulated(c) => {
                let mut c = c.clone();
                for y in &mut c.ys {
                    *y += eps;
                }
                BranchForward::Tabulated(c)
            }
        };
        BranchSpec {
            left: self.left,
            right: self.right,
            forward,
            derivative_bound: self.derivative_bound,
        }
    }
}

/// Validates that branch domains are pairwise disjoint open intervals whose
/// closures cover [0, 1], sorted left to right.
fn validate_partition(branches: &[BranchSpec]) -> Result<()> {
    if branches.is_empty() {
        return Err(Error::InvalidConfig("map needs at least one branch".into()));
    }
    let tol = 1e-12;
    if branches[0].left.abs() > tol {
        return Err(Error::InvalidConfig("first branch must start at 0".into()));
    }
    if (branches.last().unwrap().right - 1.0).abs() > tol {
        return Err(Error::InvalidConfig("last branch must end at 1".into()));
    }
    for w in branches.windows(2) {
        if (w[0].right - w[1].left).abs() > tol {
            return Err(Error::InvalidConfig(format!(
                "branch domains must tile [0,1]: gap between {} and {}",
                w[0].right, w[1].left
            )));
        }
    }
    for b in branches {
        if b.right <= b.left {
            return Err(Error::InvalidConfig("empty branch domain".into()));
        }
        if b.derivative_bound < MIN_EXPANSION {
            return Err(Error::NotExpanding {
                slope: b.derivative_bound,
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// families

#[derive(Debug, Clone)]
enum FamilyKind {
    /// beta_k = max(beta + k^-theta, 1 + c).
    BetaSequence { beta: f64, theta: f64, c: f64 },
    /// The same branch set at every index.
    Constant { branches: Vec<BranchSpec> },
    /// Base branches shifted by eps_k = eps_amplitude * k^-theta.
    PerturbedExpanding {
        base: Vec<BranchSpec>,
        eps_amplitude: f64,
        theta: f64,
    },
}

/// An indexed sequence of interval maps; index `k` starts at 1.
#[derive(Debug, Clone)]
pub struct MapFamily {
    kind: FamilyKind,
    length_hint: usize,
    warnings: Vec<String>,
    hash: u64,
}

/// Config-file representation of a map family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyConfig {
    BetaSequence {
        beta: f64,
        theta: f64,
        c: f64,
        #[serde(default)]
        length_hint: usize,
    },
    ConstantBeta {
        beta: f64,
        #[serde(default)]
        length_hint: usize,
    },
    Constant {
        branches: Vec<AffineBranchConfig>,
        #[serde(default)]
        length_hint: usize,
    },
    PerturbedExpanding {
        base: Vec<AffineBranchConfig>,
        eps_amplitude: f64,
        theta: f64,
        #[serde(default)]
        length_hint: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineBranchConfig {
    pub left: f64,
    pub right: f64,
    pub slope: f64,
    pub intercept: f64,
}

fn beta_branches(beta: f64) -> Vec<BranchSpec> {
    let nb = beta.ceil() as usize;
    (0..nb)
        .map(|j| {
            let left = j as f64 / beta;
            let right = ((j + 1) as f64 / beta).min(1.0);
            BranchSpec::affine(left, right, beta, -(j as f64))
        })
        .collect()
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn hash_f64s(tag: u64, vals: impl IntoIterator<Item = f64>) -> u64 {
    let mut h = fnv1a(&tag.to_le_bytes(), 0xcbf29ce484222325);
    for v in vals {
        h = fnv1a(&v.to_bits().to_le_bytes(), h);
    }
    h
}

/// Builds and validates a family from its configuration.
pub fn make_family(cfg: &FamilyConfig) -> Result<MapFamily> {
    let mut warnings = Vec::new();
    let (kind, length_hint, hash) = match cfg {
        FamilyConfig::BetaSequence {
            beta,
            theta,
            c,
            length_hint,
        } => {
            if *beta <= 1.0 {
                return Err(Error::InvalidConfig("beta must exceed 1".into()));
            }
            if *c <= 0.0 {
                return Err(Error::InvalidConfig("c must be positive".into()));
            }
            if *beta < 1.0 + c {
                // With the positive schedule beta_k = beta + k^-theta the
                // clip would otherwise break |beta_k - beta| <= k^-theta.
                return Err(Error::InvalidConfig(
                    "need beta >= 1 + c so the clipped schedule keeps |beta_k - beta| <= k^-theta"
                        .into(),
                ));
            }
            if *theta <= 0.5 {
                warnings
                    .push("theta <= 1/2: outside the regime the convergence rate assumes".into());
            }
            (
                FamilyKind::BetaSequence {
                    beta: *beta,
                    theta: *theta,
                    c: *c,
                },
                *length_hint,
                hash_f64s(1, [*beta, *theta, *c]),
            )
        }
        FamilyConfig::ConstantBeta { beta, length_hint } => {
            if *beta <= 1.0 {
                return Err(Error::InvalidConfig("beta must exceed 1".into()));
            }
            let branches = beta_branches(*beta);
            validate_partition(&branches)?;
            (
                FamilyKind::Constant { branches },
                *length_hint,
                hash_f64s(2, [*beta]),
            )
        }
        FamilyConfig::Constant {
            branches,
            length_hint,
        } => {
            let specs: Vec<BranchSpec> = branches
                .iter()
                .map(|b| BranchSpec::affine(b.left, b.right, b.slope, b.intercept))
                .collect();
            validate_partition(&specs)?;
            let h = hash_f64s(
                3,
                branches
                    .iter()
                    .flat_map(|b| [b.left, b.right, b.slope, b.intercept]),
            );
            (FamilyKind::Constant { branches: specs }, *length_hint, h)
        }
        FamilyConfig::PerturbedExpanding {
            base,
            eps_amplitude,
            theta,
            length_hint,
        } => {
            let specs: Vec<BranchSpec> = base
                .iter()
                .map(|b| BranchSpec::affine(b.left, b.right, b.slope, b.intercept))
                .collect();
            validate_partition(&specs)?;
            if eps_amplitude.abs() > 1.0 {
                return Err(Error::InvalidConfig(
                    "|eps_amplitude| must be <= 1 so |eps_k| <= k^-theta".into(),
                ));
            }
            if *theta <= 0.5 {
                warnings
                    .push("theta <= 1/2: outside the regime the convergence rate assumes".into());
            }
            // Perturbed images must stay strictly inside [0,1] for every k;
            // the worst case is |eps_1| = |eps_amplitude|.
            let amp = eps_amplitude.abs();
            for b in &specs {
                let (lo, hi) = b.image();
                if lo - amp <= 0.0 && amp > 0.0 || hi + amp >= 1.0 && amp > 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "branch image [{lo}, {hi}] plus noise amplitude {amp} leaves (0,1)"
                    )));
                }
                if amp == 0.0 && (lo < 0.0 || hi > 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "branch image [{lo}, {hi}] leaves [0,1]"
                    )));
                }
            }
            let h = hash_f64s(
                4,
                base.iter()
                    .flat_map(|b| [b.left, b.right, b.slope, b.intercept])
                    .chain([*eps_amplitude, *theta]),
            );
            (
                FamilyKind::PerturbedExpanding {
                    base: specs,
                    eps_amplitude: *eps_amplitude,
                    theta: *theta,
                },
                *length_hint,
                h,
            )
        }
    };
    Ok(MapFamily {
        kind,
        length_hint,
        warnings,
        hash,
    })
}

impl MapFamily {
    /// The constant family of the single beta-transformation.
    pub fn beta_constant(beta: f64) -> Result<MapFamily> {
        make_family(&FamilyConfig::ConstantBeta {
            beta,
            length_hint: 0,
        })
    }

    /// The sequential family `beta_k = beta + k^-theta`.
    pub fn beta_sequence(beta: f64, theta: f64, c: f64) -> Result<MapFamily> {
        make_family(&FamilyConfig::BetaSequence {
            beta,
            theta,
            c,
            length_hint: 0,
        })
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn length_hint(&self) -> usize {
        self.length_hint
    }

    /// Stable content hash, used to key operator caches.
    pub fn family_hash(&self) -> u64 {
        self.hash
    }

    /// Expansion parameter of the k-th map for beta families.
    pub fn beta_at(&self, k: usize) -> Option<f64> {
        match &self.kind {
            FamilyKind::BetaSequence { beta, theta, c } => {
                Some((beta + (k as f64).powf(-theta)).max(1.0 + c))
            }
            _ => None,
        }
    }

    fn eps_at(&self, k: usize) -> f64 {
        match &self.kind {
            FamilyKind::PerturbedExpanding {
                eps_amplitude,
                theta,
                ..
            } => eps_amplitude * (k as f64).powf(-theta),
            _ => 0.0,
        }
    }

    /// True when every index yields the same map.
    pub fn is_constant(&self) -> bool {
        match &self.kind {
            FamilyKind::Constant { .. } => true,
            FamilyKind::PerturbedExpanding { eps_amplitude, .. } => *eps_amplitude == 0.0,
            FamilyKind::BetaSequence { .. } => false,
        }
    }

    /// True when every map is exactly the dyadic doubling map. Orbit
    /// sampling special-cases this: iterating `2x mod 1` in binary floating
    /// point flushes every mantissa to zero within 53 steps, so doubling
    /// orbits are instead driven by a sliding window over an i.i.d. bit
    /// stream.
    pub fn is_exact_doubling(&self) -> bool {
        match &self.kind {
            FamilyKind::Constant { branches } => {
                branches.len() == 2
                    && branches.iter().enumerate().all(|(j, b)| {
                        matches!(
                            b.forward,
                            BranchForward::Affine { slope, intercept }
                                if slope == 2.0 && intercept == -(j as f64)
                        )
                    })
            }
            _ => false,
        }
    }

    /// The branch structure of the k-th map, sorted left to right.
    pub fn branches(&self, k: usize) -> Vec<BranchSpec> {
        assert!(k >= 1, "map index starts at 1");
        match &self.kind {
            FamilyKind::BetaSequence { .. } => beta_branches(self.beta_at(k).unwrap()),
            FamilyKind::Constant { branches } => branches.clone(),
            FamilyKind::PerturbedExpanding { base, .. } => {
                let eps = self.eps_at(k);
                base.iter().map(|b| b.shifted(eps)).collect()
            }
        }
    }

    /// Evaluates `T_k(x)`.
    pub fn eval(&self, k: usize, x: f64) -> Result<f64> {
        assert!(k >= 1, "map index starts at 1");
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain { x });
        }
        match &self.kind {
            FamilyKind::BetaSequence { .. } => {
                let beta = self.beta_at(k).unwrap();
                let nb = beta.ceil() as usize;
                let bx = beta * x;
                let j = (bx.floor() as usize).min(nb - 1);
                Ok(bx - j as f64)
            }
            _ => {
                let branches = self.branches(k);
                let last = branches.len() - 1;
                for (i, b) in branches.iter().enumerate() {
                    if x < b.right || i == last {
                        return Ok(b.eval(x));
                    }
                }
                unreachable!("partition covers [0,1]")
            }
        }
    }

    /// All preimages of `y` under `T_k`, with |T_k'| at each, sorted by
    /// preimage. Preimages from adjacent branch endpoints closer than
    /// `PREIMAGE_DEDUP` are merged.
    pub fn branch_inverses(&self, k: usize, y: f64) -> Result<Vec<(f64, f64)>> {
        assert!(k >= 1, "map index starts at 1");
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::OutOfDomain { x: y });
        }
        let branches = self.branches(k);
        let last = branches.len() - 1;
        let mut out = Vec::with_capacity(branches.len());
        for (i, b) in branches.iter().enumerate() {
            if let Some(x) = b.invert(y) {
                // Half-open acceptance: the shared endpoint belongs to the
                // right branch, so the left branch does not claim it.
                let in_domain = if i == last {
                    x >= b.left && x <= b.right
                } else {
                    x >= b.left && x < b.right - 0.0
                };
                if in_domain {
                    out.push((x, b.derivative(x).abs()));
                }
            }
        }
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        out.dedup_by(|a, b| (a.0 - b.0).abs() <= PREIMAGE_DEDUP);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// observables

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservableKind {
    /// `amplitude * cos(2 pi frequency x)`.
    Trig { frequency: u32, amplitude: f64 },
    /// `sum_i coeffs[i] x^i`.
    Polynomial { coeffs: Vec<f64> },
    /// Piecewise-constant tabulation on its own uniform partition.
    TabulatedBv { values: Vec<f64> },
}

/// Per-index scaling `v_k = s_k * v`, keeping `sup_k ||v_k||_BV` finite.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IndexModulation {
    #[default]
    None,
    /// `s_k = 1 + amplitude * (k+1)^-theta`.
    PowerScale { amplitude: f64, theta: f64 },
    /// `s_k` cycles through the listed factors.
    Cycle { factors: Vec<f64> },
}

/// An observable sequence `v_k`, all scalar multiples of one base shape.
#[derive(Debug, Clone)]
pub struct Observable {
    kind: ObservableKind,
    modulation: IndexModulation,
    bv_norm_bound: f64,
    sup_bound: f64,
}

impl Observable {
    pub fn new(kind: ObservableKind, modulation: IndexModulation) -> Result<Self> {
        let (base_var, base_sup) = match &kind {
            ObservableKind::Trig {
                frequency,
                amplitude,
            } => {
                if *frequency == 0 {
                    return Err(Error::InvalidConfig("trig frequency must be >= 1".into()));
                }
                (4.0 * *frequency as f64 * amplitude.abs(), amplitude.abs())
            }
            ObservableKind::Polynomial { coeffs } => {
                if coeffs.is_empty() {
                    return Err(Error::InvalidConfig("empty polynomial".into()));
                }
                let var: f64 = coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| i as f64 * c.abs())
                    .sum();
                let sup: f64 = coeffs.iter().map(|c| c.abs()).sum();
                (var, sup)
            }
            ObservableKind::TabulatedBv { values } => {
                if values.len() < 2 {
                    return Err(Error::InvalidConfig(
                        "tabulated observable needs >= 2 cells".into(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig(
                        "tabulated observable must be bounded".into(),
                    ));
                }
                let var: f64 = values.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
                let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                (var, sup)
            }
        };
        let scale_sup = match &modulation {
            IndexModulation::None => 1.0,
            IndexModulation::PowerScale { amplitude, theta } => {
                if *theta < 0.0 {
                    return Err(Error::InvalidConfig(
                        "modulation theta must be >= 0".into(),
                    ));
                }
                1.0 + amplitude.abs()
            }
            IndexModulation::Cycle { factors } => {
                if factors.is_empty() {
                    return Err(Error::InvalidConfig("empty modulation cycle".into()));
                }
                factors.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            }
        };
        Ok(Self {
            kind,
            modulation,
            bv_norm_bound: scale_sup * (base_var + base_sup),
            sup_bound: scale_sup * base_sup,
        })
    }

    /// `cos(2 pi x)`, the workhorse observable.
    pub fn cosine() -> Self {
        Self::new(
            ObservableKind::Trig {
                frequency: 1,
                amplitude: 1.0,
            },
            IndexModulation::None,
        )
        .expect("valid")
    }

    pub fn scale_at(&self, k: usize) -> f64 {
        match &self.modulation {
            IndexModulation::None => 1.0,
            IndexModulation::PowerScale { amplitude, theta } => {
                1.0 + amplitude * ((k + 1) as f64).powf(-theta)
            }
            IndexModulation::Cycle { factors } => factors[k % factors.len()],
        }
    }

    fn eval_base(&self, x: f64) -> f64 {
        match &self.kind {
            ObservableKind::Trig {
                frequency,
                amplitude,
            } => amplitude * (2.0 * std::f64::consts::PI * *frequency as f64 * x).cos(),
            ObservableKind::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
            }
            ObservableKind::TabulatedBv { values } => {
                values[((x * values.len() as f64) as usize).min(values.len() - 1)]
            }
        }
    }

    /// Evaluates `v_k(x)`.
    pub fn eval(&self, k: usize, x: f64) -> f64 {
        self.scale_at(k) * self.eval_base(x)
    }

    /// Midpoint sampling of the unmodulated base shape; `v_k` is this
    /// grid scaled by `scale_at(k)`.
    pub fn base_grid(&self, n_cells: usize) -> GridFunction {
        GridFunction::from_fn(n_cells, |x| self.eval_base(x))
    }

    /// Midpoint sampling of `v_k` on an `n_cells` grid.
    pub fn grid(&self, k: usize, n_cells: usize) -> GridFunction {
        self.base_grid(n_cells).scaled(self.scale_at(k))
    }

    /// Recorded bound on `sup_k ||v_k||_BV`.
    pub fn bv_norm_bound(&self) -> f64 {
        self.bv_norm_bound
    }

    /// Recorded bound on `sup_k ||v_k||_inf`.
    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }
}

/// Config-file representation of the observable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservableConfig {
    #[serde(flatten)]
    pub kind: ObservableKind,
    #[serde(default)]
    pub modulation: IndexModulation,
}

impl ObservableConfig {
    pub fn build(&self) -> Result<Observable> {
        Observable::new(self.kind.clone(), self.modulation.clone())
    }
}
