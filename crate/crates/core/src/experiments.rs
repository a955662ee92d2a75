//! Experiment configuration, the convergence-rate study, and the
//! verification suite that sweeps every module-level invariant.
//!
//! The rate study builds the operator chain and decomposition once at the
//! largest horizon, then for each horizon samples a fresh orbit ensemble,
//! builds the rescaled partial-sum paths, samples a Brownian ensemble on
//! the common comparison grid, and solves the empirical optimal transport
//! problem between the two. Everything is keyed off the master seed
//! through counter-based streams, so a run is a pure function of
//! (config, seed).

use crate::brownian::{sample_bm_on_grid, standard_normal_cdf};
use crate::decomp::{
    self, build_decomposition, CorrWindow, DecompOptions, DecompositionSet,
};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::maps::{make_family, FamilyConfig, MapFamily, ObservableConfig};
use crate::process::{
    block_decomposition, build_wn, build_wn_at, g_transform, quadratic_variation, sample_orbit,
    PathConvention, PathEnsemble, PolygonalPath,
};
use crate::rng::{SeedRecord, StreamDomain};
use crate::transfer::{property_report, OperatorChain, PropertyReport};
use crate::wasserstein::{
    brute_force_assignment, empirical_wp_paths, levy_prokhorov_bound, path_sup_distance,
    solve_assignment, wp_1d, OtMode, OtOptions, TransportResult,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const RATE_SCHEMA: &str = "wiplab.rate.v1";

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSection {
    pub n_cells: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n_cells: 4096 }
    }
}

fn default_p() -> f64 {
    2.0
}
fn default_count() -> usize {
    512
}
fn default_exact_cap() -> usize {
    4096
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_bm_grid_min() -> usize {
    256
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSection {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub mode: OtModeConfig,
    #[serde(default = "default_exact_cap")]
    pub exact_cap: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_bm_grid_min")]
    pub bm_grid_min: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            count: default_count(),
            p: default_p(),
            mode: OtModeConfig::Exact,
            exact_cap: default_exact_cap(),
            epsilon: default_epsilon(),
            bm_grid_min: default_bm_grid_min(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OtModeConfig {
    #[default]
    Exact,
    Entropic,
}

impl From<OtModeConfig> for OtMode {
    fn from(m: OtModeConfig) -> OtMode {
        match m {
            OtModeConfig::Exact => OtMode::Exact,
            OtModeConfig::Entropic => OtMode::Entropic,
        }
    }
}

fn default_h_truncation() -> f64 {
    1e-12
}
fn default_mass() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToleranceSection {
    #[serde(default = "default_h_truncation")]
    pub h_truncation: f64,
    #[serde(default = "default_mass")]
    pub mass: f64,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        Self {
            h_truncation: default_h_truncation(),
            mass: default_mass(),
        }
    }
}

fn default_slope_band() -> (f64, f64) {
    (-0.75, -0.25)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateSection {
    #[serde(default = "default_slope_band")]
    pub slope_band: (f64, f64),
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            slope_band: default_slope_band(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConventionConfig {
    #[default]
    Standard,
    Verbatim,
}

impl From<ConventionConfig> for PathConvention {
    fn from(c: ConventionConfig) -> PathConvention {
        match c {
            ConventionConfig::Standard => PathConvention::Standard,
            ConventionConfig::Verbatim => PathConvention::Verbatim,
        }
    }
}

/// Top-level experiment configuration (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub family: FamilyConfig,
    pub observable: ObservableConfig,
    #[serde(default)]
    pub grid: GridSection,
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default)]
    pub rate: RateSection,
    #[serde(default)]
    pub convention: ConventionConfig,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(s).map_err(|e| Error::Parse(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("serializable config")
    }

    /// Collects every validation failure instead of stopping at the first.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.horizons.is_empty() {
            errs.push("horizons must be non-empty".into());
        }
        if !self.horizons.windows(2).all(|w| w[1] > w[0]) {
            errs.push("horizons must be strictly increasing".into());
        }
        if self.ensemble.count < 32 {
            errs.push("ensemble count must be >= 32".into());
        }
        if self.ensemble.p < 1.0 {
            errs.push("p must be >= 1".into());
        }
        if self.grid.n_cells < 2 {
            errs.push("grid.n_cells must be >= 2".into());
        }
        if self.tolerances.h_truncation <= 0.0 || self.tolerances.mass <= 0.0 {
            errs.push("tolerances must be positive".into());
        }
        if self.ensemble.epsilon <= 0.0 {
            errs.push("entropic epsilon must be positive".into());
        }
        if self.rate.slope_band.0 >= self.rate.slope_band.1 {
            errs.push("slope band must be an interval (lo, hi)".into());
        }
        if let Err(e) = make_family(&self.family) {
            errs.push(format!("family: {e}"));
        }
        if let Err(e) = self.observable.build() {
            errs.push(format!("observable: {e}"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    /// The doubling/cosine reference configuration.
    pub fn doubling_cosine(horizons: Vec<usize>, n_cells: usize, count: usize, seed: u64) -> Self {
        Self {
            family: FamilyConfig::ConstantBeta {
                beta: 2.0,
                length_hint: 0,
            },
            observable: ObservableConfig {
                kind: crate::maps::ObservableKind::Trig {
                    frequency: 1,
                    amplitude: 1.0,
                },
                modulation: crate::maps::IndexModulation::None,
            },
            grid: GridSection { n_cells },
            horizons,
            ensemble: EnsembleSection {
                count,
                ..Default::default()
            },
            tolerances: Default::default(),
            rate: Default::default(),
            convention: ConventionConfig::Standard,
            seed,
            output_dir: None,
        }
    }

    /// The sequential beta_k = 2 + 1/k configuration.
    pub fn beta_seq_cosine(horizons: Vec<usize>, n_cells: usize, count: usize, seed: u64) -> Self {
        let mut cfg = Self::doubling_cosine(horizons, n_cells, count, seed);
        cfg.family = FamilyConfig::BetaSequence {
            beta: 2.0,
            theta: 1.0,
            c: 0.5,
            length_hint: 0,
        };
        cfg
    }
}

// ---------------------------------------------------------------------------
// rate study

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub sigma_big: f64,
    pub sigma_small: f64,
    pub wp: f64,
    pub lp_bound: f64,
    pub ci_half: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub schema: String,
    pub rows: Vec<RateRow>,
    /// OLS slope of log wp against log Sigma_n with its standard error.
    pub slope: Option<(f64, f64)>,
    pub slope_band: (f64, f64),
    pub band_pass: Option<bool>,
    /// Count of horizon steps where wp increased beyond the CI half-width.
    pub monotone_violations: usize,
    pub excluded_rows: usize,
    pub properties: PropertyReportSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReportSummary {
    pub min_lower_bound: f64,
    pub sup_bound: f64,
    pub gamma_hat: f64,
    pub min_ok: bool,
    pub dec_ok: bool,
}

impl From<&PropertyReport> for PropertyReportSummary {
    fn from(r: &PropertyReport) -> Self {
        Self {
            min_lower_bound: r.min_lower_bound,
            sup_bound: r.sup_bound,
            gamma_hat: r.dec.gamma_hat,
            min_ok: r.min_ok,
            dec_ok: r.dec.dec_ok,
        }
    }
}

/// 99% normal quantile for the delta-method half-widths.
const Z99: f64 = 2.575_829_303_548_900_4;

/// OLS fit of `log wp` on `log Sigma_n`; rows with nonpositive `wp` are
/// excluded. Needs at least 4 usable rows.
pub fn fit_rate(rows: &[RateRow]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.wp > 0.0 && r.sigma_big > 0.0)
        .map(|r| (r.sigma_big.ln(), r.wp.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InvalidConfig(format!(
            "rate fit needs >= 4 positive rows, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - icpt - slope * p.0).powi(2))
        .sum();
    let stderr = (ss_res / (n - 2.0) / sxx).sqrt();
    Ok((slope, stderr))
}

/// The Brownian comparison grid: variance times of the largest horizon,
/// refined by bisection until it has at least `min_points` vertices.
fn bm_comparison_grid(set: &DecompositionSet, min_points: usize) -> Vec<f64> {
    let sig2 = set.big_sigma2();
    let total = sig2[set.horizon()];
    let mut grid: Vec<f64> = Vec::with_capacity(set.horizon() + 1);
    for &v in sig2 {
        let t = v / total;
        if grid.last().map_or(true, |&last| t > last) {
            grid.push(t);
        }
    }
    while grid.len() < min_points {
        let mut refined = Vec::with_capacity(grid.len() * 2);
        for w in grid.windows(2) {
            refined.push(w[0]);
            refined.push(0.5 * (w[0] + w[1]));
        }
        refined.push(*grid.last().unwrap());
        grid = refined;
    }
    grid
}

/// Builds the `W_n` ensemble for one horizon of the study.
fn wn_ensemble_for_horizon(
    set: &DecompositionSet,
    n: usize,
    count: usize,
    master_seed: u64,
    horizon_index: usize,
    convention: PathConvention,
) -> Result<PathEnsemble> {
    let offset = (horizon_index as u64) << 32;
    let paths: Vec<PolygonalPath> = (0..count)
        .into_par_iter()
        .map(|r| {
            let seed = SeedRecord::new(master_seed, StreamDomain::Orbit, offset + r as u64);
            let orbit = sample_orbit(set.family(), n, seed)?;
            build_wn_at(&orbit, set, n, convention)
        })
        .collect::<Result<Vec<_>>>()?;
    PathEnsemble::from_paths(&paths)
}

/// Runs the full rate study for one configuration.
pub fn run_rate_experiment(cfg: &ExperimentConfig, force: bool) -> Result<RateReport> {
    cfg.validate()
        .map_err(|errs| Error::InvalidConfig(errs.join("; ")))?;
    let family = Arc::new(make_family(&cfg.family)?);
    let observable = Arc::new(cfg.observable.build()?);
    let n_max = *cfg.horizons.last().unwrap();
    let chain = OperatorChain::build(family, cfg.grid.n_cells, n_max + 1)?;

    let props = property_report(&chain)?;
    if !force && (!props.min_ok || !props.dec.dec_ok) {
        return Err(Error::InvalidConfig(format!(
            "property checks failed (min {}, gamma {}); pass force=true to override",
            props.min_lower_bound, props.dec.gamma_hat
        )));
    }

    let set = build_decomposition(
        &chain,
        observable,
        &DecompOptions {
            horizon: n_max,
            corr_window: CorrWindow::Auto {
                gamma_hat: props.dec.gamma_hat,
            },
        },
    )?;

    let bm_grid = bm_comparison_grid(&set, cfg.ensemble.bm_grid_min + 1);
    let ot_opts = OtOptions {
        exact_cap: cfg.ensemble.exact_cap,
        epsilon: cfg.ensemble.epsilon,
        ..Default::default()
    };

    let mut rows = Vec::with_capacity(cfg.horizons.len());
    for (h_idx, &n) in cfg.horizons.iter().enumerate() {
        let wn = wn_ensemble_for_horizon(
            &set,
            n,
            cfg.ensemble.count,
            cfg.seed,
            h_idx,
            cfg.convention.into(),
        )?;
        let bm = sample_bm_on_grid(
            cfg.ensemble.count,
            &bm_grid,
            cfg.seed,
            (h_idx as u64) << 32,
        )?;
        let res: TransportResult =
            empirical_wp_paths(&wn, &bm.paths, cfg.ensemble.p, cfg.ensemble.mode.into(), &ot_opts)?;
        let ci_half = ci_half_width(&res, cfg.ensemble.p);
        rows.push(RateRow {
            n,
            sigma_big: set.big_sigma2()[n].sqrt(),
            sigma_small: set.sigma2()[n].sqrt(),
            wp: res.value,
            lp_bound: levy_prokhorov_bound(res.value, cfg.ensemble.p),
            ci_half,
        });
    }

    let excluded = rows.iter().filter(|r| r.wp <= 0.0).count();
    let slope = if rows.iter().filter(|r| r.wp > 0.0).count() >= 4 {
        Some(fit_rate(&rows)?)
    } else {
        None
    };
    let band = cfg.rate.slope_band;
    let band_pass = slope.map(|(s, _)| s >= band.0 && s <= band.1);
    let mut monotone_violations = 0;
    for w in rows.windows(2) {
        if w[1].wp > w[0].wp + w[1].ci_half {
            monotone_violations += 1;
        }
    }

    Ok(RateReport {
        schema: RATE_SCHEMA.into(),
        rows,
        slope,
        slope_band: band,
        band_pass,
        monotone_violations,
        excluded_rows: excluded,
        properties: (&props).into(),
    })
}

/// Delta-method 99% half-width from the matched p-power costs
/// (exact mode only; entropic results carry no dispersion estimate).
fn ci_half_width(res: &TransportResult, p: f64) -> f64 {
    let d = &res.matched_costs;
    if d.len() < 2 || res.value <= 0.0 {
        return 0.0;
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se_mean = (var / n).sqrt();
    Z99 * se_mean * mean.powf(1.0 / p - 1.0) / p
}

/// Fixed-schema CSV with an embedded schema comment line. Contains no
/// timing fields, so identical (config, seed) runs are byte-identical.
pub fn rate_csv(report: &RateReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# schema={}\n", report.schema));
    out.push_str("n,Sigma_n,sigma_n,w_p,lp_bound,ci_half\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.n, r.sigma_big, r.sigma_small, r.wp, r.lp_bound, r.ci_half
        ));
    }
    out
}

/// One CSV row of the wasserstein subcommand output (includes runtime,
/// so this table is informational, not a determinism surface).
pub fn wasserstein_csv_row(
    n: usize,
    sigma_n: f64,
    k: usize,
    p: f64,
    mode: OtModeConfig,
    value: f64,
    runtime_ms: u128,
    seed: u64,
) -> String {
    let mode = match mode {
        OtModeConfig::Exact => "exact",
        OtModeConfig::Entropic => "entropic",
    };
    format!("{n},{sigma_n},{k},{p},{mode},{value},{runtime_ms},{seed}")
}

pub const WASSERSTEIN_CSV_HEADER: &str = "n,Sigma_n,K,p,mode,value,runtime_ms,seed";

// ---------------------------------------------------------------------------
// verification suite

#[derive(Debug, Clone, Serialize)]
pub struct VerifyCheck {
    pub id: String,
    pub measured: f64,
    pub threshold: f64,
    pub comparison: String,
    pub pass: bool,
}

impl VerifyCheck {
    fn le(id: &str, measured: f64, threshold: f64) -> Self {
        Self {
            id: id.into(),
            measured,
            threshold,
            comparison: "<=".into(),
            pass: measured <= threshold,
        }
    }

    fn ge(id: &str, measured: f64, threshold: f64) -> Self {
        Self {
            id: id.into(),
            measured,
            threshold,
            comparison: ">=".into(),
            pass: measured >= threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
    pub pass: bool,
}

/// Mass-conservation and positivity checks for one matrix; exposed so
/// fault-injection tests can corrupt a matrix and watch them fail.
pub fn matrix_invariant_checks(m: &crate::transfer::UlamMatrix) -> Vec<VerifyCheck> {
    let mut neg = 0.0f64;
    let dense = m.to_dense();
    for &v in &dense {
        if v < neg {
            neg = v;
        }
    }
    vec![
        VerifyCheck::le("transfer.mass_conservation", m.max_mass_defect(), 1e-12),
        VerifyCheck::ge("transfer.entry_positivity", neg, -1e-15),
    ]
}

fn two_sample_ks(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Runs the cross-module invariant battery for a configuration. Checks
/// are data: every entry reports the measured value, its threshold, and
/// the verdict; the suite fails only through the aggregated flag.
pub fn verify_suite(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    cfg.validate()
        .map_err(|errs| Error::InvalidConfig(errs.join("; ")))?;
    let mut checks: Vec<VerifyCheck> = Vec::new();
    let n_cells = cfg.grid.n_cells;
    let family = Arc::new(make_family(&cfg.family)?);
    let observable = Arc::new(cfg.observable.build()?);
    let n_verify = (*cfg.horizons.last().unwrap()).min(1024);
    let chain = OperatorChain::build(family.clone(), n_cells, n_verify + 1)?;

    // -- transfer -----------------------------------------------------
    let mut mass = 0.0f64;
    for k in 1..=n_verify.min(8) {
        mass = mass.max(chain.matrix(k)?.max_mass_defect());
    }
    checks.push(VerifyCheck::le(
        "transfer.mass_conservation",
        mass,
        cfg.tolerances.mass,
    ));

    let mut integral_defect = 0.0f64;
    for k in 0..=n_verify {
        integral_defect = integral_defect.max((chain.chain_one(k).integral() - 1.0).abs());
    }
    checks.push(VerifyCheck::le(
        "transfer.chain_integral",
        integral_defect,
        1e-10,
    ));

    let nonneg = GridFunction::from_fn(n_cells, |x| (23.0 * x).sin().abs());
    let pushed = chain.apply_chain(0, n_verify.min(32), &nonneg)?;
    checks.push(VerifyCheck::ge(
        "transfer.positivity",
        pushed.min_value(),
        -1e-12,
    ));

    // L1 contraction on a mean-zero function
    let mut v = GridFunction::from_fn(n_cells, |x| (2.0 * std::f64::consts::PI * x).cos());
    v = v.shifted(-v.integral());
    let mut worst_growth = 0.0f64;
    let mut prev = v.mean_abs();
    for k in 1..=n_verify.min(64) {
        v = chain.matrix(k)?.apply(&v);
        let cur = v.mean_abs();
        worst_growth = worst_growth.max(cur - prev);
        prev = cur;
    }
    checks.push(VerifyCheck::le(
        "transfer.l1_contraction",
        worst_growth,
        1e-10,
    ));

    // refinement: chain_one error halves as N doubles. Uses a sequential
    // beta chain long enough that the pushed density carries many
    // non-grid-aligned jumps, so the straddling-cell errors average out.
    {
        let fam_seq = Arc::new(MapFamily::beta_sequence(1.9, 1.0, 0.5)?);
        let depth = 32;
        let reference = OperatorChain::build(fam_seq.clone(), 8192, depth)?;
        let coarse_err = |n: usize| -> Result<f64> {
            let c = OperatorChain::build(fam_seq.clone(), n, depth)?;
            let fine = reference.chain_one(depth);
            let ratio = 8192 / n;
            let mut err = 0.0;
            for (i, &v) in c.chain_one(depth).values().iter().enumerate() {
                let avg: f64 = fine.values()[i * ratio..(i + 1) * ratio]
                    .iter()
                    .sum::<f64>()
                    / ratio as f64;
                err += (v - avg).abs();
            }
            Ok(err / n as f64)
        };
        let (e1, e2, e3) = (coarse_err(256)?, coarse_err(512)?, coarse_err(1024)?);
        let worst_ratio = (e1 / e2).min(e2 / e3);
        checks.push(VerifyCheck::ge(
            "transfer.refinement_halving",
            worst_ratio,
            1.5,
        ));
    }

    let props = property_report(&chain)?;
    checks.push(VerifyCheck::ge(
        "transfer.min_lower_bound",
        props.min_lower_bound,
        f64::MIN_POSITIVE,
    ));
    checks.push(VerifyCheck::le(
        "transfer.dec_gamma",
        props.dec.gamma_hat,
        1.0 - 1e-9,
    ));
    checks.push(VerifyCheck::le(
        "transfer.sup_bound",
        props.sup_bound,
        1e6,
    ));

    // -- maps ----------------------------------------------------------
    let mut roundtrip = 0.0f64;
    for k in [1usize, 2, 5] {
        for i in 0..64 {
            let y = (i as f64 + 0.5) / 64.0;
            for (x, _) in family.branch_inverses(k, y)? {
                roundtrip = roundtrip.max((family.eval(k, x)? - y).abs());
            }
        }
    }
    checks.push(VerifyCheck::le("maps.inverse_roundtrip", roundtrip, 1e-12));

    // pointwise preimage density integrates to 1
    let mut density_integral = 0.0;
    for i in 0..n_cells {
        let y = (i as f64 + 0.5) / n_cells as f64;
        density_integral += family
            .branch_inverses(1, y)?
            .iter()
            .map(|(_, d)| 1.0 / d)
            .sum::<f64>();
    }
    density_integral /= n_cells as f64;
    checks.push(VerifyCheck::le(
        "maps.preimage_density_integral",
        (density_integral - 1.0).abs(),
        0.01,
    ));

    if family.beta_at(1).is_some() {
        let mut schedule_defect = 0.0f64;
        if let FamilyConfig::BetaSequence { beta, theta, .. } = &cfg.family {
            for k in 1..=200usize {
                let b = family.beta_at(k).unwrap();
                schedule_defect =
                    schedule_defect.max((b - beta).abs() - (k as f64).powf(-theta));
            }
        }
        checks.push(VerifyCheck::le(
            "maps.beta_schedule",
            schedule_defect,
            1e-15,
        ));
    }

    // -- decomposition ---------------------------------------------------
    let set = build_decomposition(
        &chain,
        observable.clone(),
        &DecompOptions {
            horizon: n_verify,
            corr_window: CorrWindow::Auto {
                gamma_hat: props.dec.gamma_hat,
            },
        },
    )?;

    let mut centering_defect = 0.0f64;
    for k in (0..=n_verify).step_by((n_verify / 16).max(1)) {
        let c = set.vbar_grid(k).dot_measure(chain.chain_one(k));
        centering_defect = centering_defect.max(c.abs());
    }
    checks.push(VerifyCheck::le(
        "decomp.centering",
        centering_defect,
        1e-10,
    ));

    // telescoping identity along sampled orbits
    let mut telescope = 0.0f64;
    for r in 0..5u64 {
        let orbit = sample_orbit(
            &family,
            n_verify,
            SeedRecord::new(cfg.seed, StreamDomain::Diagnostics, 1000 + r),
        )?;
        let lhs: f64 = (0..n_verify)
            .map(|k| set.vbar_at(k, orbit.point(k)))
            .sum();
        let mut rhs = set.h(n_verify).eval_interp(orbit.point(n_verify));
        for k in 0..n_verify {
            rhs += set.psi_at(k, orbit.point(k), orbit.point(k + 1));
        }
        telescope = telescope.max((lhs - rhs).abs());
    }
    checks.push(VerifyCheck::le(
        "decomp.telescoping",
        telescope,
        1e-9 * n_verify as f64,
    ));

    // reverse-MDS orthogonality witnessed on 5 random BV test functions
    let mut ortho = 0.0f64;
    {
        let mut rng = SeedRecord::new(cfg.seed, StreamDomain::Diagnostics, 2000).rng();
        use rand::Rng;
        for _ in 0..5 {
            let coarse: Vec<f64> = (0..16).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let g = GridFunction::from_fn(n_cells, |x| coarse[(x * 16.0) as usize % 16]);
            for k in (0..n_verify.min(64)).step_by(13) {
                let comp = decomp::compose_with_map(&g, &family, k + 1)?;
                let val = set
                    .psi(k)
                    .mul(chain.chain_one(k))
                    .dot_measure(&comp)
                    .abs();
                ortho = ortho.max(val);
            }
        }
    }
    checks.push(VerifyCheck::le("decomp.mds_orthogonality", ortho, 1e-6));

    let sig2 = set.big_sigma2();
    let sig_mono = sig2
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(0.0f64, f64::max)
        .max(
            set.sigma2()
                .windows(2)
                .map(|w| w[0] - w[1])
                .fold(0.0f64, f64::max),
        );
    checks.push(VerifyCheck::le("decomp.variance_monotone", sig_mono, 1e-9));
    checks.push(VerifyCheck::le(
        "decomp.variance_zero_at_origin",
        sig2[0].abs() + set.sigma2()[0].abs(),
        0.0,
    ));

    // Sigma_n vs sigma_n within the coboundary bound
    let bound = 2.0 * set.max_h_sup() + 0.01;
    let mut gap = 0.0f64;
    for k in 1..=n_verify {
        gap = gap.max((sig2[k].sqrt() - set.sigma2()[k].sqrt()).abs());
    }
    checks.push(VerifyCheck::le("decomp.sigma_gap_vs_h", gap, bound));

    // certificate residual shrinks (mean norm) when N doubles
    {
        let horizon = n_verify.min(128);
        let residual_at = |n: usize| -> Result<f64> {
            let c = OperatorChain::build(family.clone(), n, horizon + 1)?;
            let s = build_decomposition(
                &c,
                observable.clone(),
                &DecompOptions {
                    horizon,
                    corr_window: CorrWindow::Fixed(8),
                },
            )?;
            Ok(s.residual_mean().iter().fold(0.0f64, |m, &v| m.max(v)))
        };
        let (r_coarse, r_fine) = (residual_at(n_cells / 2)?, residual_at(n_cells)?);
        checks.push(VerifyCheck::le(
            "decomp.residual_refinement",
            r_fine,
            r_coarse + 1e-15,
        ));
    }

    // -- process ---------------------------------------------------------
    let mut wn_endpoint = 0.0f64;
    let mut v_monotone_defect = 0.0f64;
    for r in 0..5u64 {
        let orbit = sample_orbit(
            &family,
            n_verify,
            SeedRecord::new(cfg.seed, StreamDomain::Diagnostics, 3000 + r),
        )?;
        let w = build_wn(&orbit, &set, PathConvention::Standard)?;
        wn_endpoint = wn_endpoint.max(w.eval(0.0).abs());
        let s_n: f64 = (0..n_verify)
            .map(|k| set.vbar_at(k, orbit.point(k)))
            .sum();
        wn_endpoint = wn_endpoint.max((w.eval(1.0) * sig2[n_verify].sqrt() - s_n).abs());
        let vq = quadratic_variation(&orbit, &set)?;
        for w2 in vq.windows(2) {
            v_monotone_defect = v_monotone_defect.max(w2[0] - w2[1]);
        }
    }
    checks.push(VerifyCheck::le(
        "process.wn_endpoints",
        wn_endpoint,
        1e-10,
    ));
    checks.push(VerifyCheck::le(
        "process.quadratic_variation_monotone",
        v_monotone_defect,
        1e-12,
    ));

    // E[V_nn] near 1 over a Monte Carlo ensemble
    {
        let count = 10_000usize;
        let vnn: Vec<f64> = (0..count)
            .into_par_iter()
            .map(|r| {
                let orbit = sample_orbit(
                    &family,
                    n_verify,
                    SeedRecord::new(cfg.seed, StreamDomain::Diagnostics, 10_000 + r as u64),
                )?;
                Ok(*quadratic_variation(&orbit, &set)?.last().unwrap())
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean = vnn.iter().sum::<f64>() / count as f64;
        let var = vnn.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count as f64 - 1.0);
        let se = (var / count as f64).sqrt();
        checks.push(VerifyCheck::le(
            "process.v_terminal_mean",
            (mean - 1.0).abs(),
            3.0 * se.max(1e-9),
        ));
    }

    // g-transform: involution and 2-Lipschitz for the sup metric
    {
        let mut rng = SeedRecord::new(cfg.seed, StreamDomain::Diagnostics, 4000).rng();
        use rand::Rng;
        let mut invol = 0.0f64;
        let mut lip_excess = 0.0f64;
        for _ in 0..20 {
            let m = 2 + (rng.gen::<u64>() % 30) as usize;
            let mut times: Vec<f64> = vec![0.0];
            for i in 1..m {
                times.push(i as f64 / m as f64 + 0.0);
            }
            times.push(1.0);
            // the transform is an involution on paths vanishing at 0
            // (g(g(u)) = u - u(0) in general)
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut vals: Vec<f64> =
                    (0..=m).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                vals[0] = 0.0;
                PolygonalPath::new(times.clone(), vals, PathConvention::Standard)
            };
            let u = mk(&mut rng);
            let w = mk(&mut rng);
            let gg = g_transform(&g_transform(&u));
            for (a, b) in gg.values().iter().zip(u.values()) {
                invol = invol.max((a - b).abs());
            }
            let d = path_sup_distance(&u, &w);
            let dg = path_sup_distance(&g_transform(&u), &g_transform(&w));
            lip_excess = lip_excess.max(dg - 2.0 * d);
        }
        checks.push(VerifyCheck::le("process.g_involution", invol, 1e-14));
        checks.push(VerifyCheck::le("process.g_lipschitz", lip_excess, 1e-12));
    }

    // block decomposition structure
    {
        let blocks = block_decomposition(&set, &chain, 1.0)?;
        let covered = blocks.intervals.first().map_or(false, |f| f.0 == 0)
            && blocks.intervals.last().map_or(false, |l| l.1 == n_verify)
            && blocks.intervals.windows(2).all(|w| w[0].1 == w[1].0);
        checks.push(VerifyCheck::ge(
            "process.block_cover",
            covered as u8 as f64,
            1.0,
        ));
        checks.push(VerifyCheck::le(
            "process.block_overshoot_count",
            blocks.overshoot.len() as f64,
            0.0,
        ));
    }

    // -- brownian ----------------------------------------------------------
    {
        let e = crate::brownian::sample_bm(100_000, 16, cfg.seed, 1 << 40)?;
        let d = crate::brownian::bm_diagnostics(&e);
        for i in 0..4 {
            checks.push(VerifyCheck::le(
                "brownian.b0_exact",
                e.paths.path_values(i)[0].abs(),
                0.0,
            ));
        }
        checks.push(VerifyCheck::le(
            "brownian.terminal_variance",
            (d.var_at_one - 1.0).abs(),
            0.02,
        ));
        checks.push(VerifyCheck::le(
            "brownian.covariance_half_one",
            (d.cov_half_one - 0.5).abs(),
            0.02,
        ));
        checks.push(VerifyCheck::le(
            "brownian.increment_correlation",
            d.disjoint_increment_corr.abs(),
            0.01,
        ));

        // scaling invariance: c B(t/c^2) vs fresh B(1) at the 1% level
        let c = 2.0f64;
        let mut rescaled: Vec<f64> = (0..e.paths.count())
            .map(|i| c * e.paths.path(i).eval(1.0 / (c * c)))
            .collect();
        let fresh = crate::brownian::sample_bm(100_000, 16, cfg.seed, 1 << 41)?;
        let mut fresh_b1: Vec<f64> = (0..fresh.paths.count())
            .map(|i| *fresh.paths.path_values(i).last().unwrap())
            .collect();
        let ks = two_sample_ks(&mut rescaled, &mut fresh_b1);
        let critical = 1.628 * (2.0 / 100_000.0f64).sqrt();
        checks.push(VerifyCheck::le("brownian.scaling_ks", ks, critical));

        // DKW-scale bound on inverse-CDF normal draws
        let mut rng = SeedRecord::new(cfg.seed, StreamDomain::Diagnostics, 5000).rng();
        let draws: Vec<f64> = (0..100_000)
            .map(|_| crate::rng::standard_normal(&mut rng))
            .collect();
        let d = crate::brownian::kolmogorov_distance(&draws, standard_normal_cdf)?;
        checks.push(VerifyCheck::le(
            "brownian.dkw_normal",
            d,
            1.95 / (100_000.0f64).sqrt() * 1.5,
        ));
    }

    // -- wasserstein ---------------------------------------------------------
    {
        use rand::Rng;
        let mut rng = SeedRecord::new(cfg.seed, StreamDomain::Diagnostics, 6000).rng();
        // exact assignment equals brute force on random small matrices
        let mut worst = 0.0f64;
        for trial in 0..200 {
            let k = 2 + (trial % 6);
            let cost: Vec<f64> = (0..k * k).map(|_| rng.gen::<f64>()).collect();
            let (_, total) = solve_assignment(&cost, k);
            worst = worst.max((total - brute_force_assignment(&cost, k)).abs());
        }
        checks.push(VerifyCheck::le(
            "wasserstein.assignment_oracle",
            worst,
            1e-12,
        ));

        // constant paths reduce to the 1-D coupling
        let xs: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let ys: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let mk = |levels: &[f64]| {
            let times = vec![0.0, 1.0];
            let mut values = Vec::new();
            for &c in levels {
                values.extend_from_slice(&[c, c]);
            }
            PathEnsemble::new(times, values, PathConvention::Standard)
        };
        let (ea, eb) = (mk(&xs), mk(&ys));
        let ot = OtOptions::default();
        let exact = empirical_wp_paths(&ea, &eb, 2.0, OtMode::Exact, &ot)?;
        let oned = wp_1d(&xs, &ys, 2.0)?;
        checks.push(VerifyCheck::le(
            "wasserstein.constant_paths_match_1d",
            (exact.value - oned).abs(),
            1e-12,
        ));

        // triangle inequality and p-monotonicity on random ensembles
        let zs: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let ec = mk(&zs);
        let ab = empirical_wp_paths(&ea, &eb, 2.0, OtMode::Exact, &ot)?.value;
        let bc = empirical_wp_paths(&eb, &ec, 2.0, OtMode::Exact, &ot)?.value;
        let ac = empirical_wp_paths(&ea, &ec, 2.0, OtMode::Exact, &ot)?.value;
        checks.push(VerifyCheck::le(
            "wasserstein.triangle",
            ac - (ab + bc),
            1e-10,
        ));
        let w1 = empirical_wp_paths(&ea, &eb, 1.0, OtMode::Exact, &ot)?.value;
        checks.push(VerifyCheck::le(
            "wasserstein.monotone_in_p",
            w1 - ab,
            1e-12,
        ));

        // entropic upper bound on a separated instance
        let lo: Vec<f64> = (0..16).map(|_| 0.01 * rng.gen::<f64>()).collect();
        let hi: Vec<f64> = (0..16).map(|_| 1.0 + 0.01 * rng.gen::<f64>()).collect();
        let (el, eh) = (mk(&lo), mk(&hi));
        let exact = empirical_wp_paths(&el, &eh, 2.0, OtMode::Exact, &ot)?.value;
        let ent = empirical_wp_paths(
            &el,
            &eh,
            2.0,
            OtMode::Entropic,
            &OtOptions {
                epsilon: 0.005,
                ..Default::default()
            },
        )?
        .value;
        checks.push(VerifyCheck::ge(
            "wasserstein.entropic_upper_bounds",
            ent - exact,
            -1e-9,
        ));
        checks.push(VerifyCheck::le(
            "wasserstein.entropic_gap",
            (ent - exact) / exact.max(1e-12),
            0.02,
        ));
    }

    // -- experiments ----------------------------------------------------------
    {
        let mut small = ExperimentConfig::doubling_cosine(vec![16, 32], 256, 32, cfg.seed);
        small.ensemble.bm_grid_min = 32;
        let a = rate_csv(&run_rate_experiment(&small, false)?);
        let b = rate_csv(&run_rate_experiment(&small, false)?);
        checks.push(VerifyCheck::le(
            "experiments.rate_determinism",
            (a != b) as u8 as f64,
            0.0,
        ));
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { checks, pass })
}
