//! Command-line runner: builds operator chains, decompositions, path and
//! Brownian ensembles, empirical Wasserstein distances, the rate study,
//! and the verification suite, all driven by a TOML config file.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use wiplab::decomp::{build_decomposition, export, CorrWindow, DecompOptions};
use wiplab::experiments::{
    rate_csv, run_rate_experiment, verify_suite, wasserstein_csv_row, ExperimentConfig,
    WASSERSTEIN_CSV_HEADER,
};
use wiplab::maps::make_family;
use wiplab::process::{build_mn, build_wn, sample_orbit, PathConvention, PathEnsemble};
use wiplab::rng::{SeedRecord, StreamDomain};
use wiplab::transfer::{property_report, write_matrix_cache, OperatorChain};
use wiplab::wasserstein::{empirical_wp_paths, OtOptions};

#[derive(Parser)]
#[command(
    name = "wiplab",
    about = "Sequential interval dynamics: transfer operators, martingale decompositions, and empirical Wasserstein rates"
)]
struct Cli {
    /// Path to the TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (defaults to the config's output_dir or cwd).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Proceed even when the (MIN)/(DEC) property checks fail.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the Ulam chain and report the (DEC)/(MIN)/(SUP) diagnostics.
    BuildOperators {
        /// Also write per-index binary matrix caches into the output dir.
        #[arg(long)]
        write_cache: bool,
        /// Cache at most this many leading indices.
        #[arg(long, default_value_t = 8)]
        cache_limit: usize,
    },
    /// Build the martingale-coboundary decomposition and export its tables.
    Decompose,
    /// Sample an ensemble of paths (wn, mn, xn, or bm) at one horizon.
    Simulate {
        /// Which process to sample.
        #[arg(long, default_value = "wn")]
        process: String,
        /// Horizon (defaults to the largest configured one).
        #[arg(long)]
        horizon: Option<usize>,
        /// Also write a CSV alongside the binary ensemble.
        #[arg(long)]
        csv: bool,
    },
    /// Empirical W_p between the W_n ensemble and Brownian paths at one horizon.
    Wasserstein {
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Full rate study over all configured horizons.
    Rate,
    /// Run the cross-module verification suite (nonzero exit on failure).
    Verify,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .context("--config <path> is required")?;
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_toml_str(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Err(errs) = cfg.validate() {
        for e in &errs {
            eprintln!("config error: {e}");
        }
        bail!("configuration invalid ({} errors)", errs.len());
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_out(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("building thread pool")?;
    }

    match &cli.command {
        Command::BuildOperators {
            write_cache,
            cache_limit,
        } => {
            let cfg = load_config(&cli)?;
            let dir = out_dir(&cli, &cfg)?;
            let family = Arc::new(make_family(&cfg.family)?);
            for w in family.warnings() {
                eprintln!("warning: {w}");
            }
            let n_max = *cfg.horizons.last().unwrap();
            let chain = OperatorChain::build(family.clone(), cfg.grid.n_cells, n_max + 1)?;
            let report = property_report(&chain)?;
            if !report.min_ok || !report.dec.dec_ok {
                eprintln!(
                    "property check failed: min {} gamma {}",
                    report.min_lower_bound, report.dec.gamma_hat
                );
                if !cli.force {
                    bail!("pass --force to continue despite failed property checks");
                }
            }
            write_out(
                &dir.join("operators.json"),
                &serde_json::to_string_pretty(&report)?,
            )?;
            if *write_cache {
                for k in 1..=n_max.min(*cache_limit) {
                    let m = chain.matrix(k)?;
                    let path = dir.join(format!(
                        "ulam_{:016x}_k{}_n{}.bin",
                        family.family_hash(),
                        k,
                        cfg.grid.n_cells
                    ));
                    let mut f = fs::File::create(&path)?;
                    write_matrix_cache(&mut f, family.family_hash(), &m)?;
                    println!("wrote {}", path.display());
                }
            }
        }

        Command::Decompose => {
            let cfg = load_config(&cli)?;
            let dir = out_dir(&cli, &cfg)?;
            let family = Arc::new(make_family(&cfg.family)?);
            let observable = Arc::new(cfg.observable.build()?);
            let n_max = *cfg.horizons.last().unwrap();
            let chain = OperatorChain::build(family, cfg.grid.n_cells, n_max + 1)?;
            let props = property_report(&chain)?;
            if (!props.min_ok || !props.dec.dec_ok) && !cli.force {
                bail!(
                    "property checks failed (min {}, gamma {}); pass --force to override",
                    props.min_lower_bound,
                    props.dec.gamma_hat
                );
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
            write_out(
                &dir.join("decomposition.json"),
                &serde_json::to_string_pretty(&export(&set))?,
            )?;
        }

        Command::Simulate {
            process,
            horizon,
            csv,
        } => {
            let cfg = load_config(&cli)?;
            let dir = out_dir(&cli, &cfg)?;
            let n = horizon.unwrap_or(*cfg.horizons.last().unwrap());
            let count = cfg.ensemble.count;
            let ensemble: PathEnsemble = match process.as_str() {
                "bm" => {
                    wiplab::brownian::sample_bm(count, n.max(cfg.ensemble.bm_grid_min), cfg.seed, 0)?
                        .paths
                }
                // X_n vertex grids are orbit-dependent (quadratic
                // variation times), so they cannot share one ensemble grid.
                "xn" => {
                    bail!("xn paths have per-orbit vertex grids; use wn or mn for ensemble export")
                }
                kind @ ("wn" | "mn") => {
                    let family = Arc::new(make_family(&cfg.family)?);
                    let observable = Arc::new(cfg.observable.build()?);
                    let chain = OperatorChain::build(family.clone(), cfg.grid.n_cells, n + 1)?;
                    let props = property_report(&chain)?;
                    let set = build_decomposition(
                        &chain,
                        observable,
                        &DecompOptions {
                            horizon: n,
                            corr_window: CorrWindow::Auto {
                                gamma_hat: props.dec.gamma_hat,
                            },
                        },
                    )?;
                    let convention: PathConvention = cfg.convention.into();
                    let paths = (0..count)
                        .map(|r| {
                            let seed = SeedRecord::new(cfg.seed, StreamDomain::Orbit, r as u64);
                            let orbit = sample_orbit(set.family(), n, seed)?;
                            match kind {
                                "wn" => build_wn(&orbit, &set, convention),
                                _ => build_mn(&orbit, &set, convention),
                            }
                        })
                        .collect::<wiplab::Result<Vec<_>>>()?;
                    PathEnsemble::from_paths(&paths)?
                }
                other => bail!("unknown process kind {other} (expected wn|mn|xn|bm)"),
            };
            let base = dir.join(format!("{process}_n{n}"));
            let mut f = fs::File::create(base.with_extension("bin"))?;
            ensemble.write_binary(&mut f)?;
            println!("wrote {}", base.with_extension("bin").display());
            if *csv {
                let mut f = fs::File::create(base.with_extension("csv"))?;
                ensemble.write_csv(&mut f)?;
                println!("wrote {}", base.with_extension("csv").display());
            }
        }

        Command::Wasserstein { horizon } => {
            let cfg = load_config(&cli)?;
            let dir = out_dir(&cli, &cfg)?;
            let n = horizon.unwrap_or(*cfg.horizons.last().unwrap());
            let family = Arc::new(make_family(&cfg.family)?);
            let observable = Arc::new(cfg.observable.build()?);
            let chain = OperatorChain::build(family.clone(), cfg.grid.n_cells, n + 1)?;
            let props = property_report(&chain)?;
            if (!props.min_ok || !props.dec.dec_ok) && !cli.force {
                bail!("property checks failed; pass --force to override");
            }
            let set = build_decomposition(
                &chain,
                observable,
                &DecompOptions {
                    horizon: n,
                    corr_window: CorrWindow::Auto {
                        gamma_hat: props.dec.gamma_hat,
                    },
                },
            )?;
            let convention: PathConvention = cfg.convention.into();
            let paths = (0..cfg.ensemble.count)
                .map(|r| {
                    let seed = SeedRecord::new(cfg.seed, StreamDomain::Orbit, r as u64);
                    let orbit = sample_orbit(set.family(), n, seed)?;
                    build_wn(&orbit, &set, convention)
                })
                .collect::<wiplab::Result<Vec<_>>>()?;
            let wn = PathEnsemble::from_paths(&paths)?;
            let bm = wiplab::brownian::sample_bm_on_grid(
                cfg.ensemble.count,
                wn.times(),
                cfg.seed,
                0,
            )?;
            let started = Instant::now();
            let res = empirical_wp_paths(
                &wn,
                &bm.paths,
                cfg.ensemble.p,
                cfg.ensemble.mode.into(),
                &OtOptions {
                    exact_cap: cfg.ensemble.exact_cap,
                    epsilon: cfg.ensemble.epsilon,
                    ..Default::default()
                },
            )?;
            let runtime = started.elapsed().as_millis();
            let sigma_n = set.big_sigma2()[n].sqrt();
            let row = wasserstein_csv_row(
                n,
                sigma_n,
                cfg.ensemble.count,
                cfg.ensemble.p,
                cfg.ensemble.mode,
                res.value,
                runtime,
                cfg.seed,
            );
            println!("{WASSERSTEIN_CSV_HEADER}");
            println!("{row}");
            write_out(
                &dir.join(format!("wasserstein_n{n}.csv")),
                &format!("{WASSERSTEIN_CSV_HEADER}\n{row}\n"),
            )?;
        }

        Command::Rate => {
            let cfg = load_config(&cli)?;
            let dir = out_dir(&cli, &cfg)?;
            let report = run_rate_experiment(&cfg, cli.force)?;
            write_out(&dir.join("rate.csv"), &rate_csv(&report))?;
            write_out(
                &dir.join("rate_summary.json"),
                &serde_json::to_string_pretty(&report)?,
            )?;
            if let Some((slope, se)) = report.slope {
                println!(
                    "slope {slope:.4} +- {se:.4} (band [{}, {}]: {})",
                    report.slope_band.0,
                    report.slope_band.1,
                    match report.band_pass {
                        Some(true) => "pass",
                        Some(false) => "FAIL",
                        None => "n/a",
                    }
                );
            }
        }

        Command::Verify => {
            let cfg = load_config(&cli)?;
            let dir = out_dir(&cli, &cfg)?;
            let report = verify_suite(&cfg)?;
            write_out(
                &dir.join("verify.json"),
                &serde_json::to_string_pretty(&report)?,
            )?;
            for c in &report.checks {
                println!(
                    "{} {} (measured {:.3e} {} {:.3e})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.id,
                    c.measured,
                    c.comparison,
                    c.threshold
                );
            }
            if !report.pass {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}
