//! `kcmtree`: exact spectra, recursions, simulation and scaling experiments.
//!
//! Exit status: 0 on success, 2 when a verdict fails, 1 on error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;

use kcmtree::analysis::{
    run_critical_scaling, run_discontinuous_probe, run_mixing_scaling, run_quasicritical_scaling, write_outputs,
    ExperimentConfig, Verdict,
};
use kcmtree::bounds::product_mixing_threshold;
use kcmtree::exact::{exact_report, StartPolicy};
use kcmtree::mc::{simulate, InitialCondition, Observable, SimulationSpec};
use kcmtree::recursions::{
    certificate_resolution, certify_pn_bound, critical_bound, critical_bound_exact, pn_series, subcritical_bound,
    subcritical_bounds, BoundCertificate,
};
use kcmtree::{Error, ModelParams, Rational, Result, TreeTopology};

#[derive(Parser)]
#[command(
    name = "kcmtree",
    version,
    about = "Oriented kinetically constrained models on k-ary trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON ExperimentConfig; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: the config's output_dir, else the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed for all randomized tasks.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Branching number.
    #[arg(long)]
    k: Option<usize>,
    /// Tree depth.
    #[arg(long = "depth", short = 'L')]
    depth: usize,
    /// Occupation density (default: the critical density).
    #[arg(long)]
    p: Option<f64>,
    /// Empty children required to flip (default: k).
    #[arg(long)]
    j: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral gap and relaxation time of a small tree.
    ExactGap {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Gap plus worst-start mixing times T_1 and T_2.
    ExactMix {
        #[command(flatten)]
        model: ModelArgs,
        /// `all`, `auto`, or `random:<count>`.
        #[arg(long, default_value = "auto")]
        starts: String,
        #[command(flatten)]
        common: Common,
    },
    /// The p_n series with its analytic bounds.
    Recursion {
        /// Branching number.
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Empty children required to flip (default: k).
        #[arg(long)]
        j: Option<usize>,
        /// Density as a fraction (`1/2`) or a decimal (`0.45`), read exactly.
        #[arg(long)]
        p: String,
        /// Last generation computed.
        #[arg(long, default_value_t = 1000)]
        n_max: usize,
        #[command(flatten)]
        common: Common,
    },
    /// One equilibrium-sampled trajectory.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 0.0)]
        burn_in: f64,
        #[arg(long, default_value_t = 1.0)]
        sample_interval: f64,
        /// `equilibrium`, `all-ones`, or a hex configuration.
        #[arg(long, default_value = "equilibrium")]
        initial: String,
        /// Comma-separated observables.
        #[arg(long, default_value = "N_r,eta_r,occupied_fraction")]
        observables: String,
        #[command(flatten)]
        common: Common,
    },
    /// T_rel across depths at fixed density, with the regime verdict.
    ScalingCritical {
        #[command(flatten)]
        common: Common,
    },
    /// T_rel against the distance to criticality.
    ScalingQuasicritical {
        #[command(flatten)]
        common: Common,
    },
    /// T_1 and T_2 against the relaxation-time brackets.
    ScalingMixing {
        #[command(flatten)]
        common: Common,
    },
    /// Bootstrap discontinuity scan and relaxation at the critical density.
    DiscontinuousProbe {
        #[command(flatten)]
        common: Common,
    },
    /// Product-chain mixing threshold from per-factor gaps.
    MixBound {
        /// Comma-separated gaps, one per factor.
        #[arg(long, value_delimiter = ',', required = true)]
        gaps: Vec<f64>,
        /// Factor count; with a single gap, that gap is repeated.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

impl ModelArgs {
    fn resolve(&self, cfg: &ExperimentConfig) -> Result<(TreeTopology, ModelParams<f64>)> {
        let mut cfg = cfg.clone();
        cfg.k = self.k.unwrap_or(cfg.k);
        cfg.j = self.j.or(cfg.j);
        cfg.p = self.p.or(cfg.p);
        let tree = TreeTopology::new(cfg.k, self.depth)?;
        let params = ModelParams {
            p: cfg.density()?,
            j: cfg.threshold(),
        };
        params.validate(&tree)?;
        Ok((tree, params))
    }
}

fn parse_rational(s: &str) -> Result<Rational> {
    let bad = || Error::Parse(format!("`{s}` is not a fraction or decimal"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let (a, b): (BigInt, BigInt) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if b.is_zero() {
            return Err(bad());
        }
        return Ok(Rational::new(a, b));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.chars().any(|c| !c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| bad())?;
    Ok(Rational::new(digits, BigInt::from(10).pow(frac.len() as u32)))
}

fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = path {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, &text)?;
    }
    writeln!(io::stdout(), "{text}")?;
    Ok(())
}

fn report_verdict(name: &str, verdict: &Verdict, json: &Path) -> u8 {
    for c in &verdict.checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!(
        "{name}: {} ({})",
        if verdict.passed { "pass" } else { "FAIL" },
        json.display()
    );
    if verdict.passed {
        0
    } else {
        2
    }
}

#[derive(Serialize)]
struct RecursionRow {
    n: usize,
    p_n: f64,
    harmonic_bound: Option<f64>,
    geometric_bound: Option<f64>,
}

#[derive(Serialize)]
struct RecursionSummary {
    k: usize,
    j: usize,
    p: String,
    n_max: usize,
    /// Exact certificate of `p_n <= 2/((k-1)n)`; absent outside `j = k`, `p <= 1/k`.
    harmonic_bound: Option<BoundCertificate>,
    /// Exact certificate of `p_n <= p(kp)^n`.
    geometric_bound: Option<BoundCertificate>,
}

#[derive(Serialize)]
struct MixBound {
    n: usize,
    gaps: Vec<f64>,
    t_star: f64,
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::ExactGap { model, common } => {
            let cfg = common.config()?;
            let (tree, params) = model.resolve(&cfg)?;
            let r = exact_report(tree.k(), tree.depth(), params, None)?;
            let out = common.out.as_ref().map(|d| d.join("exact-gap.json"));
            emit_json(&r, out.as_deref())?;
            Ok(0)
        }
        Command::ExactMix { model, starts, common } => {
            let cfg = common.config()?;
            let (tree, params) = model.resolve(&cfg)?;
            let seed = cfg.seed;
            let policy = match starts.as_str() {
                "all" => StartPolicy::All,
                "auto" => StartPolicy::Auto { seed },
                s => match s.strip_prefix("random:").and_then(|c| c.parse().ok()) {
                    Some(count) => StartPolicy::AllOnesPlusRandom { count, seed },
                    None => return Err(Error::Parse(format!("unknown start policy `{s}`"))),
                },
            };
            let r = exact_report(tree.k(), tree.depth(), params, Some(&policy))?;
            let out = common.out.as_ref().map(|d| d.join("exact-mix.json"));
            emit_json(&r, out.as_deref())?;
            let ordered = matches!((r.t1, r.t2), (Some(t1), Some(t2)) if t1 <= t2);
            Ok(if ordered { 0 } else { 2 })
        }
        Command::Recursion { k, j, p, n_max, common } => {
            let j = j.unwrap_or(k);
            let p_exact = parse_rational(&p)?;
            let pf = p_exact.to_f64().ok_or_else(|| Error::Parse(p.clone()))?;
            let series = pn_series(k, pf, j, n_max)?;
            let critical_regime = p_exact <= Rational::new(BigInt::from(1), BigInt::from(k));
            let rows: Vec<RecursionRow> = series
                .values
                .iter()
                .enumerate()
                .map(|(n, &p_n)| RecursionRow {
                    n,
                    p_n,
                    harmonic_bound: (n > 0 && critical_regime)
                        .then(|| critical_bound::<f64>(k, n).ok())
                        .flatten(),
                    geometric_bound: (n > 0 && critical_regime)
                        .then(|| subcritical_bound(k, pf, n).ok())
                        .flatten(),
                })
                .collect();
            let certified = critical_regime && j == k && n_max > 0;
            let certify = |targets: &[Rational]| {
                certify_pn_bound(k, j, &p_exact, n_max, certificate_resolution(&targets[n_max]), |n| {
                    targets[n].clone()
                })
            };
            let (harmonic_bound, geometric_bound) = if certified {
                let critical: Vec<Rational> = (0..=n_max)
                    .map(|n| {
                        if n == 0 {
                            Rational::one()
                        } else {
                            critical_bound_exact(k, n).expect("k >= 2")
                        }
                    })
                    .collect();
                let sub = subcritical_bounds(k, p_exact.clone(), n_max)?;
                (Some(certify(&critical)?), Some(certify(&sub)?))
            } else {
                (None, None)
            };
            let summary = RecursionSummary {
                k,
                j,
                p,
                n_max,
                harmonic_bound,
                geometric_bound,
            };
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let (csv, json) = write_outputs(&dir, "recursion", &summary, &rows)?;
            println!("{}\n{}", csv.display(), json.display());
            let failed = [&summary.harmonic_bound, &summary.geometric_bound]
                .iter()
                .any(|c| c.as_ref().is_some_and(|c| !c.holds()));
            Ok(if failed { 2 } else { 0 })
        }
        Command::Simulate {
            model,
            horizon,
            burn_in,
            sample_interval,
            initial,
            observables,
            common,
        } => {
            let cfg = common.config()?;
            let (tree, params) = model.resolve(&cfg)?;
            let mut spec = SimulationSpec::new(horizon, sample_interval, cfg.seed);
            spec.burn_in = burn_in;
            spec.initial = InitialCondition::parse(&initial, &tree)?;
            spec.observables = observables
                .split(',')
                .map(|s| s.trim().parse::<Observable>())
                .collect::<Result<_>>()?;
            let series = simulate(&tree, params, &spec)?;
            let dir = common.out_dir(&cfg);
            fs::create_dir_all(&dir)?;
            let csv = dir.join("simulate.csv");
            let json = dir.join("simulate.json");
            series.write_csv(fs::File::create(&csv)?)?;
            fs::write(&json, series.metadata_json())?;
            println!("{}\n{}", csv.display(), json.display());
            Ok(0)
        }
        Command::ScalingCritical { common } => {
            let cfg = common.config()?;
            let r = run_critical_scaling(&cfg)?;
            let (_, json) = write_outputs(&common.out_dir(&cfg), "scaling-critical", &r, &r.estimates)?;
            Ok(report_verdict("scaling-critical", &r.verdict, &json))
        }
        Command::ScalingQuasicritical { common } => {
            let cfg = common.config()?;
            let r = run_quasicritical_scaling(&cfg)?;
            let (_, json) = write_outputs(&common.out_dir(&cfg), "scaling-quasicritical", &r, &r.points)?;
            Ok(report_verdict("scaling-quasicritical", &r.verdict, &json))
        }
        Command::ScalingMixing { common } => {
            let cfg = common.config()?;
            let r = run_mixing_scaling(&cfg)?;
            let (_, json) = write_outputs(&common.out_dir(&cfg), "scaling-mixing", &r, &r.rows)?;
            Ok(report_verdict("scaling-mixing", &r.verdict, &json))
        }
        Command::DiscontinuousProbe { common } => {
            let cfg = common.config()?;
            let r = run_discontinuous_probe(&cfg)?;
            let dir = common.out_dir(&cfg);
            let (scan, json) = write_outputs(&dir, "discontinuous-probe", &r, &r.scan)?;
            let (est, _) = write_outputs(&dir, "discontinuous-probe-estimates", &r, &r.estimates)?;
            println!(
                "discontinuous-probe: {} p_c = {:.12}, limit at p_c = {:.6} ({}, {}, {})",
                r.status,
                r.critical_density,
                r.limit_at_critical,
                scan.display(),
                est.display(),
                json.display()
            );
            Ok(0)
        }
        Command::MixBound { gaps, n, common } => {
            let gaps = match (n, gaps.as_slice()) {
                (Some(n), [g]) => vec![*g; n],
                (Some(n), g) if g.len() != n => {
                    return Err(Error::InvalidParameter(format!("{} gaps for n = {n}", g.len())));
                }
                _ => gaps,
            };
            let t_star = product_mixing_threshold(&gaps, gaps.len())?;
            let out = common.out.as_ref().map(|d| d.join("mix-bound.json"));
            emit_json(
                &MixBound {
                    n: gaps.len(),
                    gaps,
                    t_star,
                },
                out.as_deref(),
            )?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    // clap's own usage errors would exit with 2, which is reserved for verdicts.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
