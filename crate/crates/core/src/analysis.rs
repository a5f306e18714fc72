//! Scaling experiments: relaxation and mixing times across depth or distance
//! to criticality, power-law versus exponential model selection, reports.
//!
//! Every report embeds the [`ExperimentConfig`] that produced it, and every
//! randomized task draws its seed from [`task_seed`], so re-running a
//! report's configuration reproduces it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::product_mixing_threshold;
use crate::error::{Error, Result};
use crate::exact::{exact_report, StartPolicy, DEFAULT_VERTEX_CAP};
use crate::mc::{
    pool_relaxation, relaxation_time_mc, tv_lower_profile, InitialCondition, McBudget, PoolOptions,
    REPLICAS_PER_OUTCOME,
};
use crate::model::ModelParams;
use crate::recursions::{
    classify_survival, critical_density, critical_density_bisection, pn_series, test_function_gap_bound, DirichletMode,
    SurvivalVerdict,
};
use crate::tree::{TreeTopology, VertexId};

/// Relative error assigned to points whose reported error is smaller, so
/// exact values do not pin the fit.
pub const REL_ERR_FLOOR: f64 = 0.01;
pub const MIN_FIT_POINTS: usize = 3;
pub const MIN_CRITICAL_EXPONENT: f64 = 1.5;
pub const MIN_R_SQUARED: f64 = 0.95;
/// Largest allowed max/min spread of `T_1 / (L·T_rel(L))` across depths.
pub const MAX_RATIO_SPREAD: f64 = 3.0;
/// Agreement of overlapping exact and Monte Carlo values, in standard errors.
pub const CROSS_CHECK_SIGMAS: f64 = 3.0;
/// Saturation of a deep estimate under depth doubling, in standard errors.
pub const SATURATION_SIGMAS: f64 = 2.0;
/// Total-variation level that defines `T_1`.
pub const TV_MIX_LEVEL: f64 = 0.125;
/// Tolerance of the bisection oracle for the critical density.
pub const BISECTION_TOL: f64 = 1e-8;
pub const BISECTION_BUDGET: usize = 1_000_000;

// ---------------------------------------------------------------------------
// Fits

/// One `(X, T, stderr(T))` observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub x: f64,
    pub t: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    PowerLaw,
    Exponential,
}

/// Weighted least-squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    /// Weighted residual sum of squares.
    pub rss: f64,
    /// Gaussian AIC on log residuals: `n ln(rss/n) + 2·3`.
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    /// Slope of `ln T` on `ln X`.
    pub exponent: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub r_squared: f64,
    /// `AIC(exponential) - AIC(power law)`; positive favors the power law.
    pub model_comparison: f64,
    /// Fit of `ln T` on `X`.
    pub exponential: LineFit,
    pub preferred: Regime,
    pub points: Vec<ScalingPoint>,
}

fn weighted_line(xs: &[f64], ys: &[f64], ws: &[f64]) -> Result<LineFit> {
    let n = xs.len() as f64;
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * (x - mx).powi(2)).sum();
    if !(sxx > 1e-300 * sw) || xs.iter().all(|x| (x - xs[0]).abs() <= 1e-12 * x.abs().max(1.0)) {
        return Err(Error::Fit("degenerate abscissae".into()));
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let tss: f64 = ys.iter().zip(ws).map(|(y, w)| w * (y - my).powi(2)).sum();
    let r_squared = if tss > 0.0 {
        (1.0 - rss / tss).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let slope_stderr = if n > 2.0 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    let aic = n * (rss / n).max(f64::MIN_POSITIVE).ln() + 6.0;
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        rss,
        aic,
    })
}

/// Fits `ln T = a + b ln X` and `ln T = a' + b' X` by weighted least squares
/// with weights `1/σ²`, `σ = max(stderr/T, REL_ERR_FLOOR)` being the error of
/// `ln T`, and selects between them by AIC.
pub fn fit_power_law(points: &[ScalingPoint]) -> Result<ScalingFit> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::Fit(format!("{} points, need {MIN_FIT_POINTS}", points.len())));
    }
    if let Some(pt) = points.iter().find(|pt| !(pt.x > 0.0 && pt.t > 0.0 && pt.stderr >= 0.0)) {
        return Err(Error::Fit(format!("point {pt:?} needs X > 0, T > 0, stderr >= 0")));
    }
    let ys: Vec<f64> = points.iter().map(|pt| pt.t.ln()).collect();
    let ws: Vec<f64> = points
        .iter()
        .map(|pt| (pt.stderr / pt.t).max(REL_ERR_FLOOR).powi(-2))
        .collect();
    let log_x: Vec<f64> = points.iter().map(|pt| pt.x.ln()).collect();
    let lin_x: Vec<f64> = points.iter().map(|pt| pt.x).collect();
    let power = weighted_line(&log_x, &ys, &ws)?;
    let exponential = weighted_line(&lin_x, &ys, &ws)?;
    let model_comparison = exponential.aic - power.aic;
    Ok(ScalingFit {
        exponent: power.slope,
        intercept: power.intercept,
        stderr: power.slope_stderr,
        r_squared: power.r_squared,
        model_comparison,
        exponential,
        preferred: if model_comparison > 0.0 {
            Regime::PowerLaw
        } else {
            Regime::Exponential
        },
        points: points.to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Exact eigensolve; trees of at most `DEFAULT_VERTEX_CAP` vertices.
    Exact,
    /// Full-tree event-driven simulation.
    Mc,
    /// Population dynamics of the root process.
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolBudget {
    pub paths: usize,
    pub replicas: usize,
    /// Reruns allowed when the fitted time scale disagrees with the grid.
    pub max_refinements: usize,
}

impl Default for PoolBudget {
    fn default() -> Self {
        Self {
            paths: 800,
            replicas: 20,
            max_refinements: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub k: usize,
    /// Threshold; `k` when absent.
    pub j: Option<usize>,
    /// Density; the critical density when absent.
    pub p: Option<f64>,
    /// Distances `ε = p_c - p` of the quasi-critical grid.
    pub eps: Vec<f64>,
    pub depths: Vec<usize>,
    /// Per-depth method overrides.
    pub methods: BTreeMap<usize, Method>,
    /// Method for depths beyond the exact cap without an override.
    pub deep_method: Method,
    /// Method for the deep proxy trees of the quasi-critical grid.
    pub quasi_method: Method,
    /// Also simulate the exactly solved depths and compare.
    pub cross_check: bool,
    pub mc: McBudget,
    pub pool: PoolBudget,
    /// Proxy depth `⌊c_depth/ε⌋` of the quasi-critical grid.
    pub c_depth: f64,
    pub min_fit_depth: usize,
    /// Expected regime; derived from `p` versus `p_c` when absent.
    pub expect: Option<Regime>,
    pub start_policy: StartPolicy,
    /// Marginal size of simulated mixing profiles.
    pub profile_marginal: usize,
    /// Scan densities of the discontinuity probe; a grid around `p_c` when absent.
    pub probe_densities: Option<Vec<f64>>,
    pub probe_iterations: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k: 2,
            j: None,
            p: None,
            eps: vec![0.05, 0.1, 0.15, 0.2],
            depths: (2..=8).collect(),
            methods: BTreeMap::new(),
            deep_method: Method::Mc,
            quasi_method: Method::Pool,
            cross_check: true,
            mc: McBudget::default(),
            pool: PoolBudget::default(),
            c_depth: 3.0,
            min_fit_depth: 2,
            expect: None,
            start_policy: StartPolicy::Auto { seed: 0 },
            profile_marginal: 5,
            probe_densities: None,
            probe_iterations: 10_000,
            seed: 0,
            output_dir: None,
        }
    }
}

/// Whether the exact solver accepts a depth-`depth` `k`-ary tree.
pub fn fits_exact(k: usize, depth: usize) -> bool {
    TreeTopology::new(k, depth).is_ok_and(|t| t.vertex_count() <= DEFAULT_VERTEX_CAP)
}

/// Deepest tree the exact solver accepts.
pub fn exact_cap_depth(k: usize) -> usize {
    (0..64).take_while(|&d| fits_exact(k, d)).last().unwrap_or(0)
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn threshold(&self) -> usize {
        self.j.unwrap_or(self.k)
    }

    pub fn critical_density(&self) -> Result<f64> {
        critical_density(self.k, self.threshold())
    }

    pub fn density(&self) -> Result<f64> {
        self.p.map_or_else(|| self.critical_density(), Ok)
    }

    pub fn method_for(&self, depth: usize) -> Method {
        self.methods
            .get(&depth)
            .copied()
            .unwrap_or(if fits_exact(self.k, depth) {
                Method::Exact
            } else {
                self.deep_method
            })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let j = self.threshold();
        if self.k < 2 || j == 0 || j > self.k {
            return bad(format!("need k >= 2 and 1 <= j <= k, got k={}, j={j}", self.k));
        }
        if let Some(p) = self.p {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("density {p} must lie in (0,1)"));
            }
        }
        if self.depths.is_empty() || self.eps.is_empty() {
            return bad("depth and ε grids must be nonempty".into());
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0)) {
            return bad(format!("ε = {e} must be positive"));
        }
        for (&d, &m) in &self.methods {
            if m == Method::Exact && !fits_exact(self.k, d) {
                return bad(format!("depth {d} exceeds the exact state cap"));
            }
        }
        if self.quasi_method == Method::Exact {
            return bad("the quasi-critical proxy trees exceed the exact cap".into());
        }
        if !(self.c_depth > 0.0) {
            return bad(format!("c_depth = {} must be positive", self.c_depth));
        }
        if self.min_fit_depth == 0 {
            return bad("min_fit_depth must be at least 1 (power laws need X > 0)".into());
        }
        if self.profile_marginal == 0 || self.profile_marginal > crate::mc::MAX_MARGINAL {
            return bad(format!("profile_marginal = {} out of range", self.profile_marginal));
        }
        Ok(())
    }
}

/// Stable per-task seed: FNV-1a of the task id mixed with the master seed
/// through the splitmix64 finalizer.
pub fn task_seed(master: u64, task: &str) -> u64 {
    let h = task.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    });
    let mut z = (master ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Relaxation-time estimates

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthEstimate {
    pub depth: usize,
    pub p: f64,
    pub method: Method,
    pub t_rel: f64,
    pub stderr: f64,
    pub seed: Option<u64>,
    /// Simulated events or merged path flips; absent for exact values.
    pub work: Option<u64>,
    pub observable: Option<String>,
}

/// `Var(N_r)/D(N_r)` when it applies (`j = k`).
fn gap_hint(k: usize, j: usize, p: f64, depth: usize) -> Option<f64> {
    (j == k)
        .then(|| test_function_gap_bound(k, p, depth, DirichletMode::ClosedForm).ok())
        .flatten()
        .map(|b| b.bound)
        .filter(|b| b.is_finite() && *b > 0.0)
}

fn exact_estimate(k: usize, j: usize, p: f64, depth: usize) -> Result<DepthEstimate> {
    let r = exact_report(k, depth, ModelParams { p, j }, None)?;
    Ok(DepthEstimate {
        depth,
        p,
        method: Method::Exact,
        t_rel: r.t_rel,
        stderr: 0.0,
        seed: None,
        work: None,
        observable: None,
    })
}

fn mc_estimate(k: usize, j: usize, p: f64, depth: usize, budget: &McBudget, seed: u64) -> Result<DepthEstimate> {
    let tree = TreeTopology::new(k, depth)?;
    let est = relaxation_time_mc(&tree, ModelParams { p, j }, budget, seed, gap_hint(k, j, p, depth))?;
    Ok(DepthEstimate {
        depth,
        p,
        method: Method::Mc,
        t_rel: est.t_rel,
        stderr: est.stderr,
        seed: Some(seed),
        work: Some(est.events),
        observable: Some(est.observable.name().into()),
    })
}

/// One pool run up to the deepest of `depths`, rerun on a rescaled grid
/// while the deepest estimate disagrees with the grid's time scale.
fn pool_estimates(
    k: usize,
    j: usize,
    p: f64,
    depths: &[usize],
    budget: &PoolBudget,
    seed: u64,
) -> Result<Vec<DepthEstimate>> {
    let deepest = *depths
        .iter()
        .max()
        .ok_or_else(|| Error::InvalidParameter("no pool depths".into()))?;
    let mut guess = gap_hint(k, j, p, deepest).unwrap_or(1.0).max(1.0);
    for attempt in 0..=budget.max_refinements {
        let mut opts = PoolOptions::for_time_scale(guess, budget.paths, seed);
        opts.replicas = budget.replicas;
        opts.report_depths = depths.to_vec();
        let report = pool_relaxation(k, j, p, deepest, &opts)?;
        let tau = report.level(deepest).and_then(|l| l.t_rel());
        let settled = tau.is_some_and(|t| t >= 0.5 * guess && t <= 2.0 * guess);
        if settled || attempt == budget.max_refinements {
            return report
                .levels
                .iter()
                .map(|l| {
                    let fit = l.fit.as_ref().ok_or_else(|| {
                        Error::Fit(format!(
                            "pool depth {}: {}",
                            l.depth,
                            l.error.clone().unwrap_or_default()
                        ))
                    })?;
                    Ok(DepthEstimate {
                        depth: l.depth,
                        p,
                        method: Method::Pool,
                        t_rel: fit.tau,
                        stderr: fit.stderr,
                        seed: Some(seed),
                        work: Some((l.mean_flips * (budget.paths * budget.replicas) as f64) as u64),
                        observable: Some("eta_r".into()),
                    })
                })
                .collect();
        }
        guess = tau.unwrap_or(8.0 * guess);
    }
    unreachable!("the last attempt always returns")
}

/// Relaxation times at `depths`, each by its configured method; exact and
/// simulated tasks run concurrently, pool depths share one run.
fn estimate_depths(
    cfg: &ExperimentConfig,
    p: f64,
    depths: &[(usize, Method)],
    tag: &str,
) -> Result<Vec<DepthEstimate>> {
    let (k, j) = (cfg.k, cfg.threshold());
    let pool_depths: Vec<usize> = depths.iter().filter(|d| d.1 == Method::Pool).map(|d| d.0).collect();
    let mut out: Vec<DepthEstimate> = depths
        .par_iter()
        .filter(|d| d.1 != Method::Pool)
        .map(|&(depth, method)| match method {
            Method::Exact => exact_estimate(k, j, p, depth),
            Method::Mc => mc_estimate(
                k,
                j,
                p,
                depth,
                &cfg.mc,
                task_seed(cfg.seed, &format!("{tag}/mc/p={p}/L={depth}")),
            ),
            Method::Pool => unreachable!("filtered"),
        })
        .collect::<Result<_>>()?;
    if !pool_depths.is_empty() {
        let seed = task_seed(cfg.seed, &format!("{tag}/pool/p={p}"));
        out.extend(pool_estimates(k, j, p, &pool_depths, &cfg.pool, seed)?);
    }
    out.sort_by_key(|e| (e.depth, e.method as u8));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Verdicts

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl Verdict {
    fn new(checks: Vec<Check>) -> Self {
        Self {
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

// ---------------------------------------------------------------------------
// Critical scaling

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheck {
    pub depth: usize,
    pub exact: f64,
    pub mc: f64,
    pub mc_stderr: f64,
    pub sigmas: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalReport {
    pub config: ExperimentConfig,
    pub k: usize,
    pub j: usize,
    pub p: f64,
    pub critical_density: f64,
    pub expected: Option<Regime>,
    pub estimates: Vec<DepthEstimate>,
    pub cross_checks: Vec<CrossCheck>,
    pub fit: Option<ScalingFit>,
    pub fit_error: Option<String>,
    pub verdict: Verdict,
}

/// `T_rel` across the depth grid, a fit in `L` and the regime verdict:
/// power law at `p_c`, exponential above it.
pub fn run_critical_scaling(cfg: &ExperimentConfig) -> Result<CriticalReport> {
    cfg.validate()?;
    let p = cfg.density()?;
    let pc = cfg.critical_density()?;
    let mut plan: Vec<(usize, Method)> = cfg.depths.iter().map(|&d| (d, cfg.method_for(d))).collect();
    if cfg.cross_check {
        let extra: Vec<(usize, Method)> = plan
            .iter()
            .filter(|d| d.1 == Method::Exact)
            .map(|d| (d.0, Method::Mc))
            .collect();
        plan.extend(extra);
    }
    let all = estimate_depths(cfg, p, &plan, "critical")?;
    let cross_checks: Vec<CrossCheck> = all
        .iter()
        .filter(|e| e.method == Method::Exact)
        .filter_map(|ex| {
            let mc = all.iter().find(|e| e.depth == ex.depth && e.method == Method::Mc)?;
            let se = (ex.stderr.powi(2) + mc.stderr.powi(2)).sqrt();
            let sigmas = (mc.t_rel - ex.t_rel).abs() / se;
            Some(CrossCheck {
                depth: ex.depth,
                exact: ex.t_rel,
                mc: mc.t_rel,
                mc_stderr: mc.stderr,
                sigmas,
                passed: sigmas <= CROSS_CHECK_SIGMAS,
            })
        })
        .collect();
    // One value per depth; the configured method wins over cross-check runs.
    let estimates: Vec<DepthEstimate> = cfg
        .depths
        .iter()
        .filter_map(|&d| {
            all.iter()
                .find(|e| e.depth == d && e.method == cfg.method_for(d))
                .cloned()
        })
        .collect();
    let points: Vec<ScalingPoint> = estimates
        .iter()
        .filter(|e| e.depth >= cfg.min_fit_depth)
        .map(|e| ScalingPoint {
            x: e.depth as f64,
            t: e.t_rel,
            stderr: e.stderr,
        })
        .collect();
    let (fit, fit_error) = match fit_power_law(&points) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let expected = cfg.expect.or(if (p - pc).abs() <= 1e-9 {
        Some(Regime::PowerLaw)
    } else if p > pc {
        Some(Regime::Exponential)
    } else {
        None
    });
    let mut checks = vec![check(
        "exact-mc-agreement",
        cross_checks.iter().all(|c| c.passed),
        cross_checks
            .iter()
            .map(|c| format!("L={}: {:.2}σ", c.depth, c.sigmas))
            .collect::<Vec<_>>()
            .join(", "),
    )];
    match &fit {
        None => checks.push(check("fit", false, fit_error.clone().unwrap_or_default())),
        Some(f) => {
            if let Some(exp) = expected {
                checks.push(check(
                    "regime",
                    f.preferred == exp,
                    format!(
                        "preferred {:?}, ΔAIC(exp - power) = {:.2}",
                        f.preferred, f.model_comparison
                    ),
                ));
                if exp == Regime::PowerLaw {
                    checks.push(check(
                        "exponent",
                        f.exponent >= MIN_CRITICAL_EXPONENT,
                        format!("{:.3} ± {:.3}", f.exponent, f.stderr),
                    ));
                    checks.push(check(
                        "r-squared",
                        f.r_squared >= MIN_R_SQUARED,
                        format!("{:.4}", f.r_squared),
                    ));
                }
            }
        }
    }
    Ok(CriticalReport {
        config: cfg.clone(),
        k: cfg.k,
        j: cfg.threshold(),
        p,
        critical_density: pc,
        expected,
        estimates,
        cross_checks,
        fit,
        fit_error,
        verdict: Verdict::new(checks),
    })
}

// ---------------------------------------------------------------------------
// Quasi-critical scaling

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasiPoint {
    pub eps: f64,
    pub p: f64,
    pub method: Method,
    pub depth: usize,
    pub t_rel: f64,
    pub stderr: f64,
    pub doubled_depth: usize,
    pub t_rel_doubled: f64,
    pub stderr_doubled: f64,
    pub saturated: bool,
    /// `Var(N_r)/D(N_r)` on the proxy tree.
    pub gap_bound: Option<f64>,
    pub bound_respected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Anchor {
    pub eps: f64,
    pub p: f64,
    pub t_rel: f64,
    pub source: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasiReport {
    pub config: ExperimentConfig,
    pub k: usize,
    pub j: usize,
    pub critical_density: f64,
    pub points: Vec<QuasiPoint>,
    pub anchor: Anchor,
    pub unsaturated: usize,
    /// `T_rel` at the doubled depth against `1/ε`.
    pub fit: Option<ScalingFit>,
    pub fit_error: Option<String>,
    pub verdict: Verdict,
}

pub fn quasi_depth(cfg: &ExperimentConfig, eps: f64) -> usize {
    ((cfg.c_depth / eps).floor() as usize).max(exact_cap_depth(cfg.k))
}

/// `T_rel` at `p = p_c - ε` on proxy trees of depth `ℓ = max(⌊c/ε⌋, cap)`,
/// checked for saturation against depth `2ℓ`, and fitted against `1/ε`.
pub fn run_quasicritical_scaling(cfg: &ExperimentConfig) -> Result<QuasiReport> {
    cfg.validate()?;
    let (k, j) = (cfg.k, cfg.threshold());
    let pc = cfg.critical_density()?;
    if let Some(e) = cfg.eps.iter().find(|e| **e >= pc) {
        return Err(Error::InvalidParameter(format!(
            "ε = {e} leaves no positive density below p_c = {pc}"
        )));
    }
    let points: Vec<QuasiPoint> = cfg
        .eps
        .par_iter()
        .map(|&eps| -> Result<QuasiPoint> {
            let p = pc - eps;
            let depth = quasi_depth(cfg, eps);
            let plan = [(depth, cfg.quasi_method), (2 * depth, cfg.quasi_method)];
            let est = estimate_depths(cfg, p, &plan, &format!("quasi/eps={eps}"))?;
            let (a, b) = (&est[0], &est[1]);
            let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
            let gap_bound = gap_hint(k, j, p, depth);
            Ok(QuasiPoint {
                eps,
                p,
                method: cfg.quasi_method,
                depth,
                t_rel: a.t_rel,
                stderr: a.stderr,
                doubled_depth: 2 * depth,
                t_rel_doubled: b.t_rel,
                stderr_doubled: b.stderr,
                saturated: (b.t_rel - a.t_rel).abs() < SATURATION_SIGMAS * se,
                gap_bound,
                bound_respected: gap_bound.is_none_or(|g| g <= a.t_rel + CROSS_CHECK_SIGMAS * a.stderr),
            })
        })
        .collect::<Result<_>>()?;
    let unsaturated = points.iter().filter(|q| !q.saturated).count();
    let (fit, fit_error) = if unsaturated > 1 {
        (
            None,
            Some(format!("{unsaturated} grid points unsaturated under depth doubling")),
        )
    } else {
        let pts: Vec<ScalingPoint> = points
            .iter()
            .map(|q| ScalingPoint {
                x: 1.0 / q.eps,
                t: q.t_rel_doubled,
                stderr: q.stderr_doubled,
            })
            .collect();
        match fit_power_law(&pts) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let describe = |f: &dyn Fn(&QuasiPoint) -> String| points.iter().map(f).collect::<Vec<_>>().join(", ");
    let mut checks = vec![
        check(
            "depth-saturation",
            unsaturated == 0,
            describe(&|q| format!("ε={}: {:.1} -> {:.1}", q.eps, q.t_rel, q.t_rel_doubled)),
        ),
        check(
            "gap-bound",
            points.iter().all(|q| q.bound_respected),
            describe(&|q| {
                format!(
                    "ε={}: {:.1} <= {:.1} + {CROSS_CHECK_SIGMAS}σ",
                    q.eps,
                    q.gap_bound.unwrap_or(f64::NAN),
                    q.t_rel
                )
            }),
        ),
    ];
    checks.push(match &fit {
        Some(f) => check(
            "exponent",
            f.exponent >= MIN_CRITICAL_EXPONENT,
            format!("{:.3} ± {:.3}", f.exponent, f.stderr),
        ),
        None => check("fit", false, fit_error.clone().unwrap_or_default()),
    });
    Ok(QuasiReport {
        config: cfg.clone(),
        k,
        j,
        critical_density: pc,
        points,
        anchor: Anchor {
            eps: pc,
            p: 0.0,
            t_rel: 1.0,
            source: "closed form: at p = 0 every spin relaxes independently at rate one".into(),
        },
        unsaturated,
        fit,
        fit_error,
        verdict: Verdict::new(checks),
    })
}

// ---------------------------------------------------------------------------
// Mixing scaling

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingRow {
    pub depth: usize,
    pub method: Method,
    pub t_rel: f64,
    pub t_rel_half: f64,
    /// Exact `T_1`, or for simulated depths the projected-profile crossing,
    /// which bounds it from below.
    pub t1: f64,
    pub t2: Option<f64>,
    pub start_policy: String,
    /// `L·T_rel(⌊L/2⌋)`.
    pub lower_bracket: f64,
    /// `L·T_rel(L)`.
    pub upper_bracket: f64,
    pub lower_ratio: f64,
    pub upper_ratio: f64,
    /// Product threshold for `k^⌊L/2⌋` copies of the depth-`⌈L/2⌉` chain.
    pub t_star: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixingReport {
    pub config: ExperimentConfig,
    pub k: usize,
    pub j: usize,
    pub p: f64,
    pub rows: Vec<MixingRow>,
    pub upper_ratio_spread: f64,
    pub lower_ratio_spread: f64,
    /// `T_1` against `L`.
    pub fit: Option<ScalingFit>,
    pub fit_error: Option<String>,
    pub verdict: Verdict,
}

fn spread(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = v.fold(f64::INFINITY, f64::min);
    max / min
}

/// `T_1`, `T_2` and the brackets `L·T_rel(⌊L/2⌋)`, `L·T_rel(L)` across the
/// depth grid; the verdict asks that `T_1/(L·T_rel(L))` stays within a
/// bounded spread, `T_1 <= T_2`, and `t* <= T_1`.
pub fn run_mixing_scaling(cfg: &ExperimentConfig) -> Result<MixingReport> {
    cfg.validate()?;
    let (k, j) = (cfg.k, cfg.threshold());
    let p = cfg.density()?;
    let depths: Vec<usize> = cfg.depths.iter().copied().filter(|&d| d >= 1).collect();
    if depths.is_empty() {
        return Err(Error::InvalidParameter("mixing brackets need depths >= 1".into()));
    }
    let mut needed: Vec<usize> = depths.iter().flat_map(|&d| [d, d / 2, d - d / 2]).collect();
    needed.sort_unstable();
    needed.dedup();
    let plan: Vec<(usize, Method)> = needed.iter().map(|&d| (d, cfg.method_for(d))).collect();
    let t_rel: BTreeMap<usize, DepthEstimate> = estimate_depths(cfg, p, &plan, "mixing")?
        .into_iter()
        .map(|e| (e.depth, e))
        .collect();
    let rows: Vec<MixingRow> = depths
        .par_iter()
        .map(|&depth| -> Result<MixingRow> {
            let tr = t_rel[&depth].t_rel;
            let method = cfg.method_for(depth);
            let (t1, t2, start_policy) = match method {
                Method::Exact => {
                    let r = exact_report(k, depth, ModelParams { p, j }, Some(&cfg.start_policy))?;
                    (
                        r.t1.expect("mixing requested"),
                        r.t2,
                        r.start_policy.unwrap_or_default(),
                    )
                }
                _ => {
                    let tree = TreeTopology::new(k, depth)?;
                    let m = cfg.profile_marginal.min(tree.vertex_count());
                    let marginal: Vec<VertexId> = (0..m).map(VertexId).collect();
                    let t_max = 6.0 * depth as f64 * tr;
                    let times: Vec<f64> = (0..=80).map(|i| t_max * (i as f64 / 80.0)).collect();
                    let seed = task_seed(cfg.seed, &format!("mixing/profile/p={p}/L={depth}"));
                    let prof = tv_lower_profile(
                        &tree,
                        ModelParams { p, j },
                        &InitialCondition::AllOnes,
                        &marginal,
                        REPLICAS_PER_OUTCOME << m,
                        &times,
                        seed,
                    )?;
                    let t1 = prof.crossing_time(TV_MIX_LEVEL).ok_or_else(|| {
                        Error::NoConvergence(format!("profile at L={depth} never fell to {TV_MIX_LEVEL}"))
                    })?;
                    (
                        t1,
                        None,
                        format!("all-ones, projected on {m} top vertices (lower bound)"),
                    )
                }
            };
            let half = t_rel[&(depth / 2)].t_rel;
            let copies = k.pow((depth / 2) as u32);
            let gap = 1.0 / t_rel[&(depth - depth / 2)].t_rel;
            let t_star = product_mixing_threshold(&vec![gap; copies], copies)?;
            let l = depth as f64;
            Ok(MixingRow {
                depth,
                method,
                t_rel: tr,
                t_rel_half: half,
                t1,
                t2,
                start_policy,
                lower_bracket: l * half,
                upper_bracket: l * tr,
                lower_ratio: t1 / (l * half),
                upper_ratio: t1 / (l * tr),
                t_star,
            })
        })
        .collect::<Result<_>>()?;
    let upper_ratio_spread = spread(rows.iter().map(|r| r.upper_ratio));
    let lower_ratio_spread = spread(rows.iter().map(|r| r.lower_ratio));
    let pts: Vec<ScalingPoint> = rows
        .iter()
        .map(|r| ScalingPoint {
            x: r.depth as f64,
            t: r.t1,
            stderr: 0.0,
        })
        .collect();
    let (fit, fit_error) = match fit_power_law(&pts) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let describe = |f: &dyn Fn(&MixingRow) -> String| rows.iter().map(f).collect::<Vec<_>>().join(", ");
    let checks = vec![
        check(
            "upper-ratio-spread",
            upper_ratio_spread < MAX_RATIO_SPREAD,
            format!(
                "{upper_ratio_spread:.3} over [{}]",
                describe(&|r| format!("{:.4}", r.upper_ratio))
            ),
        ),
        check(
            "t1-le-t2",
            rows.iter().all(|r| r.t2.is_none_or(|t2| r.t1 <= t2)),
            describe(&|r| format!("L={}: {:.3} <= {:.3}", r.depth, r.t1, r.t2.unwrap_or(f64::NAN))),
        ),
        check(
            "t-star-le-t1",
            rows.iter().all(|r| r.t_star <= r.t1),
            describe(&|r| format!("L={}: {:.3} <= {:.3}", r.depth, r.t_star, r.t1)),
        ),
    ];
    Ok(MixingReport {
        config: cfg.clone(),
        k,
        j,
        p,
        rows,
        upper_ratio_spread,
        lower_ratio_spread,
        fit,
        fit_error,
        verdict: Verdict::new(checks),
    })
}

// ---------------------------------------------------------------------------
// Discontinuity probe

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub p: f64,
    /// `p_n` after the configured number of iterations.
    pub limit: f64,
    pub dies_out: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub status: &'static str,
    pub config: ExperimentConfig,
    pub k: usize,
    pub j: usize,
    pub critical_density: f64,
    pub critical_density_bisection: f64,
    /// `p_n` at the critical density after the configured iterations.
    pub limit_at_critical: f64,
    pub scan: Vec<ScanRow>,
    pub estimates: Vec<DepthEstimate>,
    pub fit: Option<ScalingFit>,
    pub fit_error: Option<String>,
}

pub const EXPLORATORY: &str = "EXPLORATORY";

/// The bootstrap limit across densities straddling `p_c` and `T_rel` at
/// `p_c` across the depth grid. Reports evidence only.
pub fn run_discontinuous_probe(cfg: &ExperimentConfig) -> Result<ProbeReport> {
    cfg.validate()?;
    let (k, j) = (cfg.k, cfg.threshold());
    let pc = cfg.critical_density()?;
    let bisection = critical_density_bisection(k, j, BISECTION_TOL, BISECTION_BUDGET)?;
    let n = cfg.probe_iterations;
    let densities = cfg.probe_densities.clone().unwrap_or_else(|| {
        [-0.04, -1e-2, -1e-3, -1e-4, 0.0, 1e-4, 1e-3, 1e-2, 0.04]
            .iter()
            .map(|d| pc + d)
            .filter(|p| (0.0..=1.0).contains(p))
            .collect()
    });
    let scan: Vec<ScanRow> = densities
        .iter()
        .map(|&p| -> Result<ScanRow> {
            Ok(ScanRow {
                p,
                limit: *pn_series(k, p, j, n)?.last(),
                dies_out: classify_survival(k, j, p, n) == SurvivalVerdict::DiesOut,
            })
        })
        .collect::<Result<_>>()?;
    let p = cfg.density()?;
    let plan: Vec<(usize, Method)> = cfg.depths.iter().map(|&d| (d, cfg.method_for(d))).collect();
    let estimates = estimate_depths(cfg, p, &plan, "probe")?;
    let points: Vec<ScalingPoint> = estimates
        .iter()
        .filter(|e| e.depth >= cfg.min_fit_depth)
        .map(|e| ScalingPoint {
            x: e.depth as f64,
            t: e.t_rel,
            stderr: e.stderr,
        })
        .collect();
    let (fit, fit_error) = match fit_power_law(&points) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(ProbeReport {
        status: EXPLORATORY,
        config: cfg.clone(),
        k,
        j,
        critical_density: pc,
        critical_density_bisection: bisection,
        limit_at_critical: *pn_series(k, pc, j, n)?.last(),
        scan,
        estimates,
        fit,
        fit_error,
    })
}

// ---------------------------------------------------------------------------
// Output

/// Writes `<stem>.csv` from `rows` and `<stem>.json` from `report` into `dir`.
pub fn write_outputs<R: Serialize, W: Serialize>(
    dir: &Path,
    stem: &str,
    report: &R,
    rows: &[W],
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    fs::write(&json_path, serde_json::to_string_pretty(report)?)?;
    Ok((csv_path, json_path))
}
