//! Equilibrium autocorrelation estimates and exponential tail fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Observable, TimeSeries};
use crate::error::{Error, Result};

/// How `ρ(t)` is estimated from a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AutocorrMethod {
    /// Sample covariance normalized by the sample variance.
    Direct,
    /// Root spin only: the spin keeps its value until the first ring at which
    /// the root constraint holds, and is an independent Bernoulli(p) sample
    /// afterwards, so `ρ(t) = E[exp(-∫_0^t c_r)]`. The integral is read off
    /// the `root_clock` column.
    RootConditional,
}

/// Window and error model of the exponential tail fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitPolicy {
    pub rho_min: f64,
    pub rho_max: f64,
    pub min_points: usize,
    /// Lags with `ρ < snr_min·stderr` end the window.
    pub snr_min: f64,
    /// Maximum lag in samples; default `min(n/50, 256)`.
    pub max_lag: Option<usize>,
    pub blocks: usize,
    pub bootstrap: usize,
    pub seed: u64,
    /// Use `RootConditional` for `eta_r` when `root_clock` was recorded.
    pub conditional_root: bool,
}

impl Default for FitPolicy {
    fn default() -> Self {
        Self {
            rho_min: 0.05,
            rho_max: 0.5,
            min_points: 3,
            snr_min: 3.0,
            max_lag: None,
            blocks: 25,
            bootstrap: 200,
            seed: 0x5eed,
            conditional_root: true,
        }
    }
}

/// Fitted `ρ(t) ≈ A e^{-t/τ}` on a window of lags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpFit {
    pub tau: f64,
    pub stderr: f64,
    /// First and last lag time used.
    pub window: (f64, f64),
    pub points: usize,
    pub intercept: f64,
}

/// Normalized autocorrelation with block-bootstrap errors.
#[derive(Debug, Clone)]
pub struct AutocorrEstimate {
    pub observable: Observable,
    pub method: AutocorrMethod,
    pub lags: Vec<f64>,
    pub rho: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Tail fit under the default policy, when one exists.
    pub tau_exp: Option<f64>,
    pub blocks: usize,
    replicates: Vec<Vec<f64>>,
}

const MIN_BLOCKS: usize = 20;
const MIN_SAMPLES_PER_LAG: usize = 50;
const DEFAULT_LAG_CAP: usize = 256;

/// Direct autocorrelation of `observable` up to `max_lag` samples.
pub fn autocorrelation(series: &TimeSeries, observable: Observable, max_lag: usize) -> Result<AutocorrEstimate> {
    let policy = FitPolicy {
        max_lag: Some(max_lag),
        ..FitPolicy::default()
    };
    autocorrelation_with(series, observable, AutocorrMethod::Direct, &policy)
}

pub fn autocorrelation_with(
    series: &TimeSeries,
    observable: Observable,
    method: AutocorrMethod,
    policy: &FitPolicy,
) -> Result<AutocorrEstimate> {
    let n = series.len();
    let max_lag = policy.max_lag.unwrap_or((n / MIN_SAMPLES_PER_LAG).min(DEFAULT_LAG_CAP));
    if max_lag == 0 || n < MIN_SAMPLES_PER_LAG * max_lag {
        return Err(Error::SeriesTooShort(format!(
            "{n} samples, need {} for max_lag {max_lag}",
            MIN_SAMPLES_PER_LAG * max_lag.max(1)
        )));
    }
    let blocks = policy.blocks.max(MIN_BLOCKS);
    let dt = series.times[1] - series.times[0];
    let sums = match method {
        AutocorrMethod::Direct => {
            let x = series.require(observable)?;
            let mean = x.iter().sum::<f64>() / n as f64;
            let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
            block_sums(n, max_lag, blocks, |i, l| c[i] * c[i + l])
        }
        AutocorrMethod::RootConditional => {
            if observable != Observable::RootSpin {
                return Err(Error::InvalidParameter(
                    "the conditional estimator applies to eta_r only".into(),
                ));
            }
            let clock = series.require(Observable::RootClock)?;
            block_sums(n, max_lag, blocks, |i, l| (clock[i] - clock[i + l]).exp())
        }
    };
    from_block_sums(observable, method, dt, &sums, policy)
}

/// Builds the estimate from per-block lag sums; blocks are the resampling
/// units of the bootstrap.
pub(super) fn from_block_sums(
    observable: Observable,
    method: AutocorrMethod,
    dt: f64,
    sums: &BlockSums,
    policy: &FitPolicy,
) -> Result<AutocorrEstimate> {
    let blocks = sums.num.len();
    let max_lag = sums.num[0].len() - 1;
    let curve = |pick: &dyn Fn(usize) -> usize| -> Vec<f64> {
        let mut num = vec![0.0; max_lag + 1];
        let mut cnt = vec![0.0; max_lag + 1];
        for b in 0..blocks {
            let src = pick(b);
            for l in 0..=max_lag {
                num[l] += sums.num[src][l];
                cnt[l] += sums.cnt[src][l];
            }
        }
        let cov: Vec<f64> = num.iter().zip(&cnt).map(|(a, c)| a / c).collect();
        match method {
            AutocorrMethod::Direct => cov.iter().map(|c| c / cov[0]).collect(),
            AutocorrMethod::RootConditional => cov,
        }
    };
    let rho = curve(&|b| b);
    if rho.iter().any(|r| !r.is_finite()) {
        return Err(Error::Fit(format!("{observable} has zero variance")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let replicates: Vec<Vec<f64>> = (0..policy.bootstrap)
        .map(|_| {
            let picks: Vec<usize> = (0..blocks).map(|_| rng.gen_range(0..blocks)).collect();
            curve(&|b| picks[b])
        })
        .collect();
    let stderr = (0..=max_lag)
        .map(|l| {
            let m = replicates.iter().map(|r| r[l]).sum::<f64>() / replicates.len() as f64;
            let v = replicates.iter().map(|r| (r[l] - m).powi(2)).sum::<f64>() / (replicates.len() - 1).max(1) as f64;
            v.sqrt()
        })
        .collect();
    let mut est = AutocorrEstimate {
        observable,
        method,
        lags: (0..=max_lag).map(|l| l as f64 * dt).collect(),
        rho,
        stderr,
        tau_exp: None,
        blocks,
        replicates,
    };
    est.tau_exp = est.fit(&FitPolicy::default()).ok().map(|f| f.tau);
    Ok(est)
}

pub(super) struct BlockSums {
    pub num: Vec<Vec<f64>>,
    pub cnt: Vec<Vec<f64>>,
}

// Lag sums grouped by the block of the earlier sample; the last block
// absorbs the remainder.
fn block_sums(n: usize, max_lag: usize, blocks: usize, term: impl Fn(usize, usize) -> f64) -> BlockSums {
    let len = n / blocks;
    let mut num = vec![vec![0.0; max_lag + 1]; blocks];
    let mut cnt = vec![vec![0.0; max_lag + 1]; blocks];
    for b in 0..blocks {
        let lo = b * len;
        let hi = if b + 1 == blocks { n } else { lo + len };
        for l in 0..=max_lag {
            let end = hi.min(n - l);
            let mut s = 0.0;
            for i in lo..end {
                s += term(i, l);
            }
            num[b][l] = s;
            cnt[b][l] = end.saturating_sub(lo) as f64;
        }
    }
    BlockSums { num, cnt }
}

// Weighted least squares y = a + b x; returns (a, b, var_b).
fn wls(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(x, w)| w * (x - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    (my - b * mx, b, 1.0 / sxx)
}

impl AutocorrEstimate {
    /// Lags inside `[rho_min, rho_max]` with adequate signal to noise.
    fn window(&self, rho: &[f64], policy: &FitPolicy) -> Result<std::ops::Range<usize>> {
        let start = rho
            .iter()
            .enumerate()
            .skip(1)
            .find(|(_, &r)| r <= policy.rho_max)
            .map(|(i, _)| i)
            .ok_or_else(|| {
                Error::Fit(format!(
                    "{}: rho never drops to {} within the lag range",
                    self.observable, policy.rho_max
                ))
            })?;
        let mut end = start;
        while end < rho.len() && rho[end] >= policy.rho_min && rho[end] >= policy.snr_min * self.stderr[end] {
            end += 1;
        }
        if end - start < policy.min_points {
            return Err(Error::Fit(format!(
                "{}: {} lags in the fit window, need {}",
                self.observable,
                end - start,
                policy.min_points
            )));
        }
        Ok(start..end)
    }

    fn check_monotone(&self, win: &std::ops::Range<usize>) -> Result<()> {
        for l in win.start..win.end - 1 {
            let rise = self.rho[l + 1] - self.rho[l];
            let noise = (self.stderr[l].powi(2) + self.stderr[l + 1].powi(2)).sqrt();
            if rise > 3.0 * noise && rise > 1e-12 {
                return Err(Error::Equilibration(format!(
                    "{}: rho rises from {:.4} to {:.4} at lag {}",
                    self.observable,
                    self.rho[l],
                    self.rho[l + 1],
                    self.lags[l + 1]
                )));
            }
        }
        Ok(())
    }

    /// Weighted least-squares fit of `log ρ` on the policy window; the
    /// error bar is the spread of the same procedure, window selection
    /// included, over bootstrap replicates.
    pub fn fit(&self, policy: &FitPolicy) -> Result<ExpFit> {
        let win = self.window(&self.rho, policy)?;
        self.check_monotone(&win)?;
        let (a, b, var_b) = self
            .wls_on(&self.rho, win.clone())
            .ok_or_else(|| Error::Fit(format!("{}: nonnegative tail slope", self.observable)))?;
        let tau = -1.0 / b;
        let taus: Vec<f64> = self
            .replicates
            .iter()
            .filter_map(|r| {
                let w = self.window(r, policy).ok()?;
                self.wls_on(r, w).map(|(_, br, _)| -1.0 / br)
            })
            .collect();
        let stderr = if taus.len() >= 10 && taus.len() * 2 >= self.replicates.len() {
            let m = taus.iter().sum::<f64>() / taus.len() as f64;
            (taus.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (taus.len() - 1) as f64).sqrt()
        } else {
            tau * tau * var_b.sqrt()
        };
        Ok(ExpFit {
            tau,
            stderr,
            window: (self.lags[win.start], self.lags[win.end - 1]),
            points: win.len(),
            intercept: a,
        })
    }

    // Fit of log rho on `win` with weights from the main curve's errors;
    // `None` unless the slope is negative.
    fn wls_on(&self, rho: &[f64], win: std::ops::Range<usize>) -> Option<(f64, f64, f64)> {
        if rho[win.clone()].iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        let x = &self.lags[win.clone()];
        let y: Vec<f64> = rho[win.clone()].iter().map(|r| r.ln()).collect();
        let w: Vec<f64> = win
            .map(|l| {
                let rel = self.stderr[l] / self.rho[l];
                if rel > 0.0 {
                    1.0 / (rel * rel)
                } else {
                    1.0
                }
            })
            .collect();
        let fit = wls(x, &y, &w);
        (fit.1 < 0.0).then_some(fit)
    }
}

/// Per-observable outcome inside a relaxation-time estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ObservableFit {
    pub observable: Observable,
    pub method: AutocorrMethod,
    pub fit: Option<ExpFit>,
    pub error: Option<String>,
}

/// Largest fitted autocorrelation time over a set of observables, ranked by
/// `tau - 2·stderr`. Any single observable decays at least as fast as the
/// slowest mode, so this is a lower-bound-flavored estimate of `T_rel`.
#[derive(Debug, Clone, Serialize)]
pub struct RelaxationEstimate {
    pub t_rel: f64,
    pub stderr: f64,
    pub observable: Observable,
    pub window: (f64, f64),
    pub lower_bound_flavored: bool,
    pub per_observable: Vec<ObservableFit>,
}

pub fn estimate_relaxation_time(
    series: &TimeSeries,
    observables: &[Observable],
    policy: &FitPolicy,
) -> Result<RelaxationEstimate> {
    let mut per_observable = Vec::new();
    let mut first_error = None;
    for &obs in observables {
        let method =
            if obs == Observable::RootSpin && policy.conditional_root && series.column(Observable::RootClock).is_some()
            {
                AutocorrMethod::RootConditional
            } else {
                AutocorrMethod::Direct
            };
        let outcome = autocorrelation_with(series, obs, method, policy).and_then(|a| a.fit(policy));
        match outcome {
            Ok(fit) => per_observable.push(ObservableFit {
                observable: obs,
                method,
                fit: Some(fit),
                error: None,
            }),
            Err(e) => {
                if matches!(e, Error::Equilibration(_)) {
                    return Err(e);
                }
                per_observable.push(ObservableFit {
                    observable: obs,
                    method,
                    fit: None,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    // Maximize the two-sigma lower confidence bound rather than the point
    // estimate, so a noisy observable cannot win on a fluctuation.
    let best = per_observable
        .iter()
        .filter_map(|o| o.fit.as_ref().map(|f| (o.observable, f)))
        .max_by(|a, b| (a.1.tau - 2.0 * a.1.stderr).total_cmp(&(b.1.tau - 2.0 * b.1.stderr)));
    match best {
        Some((observable, fit)) => Ok(RelaxationEstimate {
            t_rel: fit.tau,
            stderr: fit.stderr,
            observable,
            window: fit.window,
            lower_bound_flavored: true,
            per_observable: per_observable.clone(),
        }),
        None => Err(first_error.unwrap_or_else(|| Error::Fit("no observables given".into()))),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{simulate, RunMetadata, SimulationSpec};
    use super::*;
    use crate::model::{Configuration, ModelParams};
    use crate::tree::TreeTopology;

    fn synthetic(values: Vec<f64>, dt: f64) -> TimeSeries {
        TimeSeries {
            times: (0..values.len()).map(|i| i as f64 * dt).collect(),
            columns: vec![(Observable::RootSpin, values)],
            metadata: RunMetadata {
                k: 1,
                depth: 0,
                p: 0.5,
                j: 1,
                seed: 0,
                replica: 0,
                initial: "synthetic".into(),
                burn_in: 0.0,
                horizon: 0.0,
                sample_interval: dt,
                events: 0,
                accepted: 0,
                root_rings: 0,
                root_rejections: 0,
            },
            initial_state: Configuration::empty(1),
            events: None,
        }
    }

    #[test]
    fn white_noise_is_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = synthetic((0..20_000).map(|_| rng.gen::<f64>()).collect(), 1.0);
        let a = autocorrelation(&s, Observable::RootSpin, 40).unwrap();
        assert!((a.rho[0] - 1.0).abs() < 1e-12);
        for l in 1..=40 {
            assert!(
                a.rho[l].abs() < 3.0 * a.stderr[l] + 1e-3,
                "lag {l}: {} ± {}",
                a.rho[l],
                a.stderr[l]
            );
        }
        assert!(a.tau_exp.is_none());
    }

    #[test]
    fn ar1_process_recovers_tau() {
        // x_{n+1} = φ x_n + noise has ρ(n) = φ^n.
        let tau = 8.0f64;
        let phi = (-1.0 / tau).exp();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut x = 0.0;
        let v: Vec<f64> = (0..200_000)
            .map(|_| {
                x = phi * x + rng.gen::<f64>() - 0.5;
                x
            })
            .collect();
        let a = autocorrelation(&synthetic(v, 1.0), Observable::RootSpin, 60).unwrap();
        let fit = a.fit(&FitPolicy::default()).unwrap();
        assert!((fit.tau - tau).abs() < 4.0 * fit.stderr.max(0.05), "{fit:?}");
        assert!(fit.window.0 >= 5.0 && fit.window.1 <= 24.0 + 1e-9);
    }

    #[test]
    fn too_short_series() {
        let s = synthetic(vec![0.0; 100], 1.0);
        assert!(matches!(
            autocorrelation(&s, Observable::RootSpin, 3),
            Err(Error::SeriesTooShort(_))
        ));
    }

    #[test]
    fn rising_rho_flags_equilibration() {
        let rho = vec![1.0, 0.45, 0.3, 0.4, 0.2, 0.1];
        let a = AutocorrEstimate {
            observable: Observable::RootSpin,
            method: AutocorrMethod::Direct,
            lags: (0..6).map(f64::from).collect(),
            stderr: vec![0.001; 6],
            tau_exp: None,
            blocks: 20,
            replicates: vec![rho.clone(); 20],
            rho,
        };
        assert!(matches!(a.fit(&FitPolicy::default()), Err(Error::Equilibration(_))));
    }

    #[test]
    fn free_spin_tau_is_one() {
        let t = TreeTopology::new(2, 0).unwrap();
        let mut spec = SimulationSpec::new(4e4, 0.05, 7);
        spec.observables = vec![Observable::RootSpin, Observable::RootClock];
        let s = simulate(&t, ModelParams::ofa(0.5, 2), &spec).unwrap();
        let direct = autocorrelation(&s, Observable::RootSpin, 100)
            .unwrap()
            .fit(&FitPolicy::default())
            .unwrap();
        assert!((direct.tau - 1.0).abs() < 0.05, "{direct:?}");
        let est = estimate_relaxation_time(&s, &[Observable::RootSpin], &FitPolicy::default()).unwrap();
        assert_eq!(est.per_observable[0].method, AutocorrMethod::RootConditional);
        // With L = 0 the root clock is deterministic: ρ(t) = e^{-t} exactly.
        assert!((est.t_rel - 1.0).abs() < 1e-9, "{est:?}");
    }

    #[test]
    fn conditional_needs_root_spin() {
        let s = synthetic(vec![0.0; 1000], 1.0);
        assert!(autocorrelation_with(
            &s,
            Observable::ClusterSize,
            AutocorrMethod::RootConditional,
            &FitPolicy::default()
        )
        .is_err());
    }
}
