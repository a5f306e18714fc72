//! Population dynamics for the root-spin process of deep trees.
//!
//! The dynamics is oriented: the subtree of a vertex never sees its parent.
//! Under stationarity the root spin of `T_{m+1}` is therefore a function of
//! an independent Bernoulli(p) initial value, a rate-one clock and the `k`
//! independent root-spin paths of its child subtrees `T_m`. A pool of paths
//! per depth is built level by level, each new path drawing its children
//! from the previous pool. Relaxation is read off the root autocorrelation
//! `E[exp(-∫ c_r)]` at each requested depth.
//!
//! Reusing pool paths correlates distant descendants, so for finite pools this
//! is an approximation of the tree whose error vanishes as the pool grows;
//! it is cross-checked against the exact solver and the full simulator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::autocorr::{from_block_sums, BlockSums};
use super::{replica_rng, AutocorrMethod, ExpFit, FitPolicy, Observable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolOptions {
    /// Paths per depth in each independent pool.
    pub paths: usize,
    /// Independent pools; they are the resampling units of the bootstrap,
    /// so error bars include the fluctuations of each pool's input law.
    pub replicas: usize,
    /// Length of every path.
    pub horizon: f64,
    /// Lag grid spacing.
    pub lag_step: f64,
    /// Largest lag; origins range over `[0, horizon - max_lag]`.
    pub max_lag: f64,
    pub seed: u64,
    /// Depths at which the autocorrelation is fitted (all when empty).
    pub report_depths: Vec<usize>,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self::for_time_scale(1.0, 2000, 0)
    }
}

impl PoolOptions {
    /// Grid resolving a relaxation time of order `tau`, with 20 pools of
    /// `paths` paths.
    pub fn for_time_scale(tau: f64, paths: usize, seed: u64) -> Self {
        Self {
            paths,
            horizon: 12.0 * tau,
            lag_step: tau / 20.0,
            max_lag: 4.0 * tau,
            seed,
            replicas: 20,
            report_depths: Vec::new(),
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.paths < k || self.replicas < 20 {
            return Err(Error::InvalidParameter(format!(
                "pool needs at least k paths and 20 replicas, got {} paths, {} replicas",
                self.paths, self.replicas
            )));
        }
        if !(self.lag_step > 0.0) || !(self.max_lag >= 3.0 * self.lag_step) || !(self.horizon > self.max_lag) {
            return Err(Error::InvalidParameter(
                "pool grid needs 0 < 3·lag_step <= max_lag < horizon".into(),
            ));
        }
        Ok(())
    }
}

/// Fitted root relaxation at one depth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolLevel {
    pub depth: usize,
    /// Tail fit of the root autocorrelation; `None` when the grid cannot
    /// resolve it (see `error`).
    pub fit: Option<ExpFit>,
    pub error: Option<String>,
    /// Mean root occupation over the pool at time 0 and at the horizon.
    pub occupation: (f64, f64),
    pub mean_flips: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoolReport {
    pub k: usize,
    pub j: usize,
    pub p: f64,
    pub options: PoolOptions,
    pub levels: Vec<PoolLevel>,
}

impl PoolLevel {
    pub fn t_rel(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.tau)
    }

    pub fn stderr(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.stderr)
    }
}

impl PoolReport {
    pub fn level(&self, depth: usize) -> Option<&PoolLevel> {
        self.levels.iter().find(|l| l.depth == depth)
    }
}

struct Path {
    start: bool,
    flips: Vec<f64>,
}

impl Path {
    fn end_value(&self) -> bool {
        self.start ^ (self.flips.len() % 2 == 1)
    }
}

// State of one child during the merge.
struct Cursor<'a> {
    path: &'a Path,
    next: usize,
    value: bool,
}

/// Builds a path of `T_{m+1}` from `children` (paths of `T_m`). When `grid`
/// is given, the facilitated time `Λ(t)` is written at `t = i·step`.
fn build_path(
    children: &[&Path],
    j: usize,
    p: f64,
    horizon: f64,
    rng: &mut ChaCha8Rng,
    mut grid: Option<(&mut Vec<f64>, f64)>,
) -> Path {
    let start = rng.gen::<f64>() < p;
    let mut value = start;
    let mut flips = Vec::new();
    let mut cursors: Vec<Cursor> = children
        .iter()
        .map(|c| Cursor {
            path: c,
            next: 0,
            value: c.start,
        })
        .collect();
    let mut empty = cursors.iter().filter(|c| !c.value).count();
    let mut now = 0.0;
    let mut lambda = 0.0;
    // Remaining facilitated time until the next ring of the root clock.
    let mut until_ring: f64 = rng.sample(Exp1);
    let mut next_grid = 0usize;
    loop {
        // Next change among the children.
        let mut t_next = horizon;
        let mut who = usize::MAX;
        for (i, c) in cursors.iter().enumerate() {
            if let Some(&t) = c.path.flips.get(c.next) {
                if t < t_next {
                    t_next = t;
                    who = i;
                }
            }
        }
        let free = empty >= j;
        if let Some((g, step)) = grid.as_mut() {
            while (next_grid as f64) * *step <= t_next {
                let tg = next_grid as f64 * *step;
                g.push(if free { lambda + (tg - now) } else { lambda });
                next_grid += 1;
            }
        }
        if free {
            let mut pos = now;
            while until_ring <= t_next - pos {
                pos += until_ring;
                let v = rng.gen::<f64>() < p;
                if v != value {
                    value = v;
                    flips.push(pos);
                }
                until_ring = rng.sample(Exp1);
            }
            until_ring -= t_next - pos;
            lambda += t_next - now;
        }
        now = t_next;
        if who == usize::MAX {
            break;
        }
        let c = &mut cursors[who];
        c.next += 1;
        c.value = !c.value;
        if c.value {
            empty -= 1;
        } else {
            empty += 1;
        }
    }
    Path { start, flips }
}

fn leaf_path(p: f64, horizon: f64, rng: &mut ChaCha8Rng) -> Path {
    build_path(&[], 0, p, horizon, rng, None)
}

/// Runs the pool up to `max_depth` and fits the root autocorrelation at the
/// requested depths. Depth 0 is the free spin.
pub fn pool_relaxation(k: usize, j: usize, p: f64, max_depth: usize, opts: &PoolOptions) -> Result<PoolReport> {
    if k == 0 || j == 0 || j > k {
        return Err(Error::InvalidParameter(format!("threshold j={j} with k={k}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("density {p} must lie in (0,1)")));
    }
    opts.validate(k)?;
    let n_lags = (opts.max_lag / opts.lag_step).round() as usize;
    let n_grid = (opts.horizon / opts.lag_step).floor() as usize;
    let depths: Vec<usize> = (0..=max_depth)
        .filter(|d| opts.report_depths.is_empty() || opts.report_depths.contains(d))
        .collect();
    let policy = FitPolicy {
        blocks: opts.replicas,
        seed: opts.seed ^ 0x9e37_79b9_7f4a_7c15,
        ..FitPolicy::default()
    };
    let mut sums: Vec<BlockSums> = depths
        .iter()
        .map(|_| BlockSums {
            num: vec![vec![0.0; n_lags + 1]; opts.replicas],
            cnt: vec![vec![0.0; n_lags + 1]; opts.replicas],
        })
        .collect();
    // Per reported depth: occupied starts, occupied ends, flips.
    let mut tallies = vec![(0usize, 0usize, 0usize); depths.len()];
    for r in 0..opts.replicas {
        let mut rng = replica_rng(opts.seed, r as u64);
        let mut pool: Vec<Path> = Vec::new();
        let mut lambda = Vec::with_capacity(n_grid + 1);
        let mut picks = Vec::with_capacity(k);
        for depth in 0..=max_depth {
            let slot = depths.iter().position(|&d| d == depth);
            let mut next = Vec::with_capacity(opts.paths);
            for _ in 0..opts.paths {
                lambda.clear();
                let grid = slot.map(|_| (&mut lambda, opts.lag_step));
                let path = if depth == 0 {
                    let path = leaf_path(p, opts.horizon, &mut rng);
                    if let Some((g, step)) = grid {
                        g.extend((0..=n_grid).map(|m| m as f64 * step));
                    }
                    path
                } else {
                    picks.clear();
                    while picks.len() < k {
                        let c = rng.gen_range(0..pool.len());
                        if !picks.contains(&c) {
                            picks.push(c);
                        }
                    }
                    let children: Vec<&Path> = picks.iter().map(|&c| &pool[c]).collect();
                    build_path(&children, j, p, opts.horizon, &mut rng, grid)
                };
                if let Some(s) = slot {
                    let origins = lambda.len() - n_lags;
                    for l in 0..=n_lags {
                        let acc: f64 = (0..origins).map(|o| (lambda[o] - lambda[o + l]).exp()).sum();
                        sums[s].num[r][l] += acc;
                        sums[s].cnt[r][l] += origins as f64;
                    }
                    let t = &mut tallies[s];
                    t.0 += usize::from(path.start);
                    t.1 += usize::from(path.end_value());
                    t.2 += path.flips.len();
                }
                next.push(path);
            }
            pool = next;
        }
    }
    let total = (opts.paths * opts.replicas) as f64;
    let mut levels = Vec::with_capacity(depths.len());
    for (s, &depth) in depths.iter().enumerate() {
        let est = from_block_sums(
            Observable::RootSpin,
            AutocorrMethod::RootConditional,
            opts.lag_step,
            &sums[s],
            &policy,
        )?;
        let (fit, error) = match est.fit(&policy) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let (starts, ends, flips) = tallies[s];
        levels.push(PoolLevel {
            depth,
            fit,
            error,
            occupation: (starts as f64 / total, ends as f64 / total),
            mean_flips: flips as f64 / total,
        });
    }
    Ok(PoolReport {
        k,
        j,
        p,
        options: opts.clone(),
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_spin_level() {
        let opts = PoolOptions::for_time_scale(1.0, 25, 1);
        let r = pool_relaxation(2, 2, 0.5, 0, &opts).unwrap();
        // Λ(t) = t exactly at depth 0.
        assert!((r.levels[0].t_rel().unwrap() - 1.0).abs() < 1e-9, "{:?}", r.levels[0]);
        // Flip rate of a free spin is 2p(1-p) = 1/2.
        let flips = r.levels[0].mean_flips;
        assert!((flips - 6.0).abs() < 4.0 * (6.0f64 / 500.0).sqrt(), "{flips}");
    }

    #[test]
    fn stationary_occupation() {
        let opts = PoolOptions::for_time_scale(10.0, 200, 2);
        let r = pool_relaxation(2, 2, 0.3, 2, &opts).unwrap();
        let se = (0.21f64 / 4000.0).sqrt();
        for l in &r.levels {
            assert!((l.occupation.0 - 0.3).abs() < 4.0 * se);
            assert!((l.occupation.1 - 0.3).abs() < 4.0 * se);
        }
    }

    #[test]
    fn rejects_bad_options() {
        let mut opts = PoolOptions::for_time_scale(1.0, 20, 0);
        assert!(pool_relaxation(2, 3, 0.5, 1, &opts).is_err());
        assert!(pool_relaxation(2, 2, 1.0, 1, &opts).is_err());
        opts.horizon = opts.max_lag;
        assert!(pool_relaxation(2, 2, 0.5, 1, &opts).is_err());
    }
}
