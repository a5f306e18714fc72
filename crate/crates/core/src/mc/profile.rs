//! Projected total-variation profiles from independent replicas.

use rayon::prelude::*;
use serde::Serialize;

use super::{replica_rng, InitialCondition, Simulator};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tree::{TreeTopology, VertexId};

/// Largest marginal set the profile accepts.
pub const MAX_MARGINAL: usize = 12;
/// Replicas required per marginal outcome.
pub const REPLICAS_PER_OUTCOME: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvProfilePoint {
    pub t: f64,
    /// TV between the empirical marginal law and the product Bernoulli law.
    pub tv: f64,
    /// Expected value of the same statistic for an exact equilibrium sample
    /// of the same size; values below it are indistinguishable from 0.
    pub noise_floor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TvProfile {
    pub marginal: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    pub points: Vec<TvProfilePoint>,
}

impl TvProfile {
    /// First grid time at which the profile is at most `threshold`, linearly
    /// interpolated from the previous grid point.
    pub fn crossing_time(&self, threshold: f64) -> Option<f64> {
        let i = self.points.iter().position(|p| p.tv <= threshold)?;
        if i == 0 {
            return Some(self.points[0].t);
        }
        let (a, b) = (&self.points[i - 1], &self.points[i]);
        Some(a.t + (a.tv - threshold) / (a.tv - b.tv) * (b.t - a.t))
    }
}

/// Projects replicas started from `start` (drawn afresh per replica for
/// `Equilibrium`) onto `marginal` and returns, at each
/// grid time, the TV distance of the empirical projected law from the
/// equilibrium one. Projection can only shrink TV, so up to sampling noise
/// this bounds the full TV distance from below.
pub fn tv_lower_profile(
    tree: &TreeTopology,
    params: ModelParams<f64>,
    start: &InitialCondition,
    marginal: &[VertexId],
    replicas: usize,
    times: &[f64],
    seed: u64,
) -> Result<TvProfile> {
    params.validate(tree)?;
    let m = marginal.len();
    if m == 0 || m > MAX_MARGINAL {
        return Err(Error::InvalidParameter(format!(
            "marginal set of size {m}, need 1..={MAX_MARGINAL}"
        )));
    }
    for &v in marginal {
        tree.check(v)?;
    }
    let outcomes = 1usize << m;
    if replicas < REPLICAS_PER_OUTCOME * outcomes {
        return Err(Error::InvalidParameter(format!(
            "{replicas} replicas, need {} for {m} marginal spins",
            REPLICAS_PER_OUTCOME * outcomes
        )));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidParameter(
            "time grid must be nonnegative and sorted".into(),
        ));
    }
    let patterns: Vec<Vec<u16>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<u16>> {
            let mut rng = replica_rng(seed, r as u64);
            let init = start.realize(tree, params.p, &mut rng)?;
            let mut sim = Simulator::new(tree, params, &init, rng)?;
            Ok(times
                .iter()
                .map(|&t| {
                    sim.advance_to(t);
                    marginal
                        .iter()
                        .enumerate()
                        .fold(0u16, |acc, (b, v)| acc | (u16::from(sim.spin(v.0)) << b))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let p = params.p;
    let mu: Vec<f64> = (0..outcomes)
        .map(|w: usize| {
            let ones = w.count_ones() as i32;
            p.powi(ones) * (1.0 - p).powi(m as i32 - ones)
        })
        .collect();
    // E|X/R - π| ≈ sqrt(2π(1-π)/(πR)) for binomial counts.
    let noise_floor = 0.5
        * mu.iter()
            .map(|&q| (2.0 * q * (1.0 - q) / (std::f64::consts::PI * replicas as f64)).sqrt())
            .sum::<f64>();
    let points = times
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let mut counts = vec![0usize; outcomes];
            for pat in &patterns {
                counts[pat[ti] as usize] += 1;
            }
            let tv = 0.5
                * counts
                    .iter()
                    .zip(&mu)
                    .map(|(&c, &q)| (c as f64 / replicas as f64 - q).abs())
                    .sum::<f64>();
            TvProfilePoint { t, tv, noise_floor }
        })
        .collect();
    Ok(TvProfile {
        marginal: marginal.iter().map(|v| v.0).collect(),
        replicas,
        seed,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Configuration;

    #[test]
    fn single_spin_profile_matches_closed_form() {
        let t = TreeTopology::new(2, 0).unwrap();
        let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
        let prof = tv_lower_profile(
            &t,
            ModelParams::ofa(0.5, 2),
            &InitialCondition::AllOnes,
            &[VertexId(0)],
            40_000,
            &grid,
            3,
        )
        .unwrap();
        for pt in &prof.points {
            let exact = 0.5 * (-pt.t).exp();
            // Binomial sd of the occupied fraction is at most 0.5/sqrt(R).
            assert!(
                (pt.tv - exact).abs() < 4.0 * 0.5 / 200.0,
                "t={} tv={} exact={exact}",
                pt.t,
                pt.tv
            );
        }
        let cross = prof.crossing_time(0.125).unwrap();
        assert!((cross - 4f64.ln()).abs() < 0.06, "{cross}");
    }

    #[test]
    fn equilibrium_start_is_flat() {
        let t = TreeTopology::new(2, 2).unwrap();
        let grid = [0.0, 1.0, 5.0, 50.0];
        let marginal = [VertexId(0), VertexId(1), VertexId(5)];
        let prof = tv_lower_profile(
            &t,
            ModelParams::ofa(0.5, 2),
            &InitialCondition::Equilibrium,
            &marginal,
            4000,
            &grid,
            2,
        )
        .unwrap();
        for pt in &prof.points {
            assert!(pt.tv < 3.0 * pt.noise_floor, "{pt:?}");
        }
    }

    #[test]
    fn rejects_small_replica_counts() {
        let t = TreeTopology::new(2, 2).unwrap();
        let r = tv_lower_profile(
            &t,
            ModelParams::ofa(0.5, 2),
            &InitialCondition::Given(Configuration::full(7)),
            &[VertexId(0), VertexId(1)],
            399,
            &[1.0],
            0,
        );
        assert!(r.is_err());
    }
}
