//! Hellinger and total-variation bounds for product measures.
//!
//! The Hellinger affinity tensorizes over products and sandwiches total
//! variation, which turns per-factor distances into a lower bound on the
//! distance between product measures and, through the spectral decay of each
//! factor, into a mixing-time lower bound for product chains.

use serde::Serialize;

use crate::error::{Error, Result};

/// Normalization tolerance of a distribution.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Probability weights over outcomes `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    weights: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("no outcomes".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "weight {w} is not a nonnegative number"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    /// Outcome 1 with probability `q`.
    pub fn bernoulli(q: f64) -> Result<Self> {
        Self::new(vec![1.0 - q, q])
    }

    /// Normalizes nonnegative weights.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidDistribution("total mass is not positive".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Product measure; outcome `(a, b)` has index `a * other.len() + b`.
    pub fn product(&self, other: &Self) -> Self {
        let weights = self
            .weights
            .iter()
            .flat_map(|a| other.weights.iter().map(move |b| a * b))
            .collect();
        Self { weights }
    }

    /// Product of all `factors` in order.
    pub fn product_of(factors: &[Self]) -> Result<Self> {
        let (first, rest) = factors
            .split_first()
            .ok_or_else(|| Error::InvalidDistribution("empty product".into()))?;
        Ok(rest.iter().fold(first.clone(), |acc, f| acc.product(f)))
    }
}

fn same_outcomes(a: &FiniteDistribution, b: &FiniteDistribution) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::OutcomeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hellinger {
    /// `I_H = Σ sqrt(π ν)`.
    pub affinity: f64,
    /// `d_H = sqrt(2 - 2 I_H)`.
    pub distance: f64,
}

pub fn hellinger(pi: &FiniteDistribution, nu: &FiniteDistribution) -> Result<Hellinger> {
    same_outcomes(pi, nu)?;
    let affinity = pi
        .weights
        .iter()
        .zip(&nu.weights)
        .map(|(a, b)| (a * b).sqrt())
        .sum::<f64>()
        .clamp(0.0, 1.0);
    Ok(Hellinger {
        affinity,
        distance: (2.0 - 2.0 * affinity).max(0.0).sqrt(),
    })
}

/// `½ Σ |π - ν|`.
pub fn tv_distance(pi: &FiniteDistribution, nu: &FiniteDistribution) -> Result<f64> {
    same_outcomes(pi, nu)?;
    Ok(0.5
        * pi.weights
            .iter()
            .zip(&nu.weights)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

/// `1 - exp(-Σ ½ tv_i²)`, a lower bound on the TV distance between the
/// products of the factor pairs whose distances are `per_factor_tv`.
pub fn product_tv_lower_bound(per_factor_tv: &[f64]) -> Result<f64> {
    if let Some(t) = per_factor_tv.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidParameter(format!("factor distance {t} outside [0,1]")));
    }
    let s: f64 = per_factor_tv.iter().map(|t| 0.5 * t * t).sum();
    Ok(-(-s).exp_m1())
}

/// `t* = ½ [ log(n)/max λ - log(8)/min λ ]`. Each factor started from the
/// maximizer of its gap eigenfunction satisfies `tv_i(t) >= ½ e^{-λ_i t}`,
/// so at `t*` the product bound is at least `1 - e^{-1}`.
pub fn product_mixing_threshold(gaps: &[f64], n: usize) -> Result<f64> {
    if gaps.len() != n || n == 0 {
        return Err(Error::InvalidParameter(format!("{} gaps for {n} factors", gaps.len())));
    }
    if let Some(g) = gaps.iter().find(|g| !(**g > 0.0)) {
        return Err(Error::InvalidParameter(format!("nonpositive gap {g}")));
    }
    let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(0.5 * ((n as f64).ln() / max - 8f64.ln() / min))
}

/// Start state maximizing `|f|` for a gap eigenfunction `f`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstStart {
    pub state: usize,
    /// `|f(state)| / max|f|`-ties within `1e-9` relative.
    pub ties: Vec<usize>,
    pub sup_norm: f64,
}

pub fn worst_start(eigenfunction: &[f64]) -> Result<WorstStart> {
    let sup_norm = eigenfunction.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sup_norm > 0.0) {
        return Err(Error::InvalidParameter("eigenfunction vanishes".into()));
    }
    let ties: Vec<usize> = eigenfunction
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() >= sup_norm * (1.0 - 1e-9))
        .map(|(i, _)| i)
        .collect();
    Ok(WorstStart {
        state: ties[0],
        ties,
        sup_norm,
    })
}

/// Exact TV between `nu^{⊗m}` and `mu^{⊗m}`, summing over occupation counts
/// of the `m` copies instead of the `n^m` joint outcomes.
pub fn iid_product_tv(nu: &FiniteDistribution, mu: &FiniteDistribution, copies: usize) -> Result<f64> {
    same_outcomes(nu, mu)?;
    let n = nu.len();
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=copies).scan(0.0, |acc, i| {
            *acc += (i as f64).ln();
            Some(*acc)
        }))
        .collect();
    let mut counts = vec![0usize; n];
    let mut total = 0.0;
    // Depth-first enumeration of compositions of `copies` into `n` parts.
    fn visit(slot: usize, left: usize, counts: &mut [usize], nu: &[f64], mu: &[f64], ln_fact: &[f64], total: &mut f64) {
        if slot + 1 == counts.len() {
            counts[slot] = left;
            let mut ln_multi = ln_fact[ln_fact.len() - 1];
            let (mut a, mut b) = (1.0f64, 1.0f64);
            for (s, &c) in counts.iter().enumerate() {
                ln_multi -= ln_fact[c];
                a *= nu[s].powi(c as i32);
                b *= mu[s].powi(c as i32);
            }
            *total += ln_multi.exp() * (a - b).abs();
            return;
        }
        for c in 0..=left {
            counts[slot] = c;
            visit(slot + 1, left - c, counts, nu, mu, ln_fact, total);
        }
    }
    visit(0, copies, &mut counts, &nu.weights, &mu.weights, &ln_fact, &mut total);
    Ok(0.5 * total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (FiniteDistribution, FiniteDistribution) {
        let mut draw = || {
            // Sparse supports exercise the boundary cases.
            let w: Vec<f64> = (0..n)
                .map(|_| if rng.gen::<f64>() < 0.2 { 0.0 } else { rng.gen::<f64>() })
                .collect();
            FiniteDistribution::normalized(w)
                .unwrap_or_else(|_| FiniteDistribution::new(vec![1.0 / n as f64; n]).unwrap())
        };
        (draw(), draw())
    }

    #[test]
    fn validation() {
        assert!(FiniteDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(FiniteDistribution::new(vec![1.1, -0.1]).is_err());
        assert!(FiniteDistribution::new(vec![]).is_err());
        let a = FiniteDistribution::bernoulli(0.5).unwrap();
        let b = FiniteDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(matches!(
            hellinger(&a, &b),
            Err(Error::OutcomeMismatch { left: 2, right: 3 })
        ));
        assert!(tv_distance(&a, &b).is_err());
    }

    #[test]
    fn hellinger_examples() {
        let a = FiniteDistribution::bernoulli(0.5).unwrap();
        let one = FiniteDistribution::bernoulli(1.0).unwrap();
        let zero = FiniteDistribution::bernoulli(0.0).unwrap();
        assert_eq!(
            hellinger(&a, &a).unwrap(),
            Hellinger {
                affinity: 1.0,
                distance: 0.0
            }
        );
        let d = hellinger(&zero, &one).unwrap();
        assert_eq!(d.affinity, 0.0);
        assert!((d.distance - 2f64.sqrt()).abs() < 1e-15);
        let h = hellinger(&a, &one).unwrap();
        assert!((h.affinity - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((h.distance - (2.0 - 2f64.sqrt()).sqrt()).abs() < 1e-12);
        assert!((h.distance - 0.76537).abs() < 1e-5);
    }

    #[test]
    fn tv_examples() {
        let a = FiniteDistribution::bernoulli(0.5).unwrap();
        let one = FiniteDistribution::bernoulli(1.0).unwrap();
        let zero = FiniteDistribution::bernoulli(0.0).unwrap();
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_distance(&zero, &one).unwrap(), 1.0);
        let tv = tv_distance(&a, &one).unwrap();
        let d = hellinger(&a, &one).unwrap().distance;
        assert_eq!(tv, 0.5);
        assert!(0.5 * d * d <= tv && tv <= d);
    }

    #[test]
    fn sandwich_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=64);
            let (a, b) = random_pair(&mut rng, n);
            let d = hellinger(&a, &b).unwrap().distance;
            let tv = tv_distance(&a, &b).unwrap();
            assert!(0.5 * d * d <= tv + 1e-12 && tv <= d + 1e-12, "d={d} tv={tv}");
        }
    }

    #[test]
    fn affinity_tensorizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for factors in [2, 3] {
            for _ in 0..100 {
                let pairs: Vec<_> = (0..factors)
                    .map(|_| {
                        let n = rng.gen_range(2..6);
                        random_pair(&mut rng, n)
                    })
                    .collect();
                let pi =
                    FiniteDistribution::product_of(&pairs.iter().map(|p| p.0.clone()).collect::<Vec<_>>()).unwrap();
                let nu =
                    FiniteDistribution::product_of(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>()).unwrap();
                let joint = hellinger(&pi, &nu).unwrap().affinity;
                let prod: f64 = pairs.iter().map(|(a, b)| hellinger(a, b).unwrap().affinity).product();
                assert!((joint - prod).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bound_chain_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..300 {
            let factors = rng.gen_range(1..=3);
            let pairs: Vec<_> = (0..factors)
                .map(|_| {
                    let n = rng.gen_range(2..5);
                    random_pair(&mut rng, n)
                })
                .collect();
            let tvs: Vec<f64> = pairs.iter().map(|(a, b)| tv_distance(a, b).unwrap()).collect();
            let affinity: f64 = pairs.iter().map(|(a, b)| hellinger(a, b).unwrap().affinity).product();
            let middle = 1.0 - tvs.iter().map(|t| 1.0 - 0.5 * t * t).product::<f64>();
            assert!(1.0 - affinity >= middle - 1e-12);
            let pi = FiniteDistribution::product_of(&pairs.iter().map(|p| p.0.clone()).collect::<Vec<_>>()).unwrap();
            let nu = FiniteDistribution::product_of(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>()).unwrap();
            let exact = tv_distance(&pi, &nu).unwrap();
            assert!(product_tv_lower_bound(&tvs).unwrap() <= exact + 1e-12);
        }
    }

    #[test]
    fn lower_bound_examples() {
        assert_eq!(product_tv_lower_bound(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        for t in [0.0, 0.1, 0.5, 0.9, 1.0] {
            let b = product_tv_lower_bound(&[t]).unwrap();
            assert!((b - (1.0 - (-t * t / 2.0).exp())).abs() < 1e-15 && b <= t);
        }
        assert!(product_tv_lower_bound(&[1.5]).is_err());
        assert!(product_tv_lower_bound(&[-0.1]).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert!(product_mixing_threshold(&[0.3; 8], 8).unwrap().abs() < 1e-15);
        let lambda = 0.25;
        let l = 6;
        let n = 2usize.pow(l / 2);
        let t = product_mixing_threshold(&vec![lambda; n], n).unwrap();
        assert!((t - ((l / 2) as f64 * 2f64.ln() - 8f64.ln()) / (2.0 * lambda)).abs() < 1e-12);
        assert!(product_mixing_threshold(&[1.0, 1.0], 2).unwrap() < 0.0);
        assert!((product_mixing_threshold(&[1.0; 64], 64).unwrap() - 8f64.ln() / 2.0).abs() < 1e-12);
        assert!(product_mixing_threshold(&[1.0, 0.0], 2).is_err());
        assert!(product_mixing_threshold(&[1.0], 2).is_err());
    }

    #[test]
    fn iid_reduction_matches_explicit_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for copies in 1..=3 {
            let (a, b) = random_pair(&mut rng, 4);
            let pa = FiniteDistribution::product_of(&vec![a.clone(); copies]).unwrap();
            let pb = FiniteDistribution::product_of(&vec![b.clone(); copies]).unwrap();
            let explicit = tv_distance(&pa, &pb).unwrap();
            assert!((iid_product_tv(&a, &b, copies).unwrap() - explicit).abs() < 1e-12);
        }
    }

    #[test]
    fn free_spin_tensor_at_threshold() {
        // 64 free spins started occupied, p = 1/2: tv_i(t) = e^{-t}/2.
        let t = product_mixing_threshold(&[1.0; 64], 64).unwrap();
        let q = 0.5 + 0.5 * (-t).exp();
        let nu = FiniteDistribution::bernoulli(q).unwrap();
        let mu = FiniteDistribution::bernoulli(0.5).unwrap();
        let exact = iid_product_tv(&nu, &mu, 64).unwrap();
        assert!(exact >= 1.0 - (-1.0f64).exp());
    }

    #[test]
    fn worst_start_picks_the_sup() {
        let w = worst_start(&[0.1, -0.9, 0.9, 0.3]).unwrap();
        assert_eq!(w.state, 1);
        assert_eq!(w.ties, vec![1, 2]);
        assert!(worst_start(&[0.0, 0.0]).is_err());
    }
}
