//! Closed-form recursions: bootstrap survival probabilities `p_n`, critical
//! densities, and the exact moments of the root cluster size.
//!
//! Everything except [`critical_density`] and [`test_function_gap_bound`] is
//! generic over [`Scalar`], so the same code runs in `f64` and in exact
//! rational arithmetic.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{cluster_size_unchecked, empty_children, Configuration, ModelParams};
use crate::scalar::Scalar;
use crate::tree::TreeTopology;

/// A real sequence indexed from 0 together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecursionSeries<T> {
    pub k: usize,
    pub j: usize,
    pub p: T,
    pub values: Vec<T>,
}

impl<T: Scalar> RecursionSeries<T> {
    pub fn last(&self) -> &T {
        self.values.last().expect("series has at least one value")
    }
}

/// Mean and variance of the root cluster size by depth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterStats<T> {
    pub mean: Vec<T>,
    pub variance: Vec<T>,
}

fn binomial(n: usize, r: usize) -> u128 {
    (0..r).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

fn powi<T: Scalar>(x: &T, n: usize) -> T {
    (0..n).fold(T::one(), |acc, _| acc * x.clone())
}

/// `P(Binomial(k, x) >= m)` by direct summation.
pub fn binomial_tail<T: Scalar>(k: usize, x: &T, m: usize) -> T {
    let y = T::one() - x.clone();
    (m..=k).fold(T::zero(), |acc, i| {
        let c = T::from_u128(binomial(k, i)).expect("binomial coefficient representable");
        acc + c * powi(x, i) * powi(&y, k - i)
    })
}

/// One step of the survival recursion. The root survives iff it is occupied
/// and at least `k - j + 1` children survive.
pub fn survival_map<T: Scalar>(k: usize, j: usize, p: &T, x: &T) -> T {
    let tail = if j == k {
        T::one() - powi(&(T::one() - x.clone()), k)
    } else {
        binomial_tail(k, x, k - j + 1)
    };
    p.clone() * tail
}

/// `p_0 = p, p_{n+1} = p·P(Bin(k, p_n) >= k-j+1)`.
pub fn pn_series<T: Scalar>(k: usize, p: T, j: usize, n_max: usize) -> Result<RecursionSeries<T>> {
    check_kj(k, j)?;
    check_density(&p)?;
    let mut values = Vec::with_capacity(n_max + 1);
    values.push(p.clone());
    for n in 0..n_max {
        let next = survival_map(k, j, &p, &values[n]);
        values.push(next);
    }
    Ok(RecursionSeries { k, j, p, values })
}

fn check_kj(k: usize, j: usize) -> Result<()> {
    if k == 0 || j == 0 || j > k {
        return Err(Error::InvalidParameter(format!("need 1 <= j <= k, got j={j}, k={k}")));
    }
    Ok(())
}

fn check_density<T: Scalar>(p: &T) -> Result<()> {
    if *p < T::zero() || *p > T::one() {
        return Err(Error::InvalidParameter(format!("density {p} outside [0,1]")));
    }
    Ok(())
}

/// `2/((k-1)n)`, valid for `p <= 1/k`.
pub fn critical_bound<T: Scalar>(k: usize, n: usize) -> Result<T> {
    if k < 2 || n == 0 {
        return Err(Error::InvalidParameter("critical bound needs k >= 2 and n >= 1".into()));
    }
    Ok(T::from_usize_exact(2) / (T::from_usize_exact(k - 1) * T::from_usize_exact(n)))
}

/// [`critical_bound`] as an unreduced fraction, skipping the gcd in hot exact loops.
pub fn critical_bound_exact(k: usize, n: usize) -> Result<BigRational> {
    critical_bound::<f64>(k, n)?;
    Ok(BigRational::new_raw(
        BigInt::from(2u8),
        BigInt::from(k - 1) * BigInt::from(n),
    ))
}

/// `p(1-εk)^n = p(kp)^n` with `ε = 1/k - p`; defined for `p <= 1/k`.
pub fn subcritical_bound<T: Scalar>(k: usize, p: T, n: usize) -> Result<T> {
    if k < 2 || n == 0 {
        return Err(Error::InvalidParameter(
            "subcritical bound needs k >= 2 and n >= 1".into(),
        ));
    }
    check_density(&p)?;
    let kp = T::from_usize_exact(k) * p.clone();
    if kp > T::one() {
        return Err(Error::InvalidParameter(format!(
            "subcritical bound needs p <= 1/k, got p={p} for k={k}"
        )));
    }
    Ok(p * powi(&kp, n))
}

/// `subcritical_bound` for `n = 0..=n_max`, built by repeated multiplication.
pub fn subcritical_bounds<T: Scalar>(k: usize, p: T, n_max: usize) -> Result<Vec<T>> {
    // validates k and p
    subcritical_bound(k, p.clone(), 1)?;
    let kp = T::from_usize_exact(k) * p.clone();
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(p);
    for n in 1..=n_max {
        let next = out[n - 1].clone() * kp.clone();
        out.push(next);
    }
    Ok(out)
}

/// Both analytic bounds on `p_n`; errors when `p > 1/k`.
pub fn pn_bounds<T: Scalar>(k: usize, p: T, n: usize) -> Result<(T, T)> {
    Ok((critical_bound(k, n)?, subcritical_bound(k, p, n)?))
}

/// Mean cluster size by depth, `m_0 = p`, `m_L = p(k m_{L-1} + 1)`.
pub fn cluster_mean_series<T: Scalar>(k: usize, p: T, depth_max: usize) -> Result<Vec<T>> {
    check_density(&p)?;
    let kk = T::from_usize_exact(k);
    let mut mean = Vec::with_capacity(depth_max + 1);
    mean.push(p.clone());
    for l in 1..=depth_max {
        let prev = mean[l - 1].clone();
        mean.push(p.clone() * (kk.clone() * prev + T::one()));
    }
    Ok(mean)
}

/// Variance of the cluster size by depth from the conditional-variance split
/// on the root spin: `V_L = pk V_{L-1} + p(1-p)(k m_{L-1} + 1)^2`.
pub fn cluster_variance_series<T: Scalar>(k: usize, p: T, depth_max: usize) -> Result<Vec<T>> {
    Ok(cluster_stats(k, p, depth_max)?.variance)
}

pub fn cluster_stats<T: Scalar>(k: usize, p: T, depth_max: usize) -> Result<ClusterStats<T>> {
    if p <= T::zero() {
        return Err(Error::InvalidParameter("cluster variance requires p > 0".into()));
    }
    let mean = cluster_mean_series(k, p.clone(), depth_max)?;
    let kk = T::from_usize_exact(k);
    let pq = p.clone() * (T::one() - p.clone());
    let mut variance = Vec::with_capacity(depth_max + 1);
    variance.push(pq.clone());
    for l in 1..=depth_max {
        let inner = kk.clone() * mean[l - 1].clone() + T::one();
        let v = p.clone() * kk.clone() * variance[l - 1].clone() + pq.clone() * inner.clone() * inner;
        variance.push(v);
    }
    Ok(ClusterStats { mean, variance })
}

/// Location of the bootstrap transition for general `j`.
///
/// `p` percolates iff `x <= p·tail(x)` for some `x` in `(0,1]`, so
/// `p_c = min_x x / P(Bin(k,x) >= k-j+1)`. For `j == k` this is `1/k`.
pub fn critical_density(k: usize, j: usize) -> Result<f64> {
    check_kj(k, j)?;
    if j == k {
        return Ok(1.0 / k as f64);
    }
    let m = k - j + 1;
    let ratio = |x: f64| x / binomial_tail(k, &x, m);
    // coarse scan, then golden-section refinement around the best grid cell
    let grid = 4096;
    let (mut best, mut best_val) = (1.0, ratio(1.0));
    for i in 1..grid {
        let x = i as f64 / grid as f64;
        let v = ratio(x);
        if v < best_val {
            best = x;
            best_val = v;
        }
    }
    let h = 1.0 / grid as f64;
    let (mut a, mut b) = ((best - h).max(h * 1e-3), (best + h).min(1.0));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..200 {
        if ratio(c) < ratio(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
        if b - a < 1e-15 {
            break;
        }
    }
    Ok(ratio(0.5 * (a + b)).min(best_val))
}

/// Outcome of iterating the survival recursion from `p_0 = p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurvivalVerdict {
    DiesOut,
    Survives(f64),
}

/// Iteration-based classification: dies out when `p_n < 1e-12` within the
/// budget, otherwise survives with the last iterate as its limit estimate.
pub fn classify_survival(k: usize, j: usize, p: f64, budget: usize) -> SurvivalVerdict {
    let mut x = p;
    for _ in 0..budget {
        if x < 1e-12 {
            return SurvivalVerdict::DiesOut;
        }
        x = survival_map(k, j, &p, &x);
    }
    if x < 1e-12 {
        SurvivalVerdict::DiesOut
    } else {
        SurvivalVerdict::Survives(x)
    }
}

/// Bisection on [`classify_survival`]. Close to a tangent bifurcation the
/// orbit lingers `~π/sqrt(δ)` steps, so the budget bounds the resolution.
pub fn critical_density_bisection(k: usize, j: usize, tol: f64, budget: usize) -> Result<f64> {
    check_kj(k, j)?;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match classify_survival(k, j, mid, budget) {
            SurvivalVerdict::DiesOut => lo = mid,
            SurvivalVerdict::Survives(_) => hi = mid,
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Headroom, in bits, of the rounded envelope below the smallest target.
pub const CERTIFICATE_BITS: u32 = 128;

/// Grid resolution for [`certify_pn_bound`] that keeps `CERTIFICATE_BITS`
/// of relative precision down to `smallest_target`.
pub fn certificate_resolution(smallest_target: &BigRational) -> u32 {
    let scale = if smallest_target.is_positive() {
        smallest_target
            .denom()
            .bits()
            .saturating_sub(smallest_target.numer().bits())
            + 1
    } else {
        0
    };
    CERTIFICATE_BITS + scale as u32
}

/// Outcome of [`certify_pn_bound`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCertificate {
    pub n_max: usize,
    pub bits: u32,
    /// First `n` whose envelope exceeds the bound; `None` certifies
    /// `p_n <= bound(n)` for every `1 <= n <= n_max`.
    pub first_failure: Option<usize>,
}

impl BoundCertificate {
    pub fn holds(&self) -> bool {
        self.first_failure.is_none()
    }
}

/// Certifies `p_n <= bound(n)` for `1 <= n <= n_max` in exact arithmetic.
///
/// Exact iterates have doubly exponential denominators. The survival map is
/// increasing, so mapping the previous envelope value exactly and rounding up
/// to a multiple of `2^-bits` gives `u_n >= p_n`, and `u_n <= bound(n)` is an
/// integer inequality. `bound` is called once per `n`, in increasing order;
/// size `bits` with [`certificate_resolution`].
pub fn certify_pn_bound<F>(
    k: usize,
    j: usize,
    p: &BigRational,
    n_max: usize,
    bits: u32,
    mut bound: F,
) -> Result<BoundCertificate>
where
    F: FnMut(usize) -> BigRational,
{
    check_kj(k, j)?;
    check_density(p)?;
    let (a, b) = (p.numer().magnitude(), p.denom().magnitude());
    let shift = bits as usize * (k - 1);
    let one = BigUint::one() << bits;
    let one_k = BigUint::one() << (bits as usize * k);
    // ceil(x / (b·2^shift)), as nested ceilings
    let round_up = |x: BigUint| {
        let q = (x + b - BigUint::one()) / b;
        (q + (BigUint::one() << shift) - BigUint::one()) >> shift
    };
    let m = k - j + 1;
    let coeffs: Vec<BigUint> = (0..=k).map(|i| BigUint::from(binomial(k, i))).collect();
    let mut u = ((a << bits as usize) + b - BigUint::one()) / b;
    for n in 1..=n_max {
        let v = &one - &u;
        // 2^{bits·k} P(Bin(k, u) >= m)
        let tail = if m == 1 {
            &one_k - v.pow(k as u32)
        } else {
            (m..=k)
                .map(|i| &coeffs[i] * u.pow(i as u32) * v.pow((k - i) as u32))
                .sum()
        };
        u = round_up(a * tail);
        let target = bound(n);
        if target.is_negative() || &u * target.denom().magnitude() > target.numer().magnitude() << bits as usize {
            return Ok(BoundCertificate {
                n_max,
                bits,
                first_failure: Some(n),
            });
        }
    }
    Ok(BoundCertificate {
        n_max,
        bits,
        first_failure: None,
    })
}

/// How the Dirichlet form of the cluster size is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DirichletMode {
    /// Enumerate all `2^|T|` configurations; at most 20 vertices.
    Exact,
    /// Average over independent equilibrium samples.
    MonteCarlo { samples: usize, seed: u64 },
    /// With every child of a flipped vertex empty, flipping it changes the
    /// cluster by one exactly when all its ancestors are occupied, so
    /// `D(N_r) = p(1-p) [ (1-p)^k Σ_{d<L} (kp)^d + (kp)^L ]`. Any depth.
    ClosedForm,
}

/// Variational lower bound `Var(N_r)/D(N_r)` on the relaxation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapBound {
    pub variance: f64,
    pub dirichlet: f64,
    pub dirichlet_stderr: f64,
    pub bound: f64,
}

pub const EXACT_DIRICHLET_CAP: usize = 20;

/// `Σ_x c_x p(1-p) (N(η^{x,1}) - N(η^{x,0}))^2` at a single configuration.
fn local_dirichlet(tree: &TreeTopology, config: &mut Configuration, params: &ModelParams) -> f64 {
    let pq = params.p * (1.0 - params.p);
    let mut total = 0.0;
    for x in 0..config.len() {
        if empty_children(tree, config, x) < params.j {
            continue;
        }
        let old = config.get(x);
        config.set(x, true);
        let up = cluster_size_unchecked(tree, config) as f64;
        config.set(x, false);
        let down = cluster_size_unchecked(tree, config) as f64;
        config.set(x, old);
        total += pq * (up - down) * (up - down);
    }
    total
}

pub fn test_function_gap_bound(k: usize, p: f64, depth: usize, mode: DirichletMode) -> Result<GapBound> {
    // The closed form never materializes the tree; a single vertex suffices
    // to validate the parameters.
    let tree = TreeTopology::new(k, if mode == DirichletMode::ClosedForm { 0 } else { depth })?;
    let params = ModelParams::ofa(p, k);
    params.validate(&tree)?;
    let variance = cluster_variance_series(k, p, depth)?[depth];
    let n = tree.vertex_count();
    let (dirichlet, dirichlet_stderr) = match mode {
        DirichletMode::ClosedForm => {
            let kp = k as f64 * p;
            let interior: f64 = (0..depth).map(|d| kp.powi(d as i32)).sum();
            let q = 1.0 - p;
            (p * q * (q.powi(k as i32) * interior + kp.powi(depth as i32)), 0.0)
        }
        DirichletMode::Exact => {
            if n > EXACT_DIRICHLET_CAP {
                return Err(Error::StateSpaceTooLarge {
                    cap: EXACT_DIRICHLET_CAP,
                    len: n,
                });
            }
            let mut total = 0.0;
            for s in 0..(1u64 << n) {
                let mut c = Configuration::from_state_index(n, s);
                let ones = c.count_ones() as i32;
                let w = p.powi(ones) * (1.0 - p).powi(n as i32 - ones);
                if w > 0.0 {
                    total += w * local_dirichlet(&tree, &mut c, &params);
                }
            }
            (total, 0.0)
        }
        DirichletMode::MonteCarlo { samples, seed } => {
            use rand::SeedableRng;
            if samples < 2 {
                return Err(Error::InvalidParameter("need at least 2 samples".into()));
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..samples {
                let mut c = crate::model::sample_equilibrium_with(&tree, p, &mut rng);
                let v = local_dirichlet(&tree, &mut c, &params);
                s1 += v;
                s2 += v * v;
            }
            let m = s1 / samples as f64;
            let var = (s2 / samples as f64 - m * m).max(0.0) * samples as f64 / (samples - 1) as f64;
            (m, (var / samples as f64).sqrt())
        }
    };
    if dirichlet <= 0.0 {
        return Err(Error::InvalidParameter("cluster size has zero Dirichlet form".into()));
    }
    Ok(GapBound {
        variance,
        dirichlet,
        dirichlet_stderr,
        bound: variance / dirichlet,
    })
}
