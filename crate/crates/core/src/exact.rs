//! Exact analysis of the finite-volume chain on small trees.
//!
//! States are bit-packed configurations (`state = Σ η_v 2^v`). The generator
//! is stored in compressed rows; its reversibility with respect to the product
//! Bernoulli measure lets the spectral gap be computed on the symmetric matrix
//! `D^{1/2} (-L) D^{-1/2}`, whose off-diagonal entries are just
//! `-sqrt(p(1-p))` on every allowed flip.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lanczos_smallest, symmetric_eigen, LanczosOptions};
use crate::model::{empty_children, Configuration, ModelParams};
use crate::scalar::{cast, Real};
use crate::tree::TreeTopology;

/// Default cap on the number of vertices for exact work (2^15 states).
pub const DEFAULT_VERTEX_CAP: usize = 15;
/// Dense eigensolves are used up to this many states.
pub const DENSE_STATE_LIMIT: usize = 1 << 10;

/// Sparse rate matrix of the constrained chain on `{0,1}^T`.
#[derive(Debug, Clone)]
pub struct SparseGenerator<T> {
    tree: TreeTopology,
    params: ModelParams<T>,
    row_start: Vec<usize>,
    /// Flipped vertex of each off-diagonal entry; the target state is `row ^ (1 << v)`.
    flip: Vec<u8>,
    rate: Vec<T>,
    diag: Vec<T>,
}

fn stationary_weight<T: Real>(p: T, n: usize, state: u64) -> T {
    let ones = state.count_ones() as i32;
    p.powi(ones) * (T::one() - p).powi(n as i32 - ones)
}

impl<T: Real> SparseGenerator<T> {
    pub fn new(tree: &TreeTopology, params: ModelParams<T>) -> Result<Self> {
        Self::with_cap(tree, params, DEFAULT_VERTEX_CAP)
    }

    pub fn with_cap(tree: &TreeTopology, params: ModelParams<T>, cap: usize) -> Result<Self> {
        params.validate(tree)?;
        let n = tree.vertex_count();
        if n > cap || n > 24 {
            return Err(Error::StateSpaceTooLarge {
                cap: cap.min(24),
                len: n,
            });
        }
        let dim = 1usize << n;
        let p = params.p;
        let q = T::one() - p;
        let mut row_start = Vec::with_capacity(dim + 1);
        let mut flip = Vec::with_capacity(dim * n / 2);
        let mut rate = Vec::with_capacity(dim * n / 2);
        let mut diag = Vec::with_capacity(dim);
        for s in 0..dim as u64 {
            row_start.push(flip.len());
            let config = Configuration::from_state_index(n, s);
            let mut out = T::zero();
            for x in 0..n {
                if empty_children(tree, &config, x) < params.j {
                    continue;
                }
                let r = if config.get(x) { q } else { p };
                if r > T::zero() {
                    flip.push(x as u8);
                    rate.push(r);
                    out = out + r;
                }
            }
            diag.push(-out);
        }
        row_start.push(flip.len());
        Ok(Self {
            tree: tree.clone(),
            params,
            row_start,
            flip,
            rate,
            diag,
        })
    }

    pub fn dimension(&self) -> usize {
        self.diag.len()
    }

    pub fn tree(&self) -> &TreeTopology {
        &self.tree
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn nnz(&self) -> usize {
        self.flip.len()
    }

    /// Off-diagonal entries `(target, rate)` of row `state`.
    pub fn row(&self, state: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.row_start[state]..self.row_start[state + 1];
        self.flip[range.clone()]
            .iter()
            .zip(&self.rate[range])
            .map(move |(&v, &r)| (state ^ (1usize << v), r))
    }

    pub fn diagonal(&self, state: usize) -> T {
        self.diag[state]
    }

    pub fn max_exit_rate(&self) -> T {
        self.diag.iter().fold(T::zero(), |m, &d| m.max(-d))
    }

    /// `(Q f)(σ) = Σ_σ' Q(σ,σ') f(σ')`.
    pub fn apply_right(&self, f: &[T], out: &mut [T]) {
        for s in 0..self.dimension() {
            let mut acc = self.diag[s] * f[s];
            for (t, r) in self.row(s) {
                acc = acc + r * f[t];
            }
            out[s] = acc;
        }
    }

    /// `(ν Q)(σ') = Σ_σ ν(σ) Q(σ,σ')`.
    pub fn apply_left(&self, nu: &[T], out: &mut [T]) {
        for (s, o) in out.iter_mut().enumerate() {
            *o = self.diag[s] * nu[s];
        }
        for s in 0..self.dimension() {
            let w = nu[s];
            if w == T::zero() {
                continue;
            }
            for (t, r) in self.row(s) {
                out[t] = out[t] + w * r;
            }
        }
    }

    /// The product Bernoulli(p) measure on the same state space.
    pub fn stationary(&self) -> DistributionVector<T> {
        stationary_measure(&self.tree, self.params.p)
    }

    /// Largest violation of zero row sums, nonnegative rates and detailed balance.
    pub fn invariant_violation(&self) -> T {
        let mu = self.stationary();
        let mut worst = T::zero();
        for s in 0..self.dimension() {
            let mut sum = self.diag[s];
            for (t, r) in self.row(s) {
                sum = sum + r;
                if r < T::zero() {
                    worst = worst.max(-r);
                }
                let back = self
                    .row(t)
                    .find(|&(u, _)| u == s)
                    .map(|(_, r2)| r2)
                    .unwrap_or(T::zero());
                let lhs = mu.weights[s] * r;
                let rhs = mu.weights[t] * back;
                let scale = lhs.abs().max(rhs.abs()).max(T::min_positive_value());
                worst = worst.max((lhs - rhs).abs() / scale);
            }
            worst = worst.max(sum.abs());
        }
        worst
    }

    fn symmetric_apply(&self, x: &[T], y: &mut [T]) {
        // -S with S = D^{1/2} Q D^{-1/2}; off-diagonals become -sqrt(pq)
        let p = self.params.p;
        let s_off = (p * (T::one() - p)).sqrt();
        for s in 0..self.dimension() {
            let mut acc = -self.diag[s] * x[s];
            for (t, _) in self.row(s) {
                acc = acc - s_off * x[t];
            }
            y[s] = acc;
        }
    }

    fn dense_symmetric(&self) -> Vec<T> {
        let dim = self.dimension();
        let mut a = vec![T::zero(); dim * dim];
        let mut e = vec![T::zero(); dim];
        let mut col = vec![T::zero(); dim];
        for c in 0..dim {
            e[c] = T::one();
            self.symmetric_apply(&e, &mut col);
            for r in 0..dim {
                a[r * dim + c] = col[r];
            }
            e[c] = T::zero();
        }
        a
    }
}

/// Probability weights over the `2^|T|` states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionVector<T> {
    pub weights: Vec<T>,
}

impl<T: Real> DistributionVector<T> {
    pub fn point_mass(dim: usize, state: usize) -> Self {
        let mut weights = vec![T::zero(); dim];
        weights[state] = T::one();
        Self { weights }
    }

    pub fn total(&self) -> T {
        self.weights.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// `μ(|ν/μ - 1|^a)^{1/a}` for `a = 1` or `2`.
    pub fn la_distance(&self, mu: &Self, a: NormIndex) -> T {
        match a {
            NormIndex::One => self
                .weights
                .iter()
                .zip(&mu.weights)
                .fold(T::zero(), |acc, (&n, &m)| acc + (n - m).abs()),
            NormIndex::Two => self
                .weights
                .iter()
                .zip(&mu.weights)
                .fold(T::zero(), |acc, (&n, &m)| {
                    if m > T::zero() {
                        acc + (n - m) * (n - m) / m
                    } else if n > T::zero() {
                        T::infinity()
                    } else {
                        acc
                    }
                })
                .sqrt(),
        }
    }

    pub fn tv(&self, other: &Self) -> T {
        self.la_distance(other, NormIndex::One) / cast::<T>(2.0)
    }
}

/// The product Bernoulli(p) measure: weight `p^ones (1-p)^zeros`.
pub fn stationary_measure<T: Real>(tree: &TreeTopology, p: T) -> DistributionVector<T> {
    let n = tree.vertex_count();
    let weights = (0..1u64 << n).map(|s| stationary_weight(p, n, s)).collect();
    DistributionVector { weights }
}

/// Spectral gap with the associated eigenfunction.
#[derive(Debug, Clone)]
pub struct GapResult<T> {
    pub gap: T,
    /// Right eigenfunction `f` of `-L` for the gap, normalised so `μ(f²) = 1`.
    pub eigenfunction: Vec<T>,
    pub solver: &'static str,
}

/// Smallest nonzero eigenvalue of `-L_T`.
pub fn spectral_gap<T: Real>(gen: &SparseGenerator<T>) -> Result<T> {
    Ok(spectral_gap_with_vector(gen)?.gap)
}

pub fn spectral_gap_with_vector<T: Real>(gen: &SparseGenerator<T>) -> Result<GapResult<T>> {
    let p = gen.params.p;
    if !(p > T::zero() && p < T::one()) {
        return Err(Error::InvalidParameter(
            "spectral gap needs 0 < p < 1 (the product measure must have full support)".into(),
        ));
    }
    let dim = gen.dimension();
    let mu = gen.stationary();
    let sqrt_mu: Vec<T> = mu.weights.iter().map(|w| w.sqrt()).collect();
    let (gap, u, solver) = if dim <= DENSE_STATE_LIMIT {
        let eig = symmetric_eigen(&gen.dense_symmetric(), dim)?;
        // ground state is sqrt(μ), eigenvalue 0; the next one must be positive
        let scale = eig.values.last().copied().unwrap_or(T::one()).abs().max(T::one());
        let zero_tol = cast::<T>(1e3) * T::epsilon() * scale;
        if dim > 1 && eig.values[1] <= zero_tol {
            return Err(Error::Reducible(format!(
                "second eigenvalue {:?} is zero",
                eig.values[1]
            )));
        }
        if dim == 1 {
            return Err(Error::InvalidParameter("one-state chain has no gap".into()));
        }
        (eig.values[1], eig.vector(1), "dense-householder-ql")
    } else {
        let opts = LanczosOptions::default();
        let r = lanczos_smallest(
            dim,
            |x, y| gen.symmetric_apply(x, y),
            std::slice::from_ref(&sqrt_mu),
            opts,
        )?;
        if r.value <= T::zero() {
            return Err(Error::Reducible(format!("deflated spectrum reaches {:?}", r.value)));
        }
        (r.value, r.vector, "lanczos-full-reorth")
    };
    // back to the unsymmetrised eigenfunction f = u / sqrt(μ)
    let mut f: Vec<T> = u.iter().zip(&sqrt_mu).map(|(&a, &b)| a / b).collect();
    let norm = f
        .iter()
        .zip(&mu.weights)
        .fold(T::zero(), |acc, (&x, &w)| acc + w * x * x)
        .sqrt();
    for x in f.iter_mut() {
        *x = *x / norm;
    }
    Ok(GapResult {
        gap,
        eigenfunction: f,
        solver,
    })
}

/// `μ(f, -Lf) = ½ Σ μ(σ) Q(σ,σ') (f(σ') - f(σ))²`.
pub fn dirichlet_form<T: Real>(gen: &SparseGenerator<T>, f: &[T]) -> T {
    let mu = gen.stationary();
    let half = cast::<T>(0.5);
    let mut total = T::zero();
    for s in 0..gen.dimension() {
        for (t, r) in gen.row(s) {
            let d = f[t] - f[s];
            total = total + mu.weights[s] * r * d * d;
        }
    }
    half * total
}

pub fn variance<T: Real>(mu: &DistributionVector<T>, f: &[T]) -> T {
    let mean = mu.weights.iter().zip(f).fold(T::zero(), |a, (&w, &x)| a + w * x);
    mu.weights
        .iter()
        .zip(f)
        .fold(T::zero(), |a, (&w, &x)| a + w * (x - mean) * (x - mean))
}

/// `D(f)/Var(f)`; errors on constant `f`.
pub fn rayleigh_quotient<T: Real>(gen: &SparseGenerator<T>, f: &[T]) -> Result<T> {
    let var = variance(&gen.stationary(), f);
    if var <= T::zero() {
        return Err(Error::InvalidParameter("observable is constant under μ".into()));
    }
    Ok(dirichlet_form(gen, f) / var)
}

/// Uniformisation segment length: keeps `Λ·Δt <= 32` so Poisson weights stay representable.
const UNIFORMIZATION_CHUNK: f64 = 32.0;

/// `ν e^{tL}` by uniformisation. The truncated Poisson tail bounds the total
/// variation error by `tol` over the whole horizon.
pub fn evolve_distribution<T: Real>(
    gen: &SparseGenerator<T>,
    nu0: &DistributionVector<T>,
    t: f64,
) -> Result<DistributionVector<T>> {
    evolve_with_tol(gen, nu0, t, 1e-12)
}

pub fn evolve_with_tol<T: Real>(
    gen: &SparseGenerator<T>,
    nu0: &DistributionVector<T>,
    t: f64,
    tol: f64,
) -> Result<DistributionVector<T>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("time {t} must be nonnegative")));
    }
    if nu0.weights.len() != gen.dimension() {
        return Err(Error::OutcomeMismatch {
            left: nu0.weights.len(),
            right: gen.dimension(),
        });
    }
    let lambda = gen.max_exit_rate().to_f64_lossy();
    if t == 0.0 || lambda == 0.0 {
        return Ok(nu0.clone());
    }
    let total = lambda * t;
    let chunks = (total / UNIFORMIZATION_CHUNK).ceil().max(1.0) as usize;
    let a = total / chunks as f64;
    let tol_chunk = tol / chunks as f64;
    let inv_lambda: T = cast(1.0 / lambda);
    let dim = gen.dimension();
    let mut cur = nu0.weights.clone();
    let mut term = vec![T::zero(); dim];
    let mut next = vec![T::zero(); dim];
    let mut acc = vec![T::zero(); dim];
    for _ in 0..chunks {
        // term_n = ν P^n with P = I + Q/Λ
        term.copy_from_slice(&cur);
        let mut w = (-a).exp();
        let mut mass = w;
        for (o, &x) in acc.iter_mut().zip(&term) {
            *o = cast::<T>(w) * x;
        }
        let mut n = 0usize;
        while 1.0 - mass > tol_chunk && n < 10_000 {
            n += 1;
            gen.apply_left(&term, &mut next);
            for (x, &dx) in term.iter_mut().zip(&next) {
                *x = *x + dx * inv_lambda;
            }
            w *= a / n as f64;
            mass += w;
            let wt: T = cast(w);
            for (o, &x) in acc.iter_mut().zip(&term) {
                *o = *o + wt * x;
            }
        }
        cur.copy_from_slice(&acc);
    }
    Ok(DistributionVector { weights: cur })
}

/// Which L^a norm of `h_t - 1` defines the mixing time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormIndex {
    One,
    Two,
}

impl NormIndex {
    pub fn from_index(a: u32) -> Result<Self> {
        match a {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            _ => Err(Error::InvalidParameter(format!("norm index {a} not in {{1,2}}"))),
        }
    }
}

/// Start states over which the worst-case mixing time is taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartPolicy {
    /// Every state.
    All,
    /// The all-occupied state plus `count` seeded uniform random states.
    AllOnesPlusRandom { count: usize, seed: u64 },
    /// `All` up to 128 states, otherwise all-ones plus 64 random states.
    Auto { seed: u64 },
}

impl StartPolicy {
    pub const AUTO_EXHAUSTIVE_LIMIT: usize = 1 << 7;

    pub fn starts(&self, dim: usize) -> Vec<usize> {
        match *self {
            StartPolicy::All => (0..dim).collect(),
            StartPolicy::AllOnesPlusRandom { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut v = vec![dim - 1];
                v.extend((0..count).map(|_| rng.gen_range(0..dim)));
                v.sort_unstable();
                v.dedup();
                v
            }
            StartPolicy::Auto { seed } => {
                if dim <= Self::AUTO_EXHAUSTIVE_LIMIT {
                    StartPolicy::All.starts(dim)
                } else {
                    StartPolicy::AllOnesPlusRandom { count: 64, seed }.starts(dim)
                }
            }
        }
    }

    pub fn label(&self, dim: usize) -> String {
        match *self {
            StartPolicy::All => "all".into(),
            StartPolicy::AllOnesPlusRandom { count, seed } => format!("all-ones+{count}-random(seed={seed})"),
            StartPolicy::Auto { seed } => {
                if dim <= Self::AUTO_EXHAUSTIVE_LIMIT {
                    "all".into()
                } else {
                    format!("all-ones+64-random(seed={seed})")
                }
            }
        }
    }
}

/// Worst-start mixing time.
#[derive(Debug, Clone, Serialize)]
pub struct MixingTime {
    pub time: f64,
    pub worst_start: usize,
    pub start_policy: String,
    pub starts_evaluated: usize,
}

const MIX_THRESHOLD: f64 = 0.25;
const GRID_FACTOR: f64 = 1.3;
const BISECTION_REL_TOL: f64 = 1e-8;
const EVOLVE_TOL: f64 = 1e-11;

/// First time the L^a distance from `start` drops to 1/4. The distance is
/// nonincreasing for a reversible chain, so a geometric grid followed by
/// bisection brackets the crossing.
pub fn crossing_time<T: Real>(
    gen: &SparseGenerator<T>,
    mu: &DistributionVector<T>,
    start: usize,
    a: NormIndex,
) -> Result<f64> {
    let threshold: T = cast(MIX_THRESHOLD);
    let mut nu = DistributionVector::point_mass(gen.dimension(), start);
    if nu.la_distance(mu, a) <= threshold {
        return Ok(0.0);
    }
    let mut t_lo = 0.0;
    let mut t_hi = 0.05;
    let mut nu_lo = nu.clone();
    loop {
        nu = evolve_with_tol(gen, &nu_lo, t_hi - t_lo, EVOLVE_TOL)?;
        if nu.la_distance(mu, a) <= threshold {
            break;
        }
        t_lo = t_hi;
        nu_lo = nu.clone();
        t_hi *= GRID_FACTOR;
        if t_hi > 1e9 {
            return Err(Error::NoConvergence("distance never fell below 1/4".into()));
        }
    }
    while t_hi - t_lo > BISECTION_REL_TOL * t_hi {
        let mid = 0.5 * (t_lo + t_hi);
        let nu_mid = evolve_with_tol(gen, &nu_lo, mid - t_lo, EVOLVE_TOL)?;
        if nu_mid.la_distance(mu, a) <= threshold {
            t_hi = mid;
        } else {
            t_lo = mid;
            nu_lo = nu_mid;
        }
    }
    Ok(0.5 * (t_lo + t_hi))
}

/// `T_a(T) = inf{t : max_η μ(|h_t^η - 1|^a)^{1/a} <= 1/4}` over the policy's start set.
pub fn mixing_time_exact<T: Real>(
    tree: &TreeTopology,
    params: ModelParams<T>,
    a: NormIndex,
    policy: &StartPolicy,
) -> Result<MixingTime> {
    let gen = SparseGenerator::new(tree, params)?;
    mixing_time_for(&gen, a, policy)
}

pub fn mixing_time_for<T: Real>(gen: &SparseGenerator<T>, a: NormIndex, policy: &StartPolicy) -> Result<MixingTime> {
    use rayon::prelude::*;
    let mu = gen.stationary();
    let starts = policy.starts(gen.dimension());
    let times: Vec<(usize, f64)> = starts
        .par_iter()
        .map(|&s| crossing_time(gen, &mu, s, a).map(|t| (s, t)))
        .collect::<Result<_>>()?;
    let (worst_start, time) =
        times.iter().copied().fold(
            (starts[0], f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        );
    Ok(MixingTime {
        time,
        worst_start,
        start_policy: policy.label(gen.dimension()),
        starts_evaluated: starts.len(),
    })
}

/// Everything the `exact-gap`/`exact-mix` commands report.
#[derive(Debug, Clone, Serialize)]
pub struct ExactReport {
    pub k: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub p: f64,
    pub j: usize,
    pub gap: f64,
    pub t_rel: f64,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub start_policy: Option<String>,
    pub solver: String,
    pub solver_tolerance: f64,
}

pub fn exact_report(
    k: usize,
    depth: usize,
    params: ModelParams<f64>,
    mixing: Option<&StartPolicy>,
) -> Result<ExactReport> {
    let tree = TreeTopology::new(k, depth)?;
    let gen = SparseGenerator::new(&tree, params)?;
    let g = spectral_gap_with_vector(&gen)?;
    let (t1, t2, policy) = match mixing {
        Some(policy) => {
            let t1 = mixing_time_for(&gen, NormIndex::One, policy)?;
            let t2 = mixing_time_for(&gen, NormIndex::Two, policy)?;
            (Some(t1.time), Some(t2.time), Some(t1.start_policy))
        }
        None => (None, None, None),
    };
    Ok(ExactReport {
        k,
        depth,
        p: params.p,
        j: params.j,
        gap: g.gap,
        t_rel: 1.0 / g.gap,
        t1,
        t2,
        start_policy: policy,
        solver: g.solver.into(),
        solver_tolerance: LanczosOptions::default().tol,
    })
}
