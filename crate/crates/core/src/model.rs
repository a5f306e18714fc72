//! Configurations, kinetic constraints, the bootstrap map and the root cluster.
//!
//! Sites outside the finite tree are treated as empty (zero boundary below the
//! leaves), so every leaf is unconstrained.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tree::{TreeTopology, VertexId};

/// Occupancy bits over the vertices of a tree; bit `v` is vertex `v`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    words: Vec<u64>,
    len: usize,
}

impl Configuration {
    pub fn empty(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn full(len: usize) -> Self {
        let mut c = Self {
            words: vec![u64::MAX; len.div_ceil(64)],
            len,
        };
        c.mask_tail();
        c
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut c = Self::empty(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            c.set(i, b);
        }
        c
    }

    /// Configuration whose bit pattern is the state index `state`.
    pub fn from_state_index(len: usize, state: u64) -> Self {
        assert!(len <= 64, "state index only defined for at most 64 sites");
        let mut c = Self::empty(len);
        if len > 0 {
            c.words[0] = state;
            c.mask_tail();
        }
        c
    }

    /// Bit-packed integer value; sites beyond 64 are not representable.
    pub fn state_index(&self) -> u64 {
        assert!(self.len <= 64, "state index only defined for at most 64 sites");
        self.words.first().copied().unwrap_or(0)
    }

    fn mask_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    /// Pointwise `self <= other`.
    pub fn le(&self, other: &Self) -> bool {
        self.len == other.len && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    /// Lowercase hex of the packed integer, most significant digit first,
    /// padded to `ceil(len/4)` digits. Bit 0 (vertex 0) is the low bit of the
    /// last digit.
    pub fn to_hex(&self) -> String {
        let digits = self.len.div_ceil(4).max(1);
        (0..digits)
            .rev()
            .map(|d| {
                let mut nibble = 0u32;
                for b in 0..4 {
                    let i = 4 * d + b;
                    if i < self.len && self.get(i) {
                        nibble |= 1 << b;
                    }
                }
                char::from_digit(nibble, 16).unwrap()
            })
            .collect()
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<Self> {
        let mut c = Self::empty(len);
        for (d, ch) in hex.chars().rev().enumerate() {
            let nibble = ch
                .to_digit(16)
                .filter(|_| !ch.is_ascii_uppercase())
                .ok_or_else(|| Error::Parse(format!("invalid hex digit `{ch}`")))?;
            for b in 0..4 {
                if nibble >> b & 1 == 1 {
                    let i = 4 * d + b;
                    if i >= len {
                        return Err(Error::Parse(format!("hex `{hex}` sets bit {i} beyond {len} sites")));
                    }
                    c.set(i, true);
                }
            }
        }
        Ok(c)
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
        write!(f, "Configuration({s})")
    }
}

impl Serialize for Configuration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

/// Density and facilitation threshold. `j == k` is the OFA-kf model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = f64> {
    pub p: T,
    pub j: usize,
}

impl<T: Scalar + Copy> ModelParams<T> {
    /// OFA-kf parameters for a tree of branching `k`: all children must be empty.
    pub fn ofa(p: T, k: usize) -> Self {
        Self { p, j: k }
    }

    pub fn validate(&self, tree: &TreeTopology) -> Result<()> {
        if !(self.p >= T::zero() && self.p <= T::one()) {
            return Err(Error::InvalidParameter(format!("density {} outside [0,1]", self.p)));
        }
        if self.j == 0 || self.j > tree.k() {
            return Err(Error::InvalidParameter(format!(
                "threshold j={} must satisfy 1 <= j <= k={}",
                self.j,
                tree.k()
            )));
        }
        Ok(())
    }
}

fn check_shape(tree: &TreeTopology, config: &Configuration) -> Result<()> {
    if config.len() != tree.vertex_count() {
        return Err(Error::ShapeMismatch {
            expected: tree.vertex_count(),
            got: config.len(),
        });
    }
    Ok(())
}

/// Number of empty children of `x` in the zero-extended configuration.
#[inline]
pub(crate) fn empty_children(tree: &TreeTopology, config: &Configuration, x: usize) -> usize {
    let children = tree.children(VertexId(x));
    if children.is_empty() {
        return tree.k();
    }
    children.filter(|&c| !config.get(c)).count()
}

/// Kinetic constraint at `x`: at least `j` children empty.
pub fn constraint<T>(
    tree: &TreeTopology,
    config: &Configuration,
    x: VertexId,
    params: &ModelParams<T>,
) -> Result<bool> {
    tree.check(x)?;
    check_shape(tree, config)?;
    Ok(empty_children(tree, config, x.0) >= params.j)
}

/// One synchronous application of the bootstrap map.
pub fn bootstrap_step<T>(
    tree: &TreeTopology,
    config: &Configuration,
    params: &ModelParams<T>,
) -> Result<Configuration> {
    check_shape(tree, config)?;
    let mut out = Configuration::empty(config.len());
    for x in 0..config.len() {
        if config.get(x) && empty_children(tree, config, x) < params.j {
            out.set(x, true);
        }
    }
    Ok(out)
}

pub fn bootstrap_iterate<T>(
    tree: &TreeTopology,
    config: &Configuration,
    params: &ModelParams<T>,
    n: usize,
) -> Result<Configuration> {
    check_shape(tree, config)?;
    let mut cur = config.clone();
    for _ in 0..n {
        let next = bootstrap_step(tree, &cur, params)?;
        if next == cur {
            break;
        }
        cur = next;
    }
    Ok(cur)
}

// B^n(η)_y, evaluated on the subtree of y only.
fn survives(tree: &TreeTopology, config: &Configuration, y: usize, n: usize, j: usize) -> bool {
    if !config.get(y) {
        return false;
    }
    if n == 0 {
        return true;
    }
    let children = tree.children(VertexId(y));
    let mut dead = tree.k() - children.len();
    for c in children {
        if !survives(tree, config, c, n - 1, j) {
            dead += 1;
            if dead >= j {
                return false;
            }
        }
    }
    dead < j
}

/// Long-range constraint `c_x(B^{ℓ-1}(η))`, computed on the first `ℓ` levels below `x`.
pub fn long_range_constraint<T>(
    tree: &TreeTopology,
    config: &Configuration,
    x: VertexId,
    range: usize,
    params: &ModelParams<T>,
) -> Result<bool> {
    tree.check(x)?;
    check_shape(tree, config)?;
    if range == 0 {
        return Err(Error::InvalidParameter("constraint range must be >= 1".into()));
    }
    let children = tree.children(x);
    let mut dead = tree.k() - children.len();
    for c in children {
        if !survives(tree, config, c, range - 1, params.j) {
            dead += 1;
        }
    }
    Ok(dead >= params.j)
}

pub fn sample_equilibrium_with<R: Rng + ?Sized>(tree: &TreeTopology, p: f64, rng: &mut R) -> Configuration {
    let mut c = Configuration::empty(tree.vertex_count());
    for i in 0..c.len() {
        if rng.gen::<f64>() < p {
            c.set(i, true);
        }
    }
    c
}

/// Independent Bernoulli(p) occupation at every vertex, reproducible from `seed`.
pub fn sample_equilibrium(tree: &TreeTopology, p: f64, seed: u64) -> Result<Configuration> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("density {p} outside [0,1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_equilibrium_with(tree, p, &mut rng))
}

/// Size of the occupied cluster connected to the root.
pub fn cluster_size(tree: &TreeTopology, config: &Configuration) -> Result<usize> {
    check_shape(tree, config)?;
    Ok(cluster_size_unchecked(tree, config))
}

pub(crate) fn cluster_size_unchecked(tree: &TreeTopology, config: &Configuration) -> usize {
    if config.is_empty() || !config.get(0) {
        return 0;
    }
    let mut stack = vec![0usize];
    let mut count = 0;
    while let Some(v) = stack.pop() {
        count += 1;
        stack.extend(tree.children(VertexId(v)).filter(|&c| config.get(c)));
    }
    count
}
