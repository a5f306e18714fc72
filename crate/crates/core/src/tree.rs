//! Finite rooted k-ary trees with breadth-first vertex numbering.
//!
//! The root is vertex 0 and child `i` of vertex `v` is `k*v + i + 1`, so
//! navigation is pure arithmetic. Leaves are the vertices at depth `L`.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a vertex in breadth-first order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(pub usize);

impl VertexId {
    pub const ROOT: VertexId = VertexId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Immutable complete k-ary tree of depth `L` (that is, `L` levels below the root).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    k: usize,
    depth: usize,
    /// `level_start[d]` is the id of the first vertex at depth `d`; one extra
    /// entry holds the vertex count.
    level_start: Vec<usize>,
    depth_of: Vec<u32>,
}

impl TreeTopology {
    /// Builds the complete k-ary tree with `depth` levels below the root.
    pub fn new(k: usize, depth: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::ZeroBranching);
        }
        let too_large = || Error::TreeTooLarge { k, depth };
        let mut level_start = Vec::with_capacity(depth + 2);
        let mut start = 0usize;
        let mut width = 1usize;
        for d in 0..=depth {
            level_start.push(start);
            start = start.checked_add(width).ok_or_else(too_large)?;
            if d < depth {
                width = width.checked_mul(k).ok_or_else(too_large)?;
            }
        }
        level_start.push(start);
        // depth_of is materialised, so refuse trees we could never index anyway.
        if start > (u32::MAX as usize) {
            return Err(too_large());
        }
        let mut depth_of = Vec::with_capacity(start);
        for d in 0..=depth {
            let count = level_start[d + 1] - level_start[d];
            depth_of.extend(std::iter::repeat_n(d as u32, count));
        }
        Ok(Self {
            k,
            depth,
            level_start,
            depth_of,
        })
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of levels below the root.
    #[inline]
    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        self.depth_of.len()
    }

    #[inline]
    pub fn root(&self) -> VertexId {
        VertexId::ROOT
    }

    pub fn check(&self, x: VertexId) -> Result<()> {
        if x.0 < self.vertex_count() {
            Ok(())
        } else {
            Err(Error::InvalidVertex {
                index: x.0,
                len: self.vertex_count(),
            })
        }
    }

    #[inline]
    pub fn depth_of(&self, x: VertexId) -> usize {
        self.depth_of[x.0] as usize
    }

    #[inline]
    pub fn is_leaf(&self, x: VertexId) -> bool {
        self.depth_of(x) == self.depth
    }

    /// Parent of `x`, or `None` for the root.
    #[inline]
    pub fn parent(&self, x: VertexId) -> Option<VertexId> {
        if x.0 == 0 {
            None
        } else {
            Some(VertexId((x.0 - 1) / self.k))
        }
    }

    /// Ids of the children of `x` (empty range for leaves).
    #[inline]
    pub fn children(&self, x: VertexId) -> Range<usize> {
        if self.is_leaf(x) {
            0..0
        } else {
            let first = self.k * x.0 + 1;
            first..first + self.k
        }
    }

    /// Vertex ids at depth `d`.
    pub fn level(&self, d: usize) -> Range<usize> {
        if d > self.depth {
            return 0..0;
        }
        self.level_start[d]..self.level_start[d + 1]
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> {
        (0..self.vertex_count()).map(VertexId)
    }

    /// All descendants of `x` (including `x`) in breadth-first order.
    pub fn subtree_vertices(&self, x: VertexId) -> Result<Vec<VertexId>> {
        self.check(x)?;
        let mut out = vec![x];
        out.extend(self.descendants(x, self.depth - self.depth_of(x)));
        Ok(out)
    }

    /// Descendants of `x` at distance `1..=m`, breadth-first; `x` itself excluded.
    pub fn vertices_within_levels(&self, x: VertexId, m: usize) -> Result<Vec<VertexId>> {
        self.check(x)?;
        Ok(self.descendants(x, m))
    }

    // Descendants of x at depth offset d form the contiguous id range
    // [x*k^d + (k^d-1)/(k-1), +k^d) in breadth-first order.
    fn descendants(&self, x: VertexId, m: usize) -> Vec<VertexId> {
        let levels = m.min(self.depth - self.depth_of(x));
        let mut out = Vec::new();
        let (mut lo, mut hi) = (x.0, x.0 + 1);
        for _ in 0..levels {
            lo = self.k * lo + 1;
            hi = self.k * (hi - 1) + 1 + self.k;
            out.extend((lo..hi).map(VertexId));
        }
        out
    }
}
