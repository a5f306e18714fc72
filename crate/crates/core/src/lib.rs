//! Oriented kinetically constrained spin models on rooted k-ary trees.
//!
//! Each vertex carries a 0/1 spin that is resampled from Bernoulli(p) at rate
//! one whenever at least `j` of its `k` children are empty (`j = k` is the
//! oriented Fredrickson-Andersen k-facilitated model). The crate provides
//! exact generators and spectra on small trees, closed-form bootstrap and
//! cluster recursions, an event-driven Monte Carlo engine for large trees,
//! Hellinger/total-variation product bounds and the scaling analysis that
//! ties them together.

// `!(x > 0.0)` rejects NaN along with non-positive values; index loops mirror the numerics.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod bounds;
pub mod error;
pub mod exact;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod recursions;
pub mod scalar;
pub mod tree;

pub use error::{Error, Result};
pub use model::{Configuration, ModelParams};
pub use scalar::{Real, Scalar};
pub use tree::{TreeTopology, VertexId};

/// Exact rational scalar for the closed-form recursions.
pub type Rational = num_rational::BigRational;
/// `p_n` series in double precision.
pub type PnSeries = recursions::RecursionSeries<f64>;
/// Cluster-size moments in double precision.
pub type ClusterMoments = recursions::ClusterStats<f64>;
