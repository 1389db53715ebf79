//! Distributed Laplacian solving on top of congested part-wise aggregation.
//!
//! The crate pairs a round-synchronous network simulator ([`netsim`]) with
//! the building blocks of a minor-aggregation based Laplacian solver:
//! ρ-minor distributions ([`minors`]), congested aggregation and shortcuts
//! ([`aggregation`]), ultra-sparsification ([`ultrasparsify`]), parallel
//! Gaussian elimination ([`eliminate`]), Schur complement approximation
//! ([`approxsc`]) and the preconditioned solver itself ([`solver`]). A dense
//! oracle ([`oracle`]) checks every spectral guarantee.

pub mod graph;
pub mod oracle;
pub mod netsim;
pub mod aggregation;
pub mod experiments;
pub mod minors;
pub mod linalg;
pub mod cost;
pub mod ultrasparsify;
pub mod eliminate;
pub mod approxsc;

pub use graph::{Edge, Partition, TreeDecomposition, WeightedGraph};
pub mod solver;
pub mod io;
