//! Simulation of finitary random interlacements on Z^d: killed random walks,
//! Green's functions and capacities, windowed Poisson samples of trajectories,
//! cluster and layer analysis, critical-intensity estimation and the slab
//! exploration used for the supercritical bound.

pub mod error;
pub mod explorer;
pub mod lattice;
pub mod rng;
pub mod stats;
pub mod walk;
pub mod capacity;
pub mod cluster;
pub mod critical;
pub mod fri;
pub mod reveal;

pub use error::{Error, Result};
pub use lattice::{Bounds, BoxKind, Edge, EdgeSet, LatticeBox, Point, SiteSet};
pub use rng::RngStream;
