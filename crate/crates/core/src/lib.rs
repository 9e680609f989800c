//! Push-pull self-deployment of mobile sensors: lattice math, per-sensor
//! protocol, deterministic simulator, trace verifiers and scenarios.

pub mod batch;
pub mod energy;
pub mod geometry;
pub mod lattice;
pub mod metrics;
pub mod num;
pub mod protocol;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod tight;

pub use num::Scalar;

pub type Point = geometry::Point<f64>;
pub type Aoi = geometry::Aoi<f64>;
pub type GridSpec = lattice::GridSpec<f64>;
pub type RadioParams = lattice::RadioParams<f64>;
pub use lattice::{HexCoord, PortionKey};
