//! Hexagonal tiling and the triangular lattice of hexagon centers.
//!
//! Centers are addressed with axial coordinates `(a, b)` over the basis
//! `e1 = spacing * (cos θ, sin θ)` and `e2 = spacing * (cos(θ + 60°), sin(θ + 60°))`,
//! where `spacing = √3 * side` and `θ` is the grid orientation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aoi, Point};
use crate::num::Scalar;

/// Axial index of a hexagon center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct HexCoord {
    pub a: i32,
    pub b: i32,
}

const AXIAL_STEPS: [(i32, i32); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

impl HexCoord {
    pub const ORIGIN: HexCoord = HexCoord { a: 0, b: 0 };

    pub const fn new(a: i32, b: i32) -> Self {
        HexCoord { a, b }
    }

    /// The six coordinates sharing an edge with this one, counterclockwise
    /// starting along the grid orientation.
    pub fn adjacent(self) -> [HexCoord; 6] {
        AXIAL_STEPS.map(|(da, db)| HexCoord::new(self.a + da, self.b + db))
    }

    /// Hop count on the hexagon adjacency graph.
    pub fn hex_distance(self, other: HexCoord) -> u32 {
        let da = (self.a - other.a) as i64;
        let db = (self.b - other.b) as i64;
        ((da.abs() + db.abs() + (da + db).abs()) / 2) as u32
    }

    pub fn is_adjacent(self, other: HexCoord) -> bool {
        self.hex_distance(other) == 1
    }

    /// All coordinates at exactly `radius` hops, `radius >= 1`.
    pub fn ring(self, radius: u32) -> Vec<HexCoord> {
        if radius == 0 {
            return vec![self];
        }
        let r = radius as i32;
        let mut out = Vec::with_capacity(6 * radius as usize);
        let mut cur = HexCoord::new(self.a + AXIAL_STEPS[4].0 * r, self.b + AXIAL_STEPS[4].1 * r);
        for &(da, db) in &AXIAL_STEPS {
            for _ in 0..r {
                out.push(cur);
                cur = HexCoord::new(cur.a + da, cur.b + db);
            }
        }
        out
    }
}

impl std::fmt::Display for HexCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.a, self.b)
    }
}

/// One tiling portion: where its lattice sits and who started it when.
///
/// Equality and ordering look only at `(starter_timestamp, starter_id)`, so
/// the older portion compares as smaller.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec<T> {
    pub origin: Point<T>,
    pub orientation: T,
    pub side: T,
    pub starter_timestamp: T,
    pub starter_id: u32,
}

impl<T: Scalar> GridSpec<T> {
    pub fn new(origin: Point<T>, orientation: T, side: T, starter_timestamp: T, starter_id: u32) -> Self {
        debug_assert!(side > T::zero(), "hexagon side must be positive");
        GridSpec { origin, orientation, side, starter_timestamp, starter_id }
    }

    pub fn spacing(&self) -> T {
        T::sqrt3() * self.side
    }

    pub fn is_older_than(&self, other: &GridSpec<T>) -> bool {
        self < other
    }

    /// Identity key that survives serialization.
    pub fn key(&self) -> PortionKey {
        PortionKey { timestamp: self.starter_timestamp.to_f64().unwrap_or(f64::NAN), starter: self.starter_id }
    }

    pub fn center(&self, c: HexCoord) -> Point<T> {
        hex_center(self, c)
    }

    pub fn locate(&self, p: Point<T>) -> HexCoord {
        locate_hex(self, p)
    }

    /// Vertices of the hexagonal cell around `c`, counterclockwise.
    pub fn hexagon(&self, c: HexCoord) -> [Point<T>; 6] {
        let center = self.center(c);
        let step = T::FRAC_PI_3();
        let first = self.orientation + T::FRAC_PI_6();
        std::array::from_fn(|k| center + Point::polar(self.side, first + step * T::lit(k as f64)))
    }

    /// True when the cell around `c` overlaps the area of interest.
    pub fn hex_meets_aoi(&self, c: HexCoord, aoi: &Aoi<T>) -> bool {
        aoi.intersects(&self.hexagon(c))
    }
}

impl<T: Scalar> PartialEq for GridSpec<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for GridSpec<T> {}

impl<T: Scalar> PartialOrd for GridSpec<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for GridSpec<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Serializable identity of a tiling portion, totally ordered oldest first.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PortionKey {
    pub timestamp: f64,
    pub starter: u32,
}

impl PartialEq for PortionKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PortionKey {}

impl PartialOrd for PortionKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PortionKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.timestamp.total_cmp(&other.timestamp).then(self.starter.cmp(&other.starter))
    }
}

/// Position of the center of hexagon `c`.
pub fn hex_center<T: Scalar>(grid: &GridSpec<T>, c: HexCoord) -> Point<T> {
    let s = grid.spacing();
    let a = T::lit(c.a as f64);
    let b = T::lit(c.b as f64);
    let half = T::lit(0.5);
    let local = Point::new(s * (a + b * half), s * b * T::sqrt3() * half);
    grid.origin + local.rotate(grid.orientation)
}

/// Coordinate of the hexagonal cell containing `p`.
///
/// On a cell boundary the lexicographically smallest candidate wins.
pub fn locate_hex<T: Scalar>(grid: &GridSpec<T>, p: Point<T>) -> HexCoord {
    let s = grid.spacing();
    let local = (p - grid.origin).rotate(-grid.orientation);
    let half = T::lit(0.5);
    let fb = local.y / (s * T::sqrt3() * half);
    let fa = local.x / s - fb * half;
    let (a0, b0) = (fa.floor(), fb.floor());
    let a0 = a0.to_i64().unwrap_or(0);
    let b0 = b0.to_i64().unwrap_or(0);

    let mut scored: [(T, HexCoord); 4] = [(T::zero(), HexCoord::ORIGIN); 4];
    for (k, (da, db)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
        let c = HexCoord::new((a0 + da) as i32, (b0 + db) as i32);
        scored[k] = (hex_center(grid, c).distance_sq(p), c);
    }
    let best = scored.iter().map(|x| x.0).fold(T::infinity(), T::min);
    let tie = T::boundary_slack() * s * s;
    scored
        .iter()
        .filter(|(d, _)| *d <= best + tie)
        .map(|&(_, c)| c)
        .min()
        .expect("four candidates")
}

fn floor_slack<T: Scalar>(v: T) -> i64 {
    (v + T::boundary_slack()).floor().to_i64().unwrap_or(0)
}

/// Number of lattice points in a closed disk of radius `radius` centered on a
/// lattice point, for a tiling with hexagon side `side`.
///
/// Evaluated row by row: rows through the center carry points every `3 side`,
/// and the interleaved rows are offset by half a step in both directions.
pub fn lattice_count<T: Scalar>(radius: T, side: T) -> u64 {
    let r2 = radius * radius;
    let row = T::sqrt3() * side;
    let step = T::lit(3.0) * side;
    let half = T::lit(0.5);
    let width = |y: T| (r2 - y * y).max(T::zero()).sqrt() / step;

    let m = floor_slack(radius / row);
    let on_axis: i64 = (-m..=m).map(|i| 1 + 2 * floor_slack(width(row * T::lit(i as f64)))).sum();

    let top = floor_slack(radius / row - half);
    let offset: i64 = (0..=top)
        .map(|i| 1 + floor_slack(width(row * (T::lit(i as f64) + half)) - half).max(-1))
        .sum();
    (on_axis + 4 * offset) as u64
}

/// Direct enumeration of lattice points with `x² + y² <= radius²`.
///
/// Uses the exact axial norm `|a e1 + b e2|² = 3 side² (a² + ab + b²)` so it
/// shares no arithmetic with [`lattice_count`].
pub fn lattice_count_oracle<T: Scalar>(radius: T, side: T) -> u64 {
    let limit = (radius * radius) / (T::lit(3.0) * side * side);
    let limit = limit.to_f64().unwrap_or(0.0) * (1.0 + 1e-7) + 1e-9;
    let span = (2.0 * limit.sqrt()).ceil() as i64 + 1;
    let mut count = 0;
    for a in -span..=span {
        for b in -span..=span {
            if ((a * a + a * b + b * b) as f64) <= limit {
                count += 1;
            }
        }
    }
    count
}

/// Minimum number of sensors covering any lattice point of a fully snapped
/// grid.
pub fn grid_coverage_level<T: Scalar>(side: T, sensing_radius: T) -> u64 {
    lattice_count(sensing_radius, side)
}

/// Lower bound on the number of sensors covering any point of the plane for a
/// fully snapped grid.
pub fn continuous_coverage_bound<T: Scalar>(side: T, sensing_radius: T) -> u64 {
    let inner = lattice_count(sensing_radius, side);
    let outer = lattice_count(T::sqrt3() * sensing_radius, side);
    (inner - 1) / 3 + (outer - inner) / 6
}

/// Smallest transmission radius that keeps a full tiling with side equal to
/// the sensing radius connected.
pub fn connectivity_threshold<T: Scalar>(sensing_radius: T) -> T {
    T::sqrt3() * sensing_radius
}

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("sensing radius must be positive, got {0}")]
    NonPositiveSensing(f64),
    #[error("transmission radius {tx} is below the connectivity threshold {threshold}")]
    BelowConnectivity { tx: f64, threshold: f64 },
}

/// Sensing and transmission radii of every sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioParams<T> {
    pub sensing: T,
    pub transmission: T,
}

impl<T: Scalar> RadioParams<T> {
    pub fn new(sensing: T, transmission: T) -> Result<Self, RadioError> {
        if !(sensing > T::zero()) {
            return Err(RadioError::NonPositiveSensing(sensing.to_f64().unwrap_or(f64::NAN)));
        }
        let threshold = connectivity_threshold(sensing);
        if transmission < threshold * (T::one() - T::boundary_slack()) {
            return Err(RadioError::BelowConnectivity {
                tx: transmission.to_f64().unwrap_or(f64::NAN),
                threshold: threshold.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(RadioParams { sensing, transmission })
    }
}
