//! Upper bound on the number of hexagons needed to tile an area, and its
//! inverse used to shrink the grid when more sensors are available.

use geo::algorithm::buffer::{BufferStyle, LineJoin};
use geo::{Buffer, Coord, LineString, Polygon};
use geo::Area;
use thiserror::Error;

use crate::geometry::Aoi;
use crate::num::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum TightError {
    #[error("{available} sensors cannot tile the area at side {side}: at least {required} are needed")]
    InsufficientSensors { available: u64, required: u64, side: f64 },
    #[error("hexagon side must be positive, got {0}")]
    NonPositiveSide(f64),
}

/// Area of `aoi` grown outward by `border` meters.
///
/// Rectangles use mitered corners, which keeps the result exact. Other
/// polygons use round joins through `geo`.
pub fn expanded_area<T: Scalar>(aoi: &Aoi<T>, border: T) -> T {
    if let Some((w, h)) = aoi.as_rectangle() {
        let two = T::lit(2.0);
        return (w + two * border) * (h + two * border);
    }
    let ring: Vec<Coord<f64>> = aoi
        .vertices()
        .iter()
        .map(|p| Coord { x: p.x.to_f64().unwrap_or(0.0), y: p.y.to_f64().unwrap_or(0.0) })
        .collect();
    let poly = Polygon::new(LineString::new(ring), vec![]);
    let d = border.to_f64().unwrap_or(0.0);
    let style = BufferStyle::new(d).line_join(LineJoin::Round(0.01));
    T::lit(poly.buffer_with_style(style).unsigned_area())
}

fn hexagon_area<T: Scalar>(side: T) -> T {
    T::lit(1.5) * T::sqrt3() * side * side
}

fn relaxed_bound<T: Scalar>(aoi: &Aoi<T>, side: T) -> T {
    expanded_area(aoi, T::lit(2.0) * side) / hexagon_area(side)
}

fn ceil_with_slack<T: Scalar>(v: T) -> u64 {
    let v = v.to_f64().unwrap_or(f64::INFINITY);
    (v - v.abs() * 1e-12).ceil().max(0.0) as u64
}

/// Upper bound on how many hexagons of side `side` any placement of the grid
/// needs to cover `aoi`.
pub fn n_tight_upper<T: Scalar>(aoi: &Aoi<T>, side: T) -> u64 {
    ceil_with_slack(relaxed_bound(aoi, side))
}

const SIDE_TOLERANCE: f64 = 1e-6;

/// Smallest hexagon side, capped at `sensing_radius`, whose tight bound does
/// not exceed `available`.
pub fn shrinked_side<T: Scalar>(aoi: &Aoi<T>, available: u64, sensing_radius: T) -> Result<T, TightError> {
    if !(sensing_radius > T::zero()) {
        return Err(TightError::NonPositiveSide(sensing_radius.to_f64().unwrap_or(f64::NAN)));
    }
    let required = n_tight_upper(aoi, sensing_radius);
    if available < required {
        return Err(TightError::InsufficientSensors {
            available,
            required,
            side: sensing_radius.to_f64().unwrap_or(f64::NAN),
        });
    }
    let target = T::lit(available as f64);
    let fits = |l: T| relaxed_bound(aoi, l) <= target;

    // `hi` always satisfies the bound. Halve `lo` until it does not.
    let mut hi = sensing_radius;
    let mut lo = sensing_radius * T::lit(0.5);
    while fits(lo) {
        hi = lo;
        lo = lo * T::lit(0.5);
    }
    let tol = T::lit(SIDE_TOLERANCE);
    while hi - lo > tol {
        let mid = (lo + hi) * T::lit(0.5);
        if fits(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    while n_tight_upper(aoi, hi) > available {
        hi = hi + tol;
    }
    Ok(hi.min(sensing_radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn hex_area_oracle(l: f64) -> f64 {
        // Six equilateral triangles of side l.
        6.0 * (l * l * 3f64.sqrt() / 4.0)
    }

    /// Closed-form root of `(side + 4 l)^2 = N * hex_area(l)` for a square.
    fn square_root_oracle(side: f64, n: f64) -> f64 {
        side / ((n * hex_area_oracle(1.0)).sqrt() - 4.0)
    }

    fn square(side: f64) -> Aoi<f64> {
        Aoi::rectangle(side, side).unwrap()
    }

    #[test]
    fn frozen_tight_numbers() {
        assert_eq!(n_tight_upper(&square(80.0), 5.0), 154);
        assert_eq!(n_tight_upper(&square(10.0), 5.0), 14);
        assert_eq!(n_tight_upper(&square(1.0), 1.0), 10);
        assert_eq!(n_tight_upper(&Aoi::rectangle(80.0f32, 80.0).unwrap(), 5.0f32), 154);
    }

    #[test]
    fn rounded_expansion_close_to_exact_offset_area() {
        // A square given as a non-rectangle (extra collinear vertex) goes
        // through the rounded path: area = A + P d + π d².
        let aoi = Aoi::new(vec![
            Point::new(0.0, 0.0),
            Point::new(40.0, 0.0),
            Point::new(80.0, 0.0),
            Point::new(80.0, 80.0),
            Point::new(0.0, 80.0),
        ])
        .unwrap();
        let exact = 6400.0 + 320.0 * 10.0 + std::f64::consts::PI * 100.0;
        assert_relative_eq!(expanded_area(&aoi, 10.0), exact, max_relative = 1e-4);
    }

    #[test]
    fn shrinked_side_matches_closed_form() {
        let l = shrinked_side(&square(80.0), 400, 5.0).unwrap();
        assert_relative_eq!(l, square_root_oracle(80.0, 400.0), epsilon = 2e-6);
        assert_relative_eq!(l, 2.8332, epsilon = 1e-4);
        let l = shrinked_side(&square(80.0), 1200, 5.0).unwrap();
        assert_relative_eq!(l, square_root_oracle(80.0, 1200.0), epsilon = 2e-6);
        assert!(n_tight_upper(&square(80.0), l) <= 1200);
    }

    #[test]
    fn shrinked_side_at_the_tight_number() {
        // 154 sensors sit just above the relaxed bound at side 5, so the
        // smallest admissible side lies a hair below 5.
        let l = shrinked_side(&square(80.0), 154, 5.0).unwrap();
        assert_relative_eq!(l, square_root_oracle(80.0, 154.0), epsilon = 2e-6);
        assert!((5.0 - l) < 2e-3);
        assert_eq!(
            shrinked_side(&square(80.0), 153, 5.0),
            Err(TightError::InsufficientSensors { available: 153, required: 154, side: 5.0 })
        );
    }

    proptest! {
        #[test]
        fn bound_non_increasing(l in 0.2f64..10.0, dl in 0.0f64..3.0, w in 1.0f64..100.0, h in 1.0f64..100.0) {
            let aoi = Aoi::rectangle(w, h).unwrap();
            prop_assert!(n_tight_upper(&aoi, l + dl) <= n_tight_upper(&aoi, l));
        }

        #[test]
        fn shrinked_side_respects_budget(extra in 0u64..3000, w in 5.0f64..100.0) {
            let aoi = Aoi::rectangle(w, w).unwrap();
            let n = n_tight_upper(&aoi, 5.0) + extra;
            let l = shrinked_side(&aoi, n, 5.0).unwrap();
            prop_assert!(n_tight_upper(&aoi, l) <= n);
            prop_assert!(l <= 5.0);
            if l < 5.0 - 1e-5 {
                prop_assert!(n_tight_upper(&aoi, l - 1e-5) > n || relaxed_bound(&aoi, l - 1e-5) > n as f64);
            }
        }
    }
}
