//! Planar points and the simple polygons used as areas of interest.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Point { x, y }
    }

    pub fn origin() -> Self {
        Point::new(T::zero(), T::zero())
    }

    pub fn polar(radius: T, angle: T) -> Self {
        Point::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }

    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> T {
        (self - other).norm()
    }

    pub fn distance_sq(self, other: Self) -> T {
        (self - other).norm_sq()
    }

    pub fn rotate(self, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        Point::new(self.x * c - self.y * s, self.x * s + self.y * c)
    }

    pub fn lerp(self, other: Self, t: T) -> Self {
        self + (other - self) * t
    }

    pub fn cast<U: Scalar>(self) -> Point<U> {
        Point::new(
            U::from_f64(self.x.to_f64().unwrap_or(0.0)).unwrap_or_else(U::zero),
            U::from_f64(self.y.to_f64().unwrap_or(0.0)).unwrap_or_else(U::zero),
        )
    }
}

impl<T: Scalar> Add for Point<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Scalar> Sub for Point<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Scalar> Mul<T> for Point<T> {
    type Output = Self;
    fn mul(self, rhs: T) -> Self {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// Distance from `p` to the closed segment `a`-`b`.
pub fn segment_distance<T: Scalar>(p: Point<T>, a: Point<T>, b: Point<T>) -> T {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == T::zero() {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len_sq).max(T::zero()).min(T::one());
    p.distance(a + ab * t)
}

fn orientation<T: Scalar>(a: Point<T>, b: Point<T>, c: Point<T>) -> T {
    (b - a).cross(c - a)
}

fn on_segment<T: Scalar>(a: Point<T>, b: Point<T>, p: Point<T>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed segment intersection test (touching counts).
pub fn segments_intersect<T: Scalar>(a: Point<T>, b: Point<T>, c: Point<T>, d: Point<T>) -> bool {
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    let z = T::zero();
    if ((o1 > z && o2 < z) || (o1 < z && o2 > z)) && ((o3 > z && o4 < z) || (o3 < z && o4 > z)) {
        return true;
    }
    (o1 == z && on_segment(a, b, c))
        || (o2 == z && on_segment(a, b, d))
        || (o3 == z && on_segment(c, d, a))
        || (o4 == z && on_segment(c, d, b))
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon edges {0} and {1} intersect")]
    SelfIntersecting(usize, usize),
    #[error("polygon has zero area")]
    Degenerate,
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds<T> {
    pub min: Point<T>,
    pub max: Point<T>,
}

impl<T: Scalar> Bounds<T> {
    pub fn width(&self) -> T {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> T {
        self.max.y - self.min.y
    }

    pub fn diagonal(&self) -> T {
        self.width().hypot(self.height())
    }

    pub fn center(&self) -> Point<T> {
        self.min.lerp(self.max, T::lit(0.5))
    }

    pub fn contains_with_margin(&self, p: Point<T>, margin: T) -> bool {
        p.x >= self.min.x - margin
            && p.x <= self.max.x + margin
            && p.y >= self.min.y - margin
            && p.y <= self.max.y + margin
    }
}

/// Area of interest: a simple polygon stored counterclockwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point<T>>", into = "Vec<Point<T>>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct Aoi<T: Scalar> {
    vertices: Vec<Point<T>>,
}

impl<T: Scalar> TryFrom<Vec<Point<T>>> for Aoi<T> {
    type Error = GeometryError;
    fn try_from(v: Vec<Point<T>>) -> Result<Self, Self::Error> {
        Aoi::new(v)
    }
}

impl<T: Scalar> From<Aoi<T>> for Vec<Point<T>> {
    fn from(aoi: Aoi<T>) -> Self {
        aoi.vertices
    }
}

impl<T: Scalar> Aoi<T> {
    pub fn new(mut vertices: Vec<Point<T>>) -> Result<Self, GeometryError> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        let n = vertices.len();
        if n < 3 {
            return Err(GeometryError::TooFewVertices(n));
        }
        for i in 0..n {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(GeometryError::SelfIntersecting(i, j));
                }
            }
        }
        let signed = signed_area(&vertices);
        if signed == T::zero() {
            return Err(GeometryError::Degenerate);
        }
        if signed < T::zero() {
            vertices.reverse();
        }
        Ok(Aoi { vertices })
    }

    pub fn rectangle(width: T, height: T) -> Result<Self, GeometryError> {
        let z = T::zero();
        Aoi::new(vec![
            Point::new(z, z),
            Point::new(width, z),
            Point::new(width, height),
            Point::new(z, height),
        ])
    }

    pub fn vertices(&self) -> &[Point<T>] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point<T>, Point<T>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> T {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> T {
        self.edges().fold(T::zero(), |acc, (a, b)| acc + a.distance(b))
    }

    pub fn bounds(&self) -> Bounds<T> {
        let mut min = self.vertices[0];
        let mut max = self.vertices[0];
        for v in &self.vertices[1..] {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        Bounds { min, max }
    }

    /// Width and height when the polygon is a (possibly rotated) rectangle.
    pub fn as_rectangle(&self) -> Option<(T, T)> {
        if self.vertices.len() != 4 {
            return None;
        }
        let v = &self.vertices;
        let tol = T::boundary_slack();
        for i in 0..4 {
            let a = v[(i + 3) % 4] - v[i];
            let b = v[(i + 1) % 4] - v[i];
            if a.dot(b).abs() > tol * a.norm() * b.norm() {
                return None;
            }
        }
        Some((v[0].distance(v[1]), v[1].distance(v[2])))
    }

    pub fn distance_to_boundary(&self, p: Point<T>) -> T {
        self.edges()
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(T::infinity(), T::min)
    }

    fn crossing_inside(&self, p: Point<T>) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Closed containment: boundary points are inside.
    pub fn contains(&self, p: Point<T>) -> bool {
        self.on_boundary(p) || self.crossing_inside(p)
    }

    /// Open containment: boundary points are outside.
    pub fn contains_strict(&self, p: Point<T>) -> bool {
        !self.on_boundary(p) && self.crossing_inside(p)
    }

    pub fn on_boundary(&self, p: Point<T>) -> bool {
        self.distance_to_boundary(p) <= T::boundary_slack()
    }

    /// True when the closed polygon `other` shares at least one point with
    /// this area.
    pub fn intersects(&self, other: &[Point<T>]) -> bool {
        if other.iter().any(|&p| self.contains(p)) {
            return true;
        }
        if self.vertices.iter().any(|&v| point_in_ring(other, v)) {
            return true;
        }
        let m = other.len();
        self.edges().any(|(a, b)| {
            (0..m).any(|j| segments_intersect(a, b, other[j], other[(j + 1) % m]))
        })
    }

    pub fn reflex_vertex_count(&self) -> usize {
        let n = self.vertices.len();
        (0..n)
            .filter(|&i| {
                let prev = self.vertices[(i + n - 1) % n];
                let cur = self.vertices[i];
                let next = self.vertices[(i + 1) % n];
                orientation(prev, cur, next) < T::zero()
            })
            .count()
    }
}

fn signed_area<T: Scalar>(v: &[Point<T>]) -> T {
    let n = v.len();
    let twice = (0..n).fold(T::zero(), |acc, i| acc + v[i].cross(v[(i + 1) % n]));
    twice * T::lit(0.5)
}

fn point_in_ring<T: Scalar>(ring: &[Point<T>], p: Point<T>) -> bool {
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if segment_distance(p, a, b) <= T::boundary_slack() {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq(side: f64) -> Aoi<f64> {
        Aoi::rectangle(side, side).unwrap()
    }

    #[test]
    fn clockwise_input_is_normalized() {
        let cw = Aoi::new(vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        ])
        .unwrap();
        assert!(cw.area() > 0.0);
        assert_eq!(cw.area(), 1.0);
    }

    #[test]
    fn bow_tie_rejected() {
        let err = Aoi::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap_err();
        assert!(matches!(err, GeometryError::SelfIntersecting(..)));
        assert_eq!(
            Aoi::<f64>::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).unwrap_err(),
            GeometryError::TooFewVertices(2)
        );
    }

    #[test]
    fn containment_boundary_rules() {
        let a = sq(10.0);
        assert!(a.contains(Point::new(0.0, 5.0)));
        assert!(!a.contains_strict(Point::new(0.0, 5.0)));
        assert!(a.contains_strict(Point::new(1.0, 1.0)));
        assert!(!a.contains(Point::new(-0.5, 5.0)));
    }

    #[test]
    fn rectangle_detection() {
        assert_eq!(sq(80.0).as_rectangle(), Some((80.0, 80.0)));
        let tri = Aoi::new(vec![
            Point::new(0.0, 0.0),
            Point::new(4.0, 0.0),
            Point::new(0.0, 3.0),
        ])
        .unwrap();
        assert_eq!(tri.as_rectangle(), None);
        assert_eq!(tri.perimeter(), 12.0);
    }

    #[test]
    fn polygon_intersection() {
        let a = sq(10.0);
        let far = [Point::new(20.0, 20.0), Point::new(21.0, 20.0), Point::new(21.0, 21.0)];
        assert!(!a.intersects(&far));
        let crossing = [Point::new(-1.0, 4.0), Point::new(11.0, 4.0), Point::new(11.0, 6.0), Point::new(-1.0, 6.0)];
        assert!(a.intersects(&crossing));
        let around = [Point::new(-1.0, -1.0), Point::new(11.0, -1.0), Point::new(11.0, 11.0), Point::new(-1.0, 11.0)];
        assert!(a.intersects(&around));
    }
}
