//! Planar points and the predicates used by the triangulation code.
//!
//! Predicates use a fixed absolute tolerance instead of exact arithmetic,
//! which is adequate for point sets of moderate size and unit-scale extent.

use core::ops::{Add, Mul, Sub};

#[allow(unused_imports)]
use num_traits::Float;

/// Tolerance applied to the orientation and in-circle determinants.
pub const PREDICATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        Float::sqrt(self.dot(self))
    }

    pub fn dist(self, other: Self) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Self) -> Self {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Self) -> Self {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Self {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Twice the signed area of `abc`; positive when counter-clockwise.
pub fn orient2d(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

pub fn triangle_area(a: Point2, b: Point2, c: Point2) -> f64 {
    0.5 * orient2d(a, b, c)
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `abc`.
pub fn incircle(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    let (adx, ady) = (a.x - d.x, a.y - d.y);
    let (bdx, bdy) = (b.x - d.x, b.y - d.y);
    let (cdx, cdy) = (c.x - d.x, c.y - d.y);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Interior angles of a triangle, in radians, at `a`, `b` and `c`.
pub fn triangle_angles(a: Point2, b: Point2, c: Point2) -> [f64; 3] {
    let angle = |p: Point2, q: Point2, r: Point2| {
        let u = q - p;
        let v = r - p;
        Float::atan2(Float::abs(u.cross(v)), u.dot(v))
    };
    [angle(a, b, c), angle(b, c, a), angle(c, a, b)]
}

pub fn min_angle(a: Point2, b: Point2, c: Point2) -> f64 {
    let [x, y, z] = triangle_angles(a, b, c);
    x.min(y).min(z)
}

/// Barycentric coordinates of `p` with respect to `abc`.
pub fn barycentric(a: Point2, b: Point2, c: Point2, p: Point2) -> [f64; 3] {
    let det = orient2d(a, b, c);
    let l0 = orient2d(p, b, c) / det;
    let l1 = orient2d(a, p, c) / det;
    [l0, l1, 1.0 - l0 - l1]
}

pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Nearest point to `p` on segment `ab`.
pub fn project_on_segment(p: Point2, a: Point2, b: Point2) -> Point2 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, without
/// collinear points. Returns indices into `points`.
pub fn convex_hull(points: &[Point2]) -> alloc::vec::Vec<usize> {
    use alloc::vec::Vec;
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&i, &j| {
        points[i]
            .x
            .partial_cmp(&points[j].x)
            .unwrap()
            .then(points[i].y.partial_cmp(&points[j].y).unwrap())
    });
    if idx.len() < 3 {
        return idx;
    }
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    let push_chain = |hull: &mut Vec<usize>, order: &mut dyn Iterator<Item = usize>| {
        let start = hull.len();
        for i in order {
            while hull.len() >= start + 2 {
                let a = points[hull[hull.len() - 2]];
                let b = points[hull[hull.len() - 1]];
                if orient2d(a, b, points[i]) <= PREDICATE_EPS {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(i);
        }
        hull.pop();
    };
    push_chain(&mut hull, &mut idx.iter().copied());
    push_chain(&mut hull, &mut idx.iter().rev().copied());
    hull
}

/// Area of a simple polygon given in order (positive for counter-clockwise).
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>() * 0.5
}
