use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::triangulation::Triangulation;
use super::Mesh;
use crate::error::{Error, Result};
use crate::geometry::{orient2d, Point2, PREDICATE_EPS};

/// Delaunay triangulation of a point set.
///
/// Points are swept in lexicographic order, each new point is joined to the
/// hull edges it sees, and the result is made Delaunay by Lawson flips.
/// Vertex numbering follows the input order.
pub fn delaunay_triangulate(points: &[Point2]) -> Result<Mesh> {
    let n = points.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter("non-finite point coordinate"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i], points[j]);
        a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap())
    });
    for w in order.windows(2) {
        if points[w[0]].dist(points[w[1]]) <= 1e-12 {
            let (a, b) = (w[0].min(w[1]), w[0].max(w[1]));
            return Err(Error::DuplicatePoints(a, b));
        }
    }

    let p = |i: usize| points[order[i]];
    let first_off = (2..n).find(|&k| orient2d(p(0), p(1), p(k)).abs() > PREDICATE_EPS);
    let Some(k) = first_off else {
        return Err(Error::CollinearInput);
    };

    let mut tri = Triangulation::new(points.to_vec());
    let apex = order[k];
    let left = orient2d(p(0), p(1), p(k)) > 0.0;
    // Seed fan over the leading collinear run.
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for i in 0..k - 1 {
        let (a, b) = (order[i], order[i + 1]);
        if left {
            tri.add([a, b, apex]);
        } else {
            tri.add([b, a, apex]);
        }
    }
    if left {
        hull.extend(order[..k].iter().copied());
        hull.push(apex);
    } else {
        hull.push(order[0]);
        hull.push(apex);
        hull.extend(order[1..k].iter().rev().copied());
    }

    for &v in &order[k + 1..] {
        let q = points[v];
        let h = hull.len();
        let visible: Vec<bool> =
            (0..h).map(|i| orient2d(points[hull[i]], points[hull[(i + 1) % h]], q) < -PREDICATE_EPS).collect();
        if !visible.iter().any(|&x| x) {
            return Err(Error::InvalidMesh("sweep point not outside current hull"));
        }
        // The visible edges form one contiguous run; find where it starts.
        let start = (0..h).find(|&i| visible[i] && !visible[(i + h - 1) % h]).unwrap_or(0);
        let mut count = 0;
        while count < h && visible[(start + count) % h] {
            let (a, b) = (hull[(start + count) % h], hull[(start + count + 1) % h]);
            tri.add([b, a, v]);
            count += 1;
        }
        // Hull vertices strictly inside the visible run are no longer on it.
        let mut new_hull = Vec::with_capacity(h + 1);
        let keep_from = (start + count) % h;
        let mut i = keep_from;
        loop {
            new_hull.push(hull[i]);
            if i == start {
                break;
            }
            i = (i + 1) % h;
        }
        new_hull.push(v);
        hull = new_hull;
    }

    tri.legalize_all();
    Mesh::from_triangles(points.to_vec(), tri.triangles())
}
