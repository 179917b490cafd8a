use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::triangulation::Triangulation;
use super::{Mesh, VertexClass};
use crate::error::{Error, Result};
use crate::geometry::{convex_hull, orient2d, point_segment_distance, Point2, PREDICATE_EPS};

/// Surround a mesh with rings of auxiliary vertices.
///
/// Rings follow the outward offsets of the convex hull at multiples of
/// `ring_spacing`, and are added until every non-auxiliary vertex lies at
/// least `buffer_width` from the outer ring. Existing triangles are kept; the
/// annuli between rings are triangulated and then made Delaunay by flipping
/// edges that touch an auxiliary vertex.
pub fn extend_boundary(mesh: &Mesh, buffer_width: f64, ring_spacing: f64) -> Result<Mesh> {
    extend_boundary_graded(mesh, buffer_width, ring_spacing, 1.0)
}

/// Like [`extend_boundary`], but the k-th ring gap is
/// `ring_spacing * growth^(k-1)`, which keeps a wide buffer cheap.
pub fn extend_boundary_graded(mesh: &Mesh, buffer_width: f64, ring_spacing: f64, growth: f64) -> Result<Mesh> {
    if !(buffer_width > 0.0) || !buffer_width.is_finite() {
        return Err(Error::InvalidParameter("buffer_width must be positive"));
    }
    if !(ring_spacing > 0.0) || !ring_spacing.is_finite() {
        return Err(Error::InvalidParameter("ring_spacing must be positive"));
    }
    if !(growth >= 1.0) || !growth.is_finite() {
        return Err(Error::InvalidParameter("growth must be at least 1"));
    }

    let mut tri = mesh.to_triangulation();
    let core: Vec<Point2> = mesh.latent_vertices();
    let outer_loop = tri.boundary_loop();
    let outer_pts: Vec<Point2> = outer_loop.iter().map(|&v| tri.pts[v]).collect();
    if margin(&core, &outer_pts) >= buffer_width {
        return Ok(mesh.clone());
    }

    let hull: Vec<Point2> = convex_hull(&outer_pts).into_iter().map(|i| outer_pts[i]).collect();
    let n0 = mesh.vertex_count();
    let mut inner = outer_loop;
    let mut offset = 0.0;
    let mut gap = ring_spacing;
    loop {
        offset += gap;
        let ring_pts = offset_curve(&hull, offset, gap);
        let ring: Vec<usize> = ring_pts.iter().map(|&p| tri.add_point(p)).collect();
        zip_annulus(&mut tri, &inner, &ring);
        inner = ring;
        if margin(&core, &ring_pts) >= buffer_width {
            break;
        }
        gap *= growth;
    }

    let stack: Vec<(usize, usize)> = tri
        .triangles()
        .into_iter()
        .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
        .filter(|&(a, b)| a >= n0 || b >= n0)
        .collect();
    tri.legalize(stack, |a, b| a >= n0 || b >= n0);

    let mut classes = mesh.classes().to_vec();
    classes.resize(tri.pts.len(), VertexClass::Auxiliary);
    Mesh::with_classes(tri.pts.clone(), tri.triangles(), classes)
}

/// Smallest distance from `points` to the closed polygon `poly`.
fn margin(points: &[Point2], poly: &[Point2]) -> f64 {
    let m = poly.len();
    points
        .iter()
        .map(|&p| (0..m).map(|i| point_segment_distance(p, poly[i], poly[(i + 1) % m])).fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min)
}

/// Points spaced about `spacing` apart along the boundary of the hull
/// grown by `d`: shifted hull edges joined by circular arcs.
fn offset_curve(hull: &[Point2], d: f64, spacing: f64) -> Vec<Point2> {
    let m = hull.len();
    let normal = |i: usize| {
        let e = hull[(i + 1) % m] - hull[i];
        Point2::new(e.y, -e.x) * (1.0 / e.norm())
    };
    // Each hull vertex contributes an arc followed by its outgoing edge.
    let mut arcs = Vec::with_capacity(m);
    let mut perimeter = 0.0;
    for i in 0..m {
        let n_in = normal((i + m - 1) % m);
        let n_out = normal(i);
        let a0 = n_in.y.atan2(n_in.x);
        let mut sweep = n_out.y.atan2(n_out.x) - a0;
        while sweep < 0.0 {
            sweep += 2.0 * core::f64::consts::PI;
        }
        let edge = hull[i].dist(hull[(i + 1) % m]);
        arcs.push((a0, sweep, edge));
        perimeter += d * sweep + edge;
    }
    let count = ((perimeter / spacing).ceil() as usize).max(3);
    let step = perimeter / count as f64;
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    let mut acc = 0.0;
    for k in 0..count {
        let total = k as f64 * step;
        while i + 1 < m && total > acc + d * arcs[i].1 + arcs[i].2 {
            acc += d * arcs[i].1 + arcs[i].2;
            i += 1;
        }
        let (a0, sweep, edge) = arcs[i];
        let u = total - acc;
        if u <= d * sweep {
            let a = a0 + u / d;
            out.push(hull[i] + Point2::new(a.cos(), a.sin()) * d);
        } else {
            let t = ((u - d * sweep) / edge).min(1.0);
            out.push(hull[i] + (hull[(i + 1) % m] - hull[i]) * t + normal(i) * d);
        }
    }
    out
}

/// Triangulate the region between two nested counter-clockwise loops.
/// At each step the zipper advances along whichever loop gives the shorter
/// new diagonal, among the moves that keep triangles positively oriented.
fn zip_annulus(tri: &mut Triangulation, inner: &[usize], outer: &[usize]) {
    let (ni, no) = (inner.len(), outer.len());
    let p = |v: usize| tri.pts[v];
    let a0 = p(inner[0]);
    let j0 = (0..no)
        .min_by(|&x, &y| p(outer[x]).dist(a0).partial_cmp(&p(outer[y]).dist(a0)).unwrap())
        .unwrap();
    let a = |i: usize| inner[i % ni];
    let b = |j: usize| outer[(j0 + j) % no];

    let mut new = Vec::with_capacity(ni + no);
    let (mut i, mut j) = (0, 0);
    while i < ni || j < no {
        let inner_tri = [a(i), b(j), a(i + 1)];
        let outer_tri = [a(i), b(j), b(j + 1)];
        let area = |t: [usize; 3]| orient2d(p(t[0]), p(t[1]), p(t[2]));
        let can_inner = i < ni && area(inner_tri) > PREDICATE_EPS;
        let can_outer = j < no && area(outer_tri) > PREDICATE_EPS;
        let take_inner = match (can_inner, can_outer) {
            (true, true) => p(a(i + 1)).dist(p(b(j))) <= p(a(i)).dist(p(b(j + 1))),
            (true, false) => true,
            (false, true) => false,
            // Round-off only; advance the loop that still has vertices.
            (false, false) => j >= no || (i < ni && area(inner_tri) >= area(outer_tri)),
        };
        if take_inner {
            new.push(inner_tri);
            i += 1;
        } else {
            new.push(outer_tri);
            j += 1;
        }
    }
    for t in new {
        tri.add(t);
    }
}
