use alloc::vec::Vec;

use super::Mesh;
use crate::error::{Error, Result};
use crate::geometry::{orient2d, Point2, PREDICATE_EPS};

/// Result of [`laplacian_smooth`].
#[derive(Debug, Clone)]
pub struct SmoothOutcome {
    pub mesh: Mesh,
    pub sweeps: usize,
    pub moves: usize,
    /// All angles reached `theta_min`.
    pub target_met: bool,
    /// Global minimum angle before the first sweep and after each sweep.
    pub min_angle_trace: Vec<f64>,
}

/// Laplacian smoothing of a Delaunay mesh.
///
/// Sweeps over the non-hull vertices, moving each to the centroid of its
/// neighbours. A move that keeps the connectivity valid and Delaunay is
/// applied in place; otherwise the vertex is removed and re-inserted at the
/// centroid. Moves that would lower the smallest angle are rolled back, so
/// the minimum angle never decreases. Stops once every angle is at least
/// `theta_min`, after `max_sweeps` sweeps, or when a sweep moves nothing.
pub fn laplacian_smooth(mesh: &Mesh, theta_min: f64, max_sweeps: usize) -> Result<SmoothOutcome> {
    if !(theta_min > 0.0 && theta_min <= core::f64::consts::PI / 6.0 + 1e-15) {
        return Err(Error::InvalidParameter("theta_min must lie in (0, pi/6]"));
    }
    if mesh.has_auxiliary() {
        return Err(Error::InvalidParameter("smoothing expects a mesh without auxiliary vertices"));
    }
    let mut tri = mesh.to_triangulation();
    let n = tri.pts.len();
    let hull: Vec<bool> = (0..n).map(|v| tri.is_boundary_vertex(v)).collect();
    let mut trace = alloc::vec![tri.global_min_angle()];
    let mut sweeps = 0;
    let mut moves = 0;

    while tri.global_min_angle() < theta_min && sweeps < max_sweeps {
        sweeps += 1;
        let mut moved = 0;
        for v in 0..n {
            if hull[v] {
                continue;
            }
            let neigh = tri.neighbours(v);
            if neigh.is_empty() {
                continue;
            }
            let inv = 1.0 / neigh.len() as f64;
            let target = neigh.iter().fold(Point2::default(), |acc, &w| acc + tri.pts[w] * inv);
            let old = tri.pts[v];
            if target.dist(old) <= 1e-14 {
                continue;
            }

            let local_before = local_min_angle(&tri, v);
            tri.pts[v] = target;
            if move_is_valid(&tri, v) && local_min_angle(&tri, v) >= local_before {
                moved += 1;
                continue;
            }
            tri.pts[v] = old;

            let snapshot = tri.clone();
            let global_before = tri.global_min_angle();
            let reinserted = tri.remove_vertex(v) && {
                tri.pts[v] = target;
                tri.insert_vertex(v)
            };
            if reinserted && tri.global_min_angle() >= global_before {
                moved += 1;
            } else {
                tri = snapshot;
            }
        }
        moves += moved;
        trace.push(tri.global_min_angle());
        if moved == 0 {
            break;
        }
    }

    let target_met = tri.global_min_angle() >= theta_min;
    let out = Mesh::from_triangles(tri.pts.clone(), tri.triangles())?;
    Ok(SmoothOutcome { mesh: out, sweeps, moves, target_met, min_angle_trace: trace })
}

fn local_min_angle(tri: &super::triangulation::Triangulation, v: usize) -> f64 {
    tri.incident(v).iter().map(|&t| tri.tri_min_angle(tri.get(t).unwrap())).fold(f64::INFINITY, f64::min)
}

fn move_is_valid(tri: &super::triangulation::Triangulation, v: usize) -> bool {
    tri.incident(v).iter().all(|&t| {
        let [a, b, c] = tri.get(t).unwrap();
        orient2d(tri.pts[a], tri.pts[b], tri.pts[c]) > PREDICATE_EPS
            && tri.is_locally_delaunay(a, b)
            && tri.is_locally_delaunay(b, c)
            && tri.is_locally_delaunay(c, a)
    })
}
