use alloc::vec;
use alloc::vec::Vec;

use super::triangulation::Triangulation;
use super::Mesh;
use crate::error::{Error, Result};

/// Greedy vertex removal down to `target` vertices.
///
/// Each step removes the vertex, other than a hull corner, whose smallest incident triangle
/// has the least area (ties go to the lowest index) and re-triangulates
/// the cavity so the mesh stays Delaunay. Surviving vertices keep their
/// relative order.
pub fn decimate(mesh: &Mesh, target: usize) -> Result<Mesh> {
    if mesh.has_auxiliary() {
        return Err(Error::InvalidParameter("decimate expects a mesh without auxiliary vertices"));
    }
    let n = mesh.vertex_count();
    let mut tri = mesh.to_triangulation();
    let hull: Vec<bool> = (0..n).map(|v| tri.is_hull_corner(v)).collect();
    let hull_count = hull.iter().filter(|&&h| h).count();
    let min = hull_count.max(3);
    if target < min || target > n {
        return Err(Error::TargetTooSmall { target, min, max: n });
    }
    if target == n {
        return Ok(mesh.clone());
    }

    let mut alive = vec![true; n];
    let mut count = n;
    while count > target {
        let Some(v) = pick_victim(&tri, &alive, &hull) else {
            break;
        };
        if !tri.remove_vertex(v) {
            return Err(Error::InvalidMesh("failed to re-triangulate removal cavity"));
        }
        alive[v] = false;
        count -= 1;
    }
    compact(&tri, &alive)
}

fn pick_victim(tri: &Triangulation, alive: &[bool], hull: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for v in 0..alive.len() {
        if !alive[v] || hull[v] {
            continue;
        }
        let area = tri
            .incident(v)
            .iter()
            .map(|&t| tri.tri_area(tri.get(t).unwrap()))
            .fold(f64::INFINITY, f64::min);
        if best.is_none_or(|(_, a)| area < a) {
            best = Some((v, area));
        }
    }
    best.map(|b| b.0)
}

pub(crate) fn compact(tri: &Triangulation, alive: &[bool]) -> Result<Mesh> {
    let mut remap = vec![usize::MAX; alive.len()];
    let mut vertices = Vec::new();
    for (v, &keep) in alive.iter().enumerate() {
        if keep {
            remap[v] = vertices.len();
            vertices.push(tri.pts[v]);
        }
    }
    let triangles = tri.triangles().into_iter().map(|t| t.map(|v| remap[v])).collect();
    Mesh::from_triangles(vertices, triangles)
}
