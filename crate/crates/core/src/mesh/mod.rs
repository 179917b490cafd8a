//! Triangular finite-element meshes.
//!
//! A [`Mesh`] stores counter-clockwise triangles over a vertex list in which
//! every vertex is tagged as interior, boundary (on the hull of the original
//! point set) or auxiliary (added by [`extend_boundary`]). The latent field
//! lives on the non-auxiliary vertices; their positions in the vertex list
//! are kept in `interior_index`.

mod boundary;
mod decimate;
mod delaunay;
mod smooth;
pub(crate) mod triangulation;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

pub use boundary::{extend_boundary, extend_boundary_graded};
pub use decimate::decimate;
pub use delaunay::delaunay_triangulate;
pub use smooth::{laplacian_smooth, SmoothOutcome};

use crate::error::{Error, Result};
use crate::geometry::{
    barycentric, convex_hull, orient2d, polygon_area, project_on_segment, triangle_angles, Point2,
};
use triangulation::Triangulation;

/// Barycentric tolerance used when deciding whether a point is inside.
pub const INSIDE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexClass {
    Interior,
    Boundary,
    Auxiliary,
}

impl VertexClass {
    pub fn as_str(self) -> &'static str {
        match self {
            VertexClass::Interior => "interior",
            VertexClass::Boundary => "boundary",
            VertexClass::Auxiliary => "auxiliary",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "interior" => Some(VertexClass::Interior),
            "boundary" => Some(VertexClass::Boundary),
            "auxiliary" => Some(VertexClass::Auxiliary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point2>,
    triangles: Vec<[usize; 3]>,
    classes: Vec<VertexClass>,
    interior_index: Vec<usize>,
    latent_of: Vec<Option<usize>>,
}

/// Summary of mesh shape quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    /// Smallest interior angle over all triangles, radians.
    pub min_angle: f64,
    /// Longest edge (the FEM mesh parameter h).
    pub max_edge_h: f64,
    /// Number of non-auxiliary vertices R.
    pub vertex_count: usize,
    pub total_vertices: usize,
    pub triangle_count: usize,
}

/// Sparse row of piecewise-linear basis values at one location; at most
/// three nonzeros, indexed by latent (non-auxiliary) vertex number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisRow {
    cols: [usize; 3],
    weights: [f64; 3],
    len: usize,
}

impl BasisRow {
    pub fn from_entries(entries: &[(usize, f64)]) -> Self {
        let mut row = BasisRow { cols: [0; 3], weights: [0.0; 3], len: 0 };
        for &(c, w) in entries {
            row.push(c, w);
        }
        row
    }

    fn push(&mut self, col: usize, w: f64) {
        if w == 0.0 {
            return;
        }
        if let Some(k) = self.cols[..self.len].iter().position(|&c| c == col) {
            self.weights[k] += w;
            return;
        }
        assert!(self.len < 3, "basis rows have at most three entries");
        self.cols[self.len] = col;
        self.weights[self.len] = w;
        self.len += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.cols[..self.len].iter().copied().zip(self.weights[..self.len].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.len
    }

    /// Value of the row at latent column `col`.
    pub fn get(&self, col: usize) -> f64 {
        self.iter().find(|&(c, _)| c == col).map_or(0.0, |(_, w)| w)
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.iter().map(|(c, w)| w * v[c]).sum()
    }
}

impl Mesh {
    /// Build a mesh from raw parts, tagging vertices on the triangulation
    /// boundary as [`VertexClass::Boundary`].
    pub fn from_triangles(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let tri = Triangulation::from_triangles(vertices.clone(), &triangles);
        let classes = (0..vertices.len())
            .map(|v| if tri.is_boundary_vertex(v) { VertexClass::Boundary } else { VertexClass::Interior })
            .collect();
        Self::with_classes(vertices, triangles, classes)
    }

    pub fn with_classes(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>, classes: Vec<VertexClass>) -> Result<Self> {
        if classes.len() != vertices.len() {
            return Err(Error::DimensionMismatch("one class per vertex"));
        }
        let interior_index: Vec<usize> =
            (0..vertices.len()).filter(|&v| classes[v] != VertexClass::Auxiliary).collect();
        let mut latent_of = alloc::vec![None; vertices.len()];
        for (k, &v) in interior_index.iter().enumerate() {
            latent_of[v] = Some(k);
        }
        let mesh = Mesh { vertices, triangles, classes, interior_index, latent_of };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Structured triangulation of a rectangle with `nx × ny` cells, each
    /// split along its lower-left to upper-right diagonal.
    pub fn regular_grid(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || !(x1 > x0) || !(y1 > y0) {
            return Err(Error::InvalidParameter("grid needs positive extent and cell counts"));
        }
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = x0 + (x1 - x0) * i as f64 / nx as f64;
                let y = y0 + (y1 - y0) * j as f64 / ny as f64;
                vertices.push(Point2::new(x, y));
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let a = j * (nx + 1) + i;
                let (b, c, d) = (a + 1, a + nx + 1, a + nx + 2);
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        Self::from_triangles(vertices, triangles)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn classes(&self) -> &[VertexClass] {
        &self.classes
    }

    /// Positions of the non-auxiliary vertices in the vertex list.
    pub fn interior_index(&self) -> &[usize] {
        &self.interior_index
    }

    /// Latent index of vertex `v`, or `None` for auxiliary vertices.
    pub fn latent_of(&self, v: usize) -> Option<usize> {
        self.latent_of[v]
    }

    /// Number of non-auxiliary vertices, R.
    pub fn latent_dim(&self) -> usize {
        self.interior_index.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn has_auxiliary(&self) -> bool {
        self.interior_index.len() < self.vertices.len()
    }

    pub fn latent_vertices(&self) -> Vec<Point2> {
        self.interior_index.iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * orient2d(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Undirected edges, each listed once with the smaller index first.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Mean length of edges joining non-auxiliary vertices.
    pub fn mean_edge_length(&self) -> f64 {
        let lens: Vec<f64> = self
            .edges()
            .into_iter()
            .filter(|&(a, b)| self.latent_of[a].is_some() && self.latent_of[b].is_some())
            .map(|(a, b)| self.vertices[a].dist(self.vertices[b]))
            .collect();
        if lens.is_empty() {
            return 0.0;
        }
        lens.iter().sum::<f64>() / lens.len() as f64
    }

    /// Check the structural invariants: in-range distinct indices, positive
    /// orientation, manifold edges and coverage of the convex hull.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidMesh("non-finite vertex coordinate"));
        }
        if self.triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles"));
        }
        let mut directed = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh("triangle index out of range"));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh("triangle repeats a vertex"));
            }
            if self.triangle_area(t) <= 0.0 {
                return Err(Error::DegenerateTriangle(t));
            }
            for k in 0..3 {
                if directed.insert((tri[k], tri[(k + 1) % 3]), t).is_some() {
                    return Err(Error::InvalidMesh("edge shared with equal orientation"));
                }
            }
        }
        let hull: Vec<Point2> = convex_hull(&self.vertices).into_iter().map(|i| self.vertices[i]).collect();
        let hull_area = polygon_area(&hull);
        let area = self.total_area();
        if (area - hull_area).abs() > 1e-9 * hull_area.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidMesh("triangles do not tile the convex hull"));
        }
        Ok(())
    }

    pub fn quality(&self) -> QualityReport {
        mesh_quality(self)
    }

    fn core_triangle(&self, t: usize) -> bool {
        self.triangles[t].iter().all(|&v| self.latent_of[v].is_some())
    }

    fn row_from(&self, t: usize, bc: [f64; 3]) -> BasisRow {
        let clipped = bc.map(|l| l.max(0.0));
        let total: f64 = clipped.iter().sum();
        let mut row = BasisRow { cols: [0; 3], weights: [0.0; 3], len: 0 };
        for k in 0..3 {
            let col = self.latent_of[self.triangles[t][k]].expect("core triangle");
            row.push(col, clipped[k] / total);
        }
        row
    }

    /// Piecewise-linear basis values at `s`, expressed over the R latent
    /// vertices. Points outside the non-auxiliary part of the mesh are
    /// rejected.
    pub fn basis_row(&self, s: Point2) -> Result<BasisRow> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for t in 0..self.triangles.len() {
            if !self.core_triangle(t) {
                continue;
            }
            let [a, b, c] = self.triangles[t];
            let bc = barycentric(self.vertices[a], self.vertices[b], self.vertices[c], s);
            let worst = bc[0].min(bc[1]).min(bc[2]);
            if worst >= 0.0 {
                return Ok(self.row_from(t, bc));
            }
            if worst >= -INSIDE_TOL && best.is_none_or(|b| worst > b.2) {
                best = Some((t, bc, worst));
            }
        }
        match best {
            Some((t, bc, _)) => Ok(self.row_from(t, bc)),
            None => Err(Error::PointOutsideMesh { x: s.x, y: s.y }),
        }
    }

    /// Like [`Mesh::basis_row`], but a point outside the non-auxiliary
    /// region is first moved to the nearest point of that region.
    pub fn basis_row_nearest(&self, s: Point2) -> BasisRow {
        if let Ok(row) = self.basis_row(s) {
            return row;
        }
        let p = self.nearest_core_point(s);
        match self.basis_row(p) {
            Ok(row) => row,
            Err(_) => {
                // Round-off on the boundary edge: take the closest vertex.
                let (k, _) = self
                    .interior_index
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| (k, self.vertices[v].dist(s)))
                    .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                BasisRow::from_entries(&[(k, 1.0)])
            }
        }
    }

    /// Nearest point on the boundary of the non-auxiliary region.
    pub fn nearest_core_point(&self, s: Point2) -> Point2 {
        let mut directed = BTreeMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if self.core_triangle(t) {
                for k in 0..3 {
                    directed.insert((tri[k], tri[(k + 1) % 3]), ());
                }
            }
        }
        let mut best = (f64::INFINITY, s);
        for &(a, b) in directed.keys() {
            if directed.contains_key(&(b, a)) {
                continue;
            }
            let q = project_on_segment(s, self.vertices[a], self.vertices[b]);
            let d = q.dist(s);
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }

    pub(crate) fn to_triangulation(&self) -> Triangulation {
        Triangulation::from_triangles(self.vertices.clone(), &self.triangles)
    }
}

/// Minimum angle, maximum edge length and vertex counts of a mesh.
pub fn mesh_quality(mesh: &Mesh) -> QualityReport {
    let mut min_angle = f64::INFINITY;
    let mut max_edge: f64 = 0.0;
    for &[a, b, c] in &mesh.triangles {
        let (pa, pb, pc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
        for ang in triangle_angles(pa, pb, pc) {
            min_angle = min_angle.min(ang);
        }
        max_edge = max_edge.max(pa.dist(pb)).max(pb.dist(pc)).max(pc.dist(pa));
    }
    QualityReport {
        min_angle,
        max_edge_h: max_edge,
        vertex_count: mesh.latent_dim(),
        total_vertices: mesh.vertex_count(),
        triangle_count: mesh.triangles.len(),
    }
}

/// Free-function form of [`Mesh::basis_row`].
pub fn basis_row(mesh: &Mesh, s: Point2) -> Result<BasisRow> {
    mesh.basis_row(s)
}
