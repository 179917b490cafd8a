//! Mutable triangulation with edge lookup, used while building meshes.
//!
//! Triangles are stored counter-clockwise in slots that may be vacated;
//! `edges` maps every directed edge to the triangle that owns it.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{barycentric, incircle, min_angle, orient2d, triangle_area, Point2, PREDICATE_EPS};

#[derive(Debug, Clone)]
pub(crate) struct Triangulation {
    pub pts: Vec<Point2>,
    slots: Vec<Option<[usize; 3]>>,
    free: Vec<usize>,
    edges: BTreeMap<(usize, usize), usize>,
    incident: Vec<Vec<usize>>,
}

impl Triangulation {
    pub fn new(pts: Vec<Point2>) -> Self {
        let n = pts.len();
        Self { pts, slots: Vec::new(), free: Vec::new(), edges: BTreeMap::new(), incident: vec![Vec::new(); n] }
    }

    pub fn from_triangles(pts: Vec<Point2>, tris: &[[usize; 3]]) -> Self {
        let mut t = Self::new(pts);
        for &tri in tris {
            t.add(tri);
        }
        t
    }

    pub fn add_point(&mut self, p: Point2) -> usize {
        self.pts.push(p);
        self.incident.push(Vec::new());
        self.pts.len() - 1
    }

    pub fn add(&mut self, tri: [usize; 3]) -> usize {
        let id = match self.free.pop() {
            Some(id) => {
                self.slots[id] = Some(tri);
                id
            }
            None => {
                self.slots.push(Some(tri));
                self.slots.len() - 1
            }
        };
        for k in 0..3 {
            self.edges.insert((tri[k], tri[(k + 1) % 3]), id);
            self.incident[tri[k]].push(id);
        }
        id
    }

    pub fn remove(&mut self, id: usize) -> [usize; 3] {
        let tri = self.slots[id].take().expect("removing a vacant triangle slot");
        for k in 0..3 {
            self.edges.remove(&(tri[k], tri[(k + 1) % 3]));
            let inc = &mut self.incident[tri[k]];
            if let Some(pos) = inc.iter().position(|&t| t == id) {
                inc.swap_remove(pos);
            }
        }
        self.free.push(id);
        tri
    }

    pub fn get(&self, id: usize) -> Option<[usize; 3]> {
        self.slots.get(id).copied().flatten()
    }

    pub fn triangle_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.map(|_| i))
    }

    pub fn triangles(&self) -> Vec<[usize; 3]> {
        self.slots.iter().flatten().copied().collect()
    }

    pub fn incident(&self, v: usize) -> &[usize] {
        &self.incident[v]
    }

    pub fn edge_owner(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.get(&(a, b)).copied()
    }

    /// True when `v` lies on the triangulation boundary.
    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.incident[v].iter().any(|&t| {
            let tri = self.slots[t].unwrap();
            (0..3).any(|k| {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                (a == v || b == v) && !self.edges.contains_key(&(b, a))
            })
        })
    }

    /// Boundary edges as directed pairs (counter-clockwise along the outer loop).
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        self.edges.keys().filter(|&&(a, b)| !self.edges.contains_key(&(b, a))).copied().collect()
    }

    /// Boundary loop as an ordered list of vertices, counter-clockwise.
    pub fn boundary_loop(&self) -> Vec<usize> {
        let next: BTreeMap<usize, usize> = self.boundary_edges().into_iter().collect();
        let Some((&start, _)) = next.iter().next() else {
            return Vec::new();
        };
        let mut out = vec![start];
        let mut cur = next[&start];
        while cur != start {
            out.push(cur);
            cur = next[&cur];
        }
        out
    }

    /// Neighbours of an interior vertex in counter-clockwise order.
    pub fn ring(&self, v: usize) -> Option<Vec<usize>> {
        let mut next = BTreeMap::new();
        for &t in &self.incident[v] {
            let tri = self.slots[t].unwrap();
            let k = tri.iter().position(|&x| x == v).unwrap();
            next.insert(tri[(k + 1) % 3], tri[(k + 2) % 3]);
        }
        let (&start, _) = next.iter().next()?;
        let mut out = vec![start];
        let mut cur = *next.get(&start)?;
        while cur != start {
            out.push(cur);
            cur = *next.get(&cur)?;
            if out.len() > next.len() {
                return None;
            }
        }
        (out.len() == next.len()).then_some(out)
    }

    pub fn neighbours(&self, v: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.incident[v]
            .iter()
            .flat_map(|&t| self.slots[t].unwrap())
            .filter(|&x| x != v)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn tri_area(&self, tri: [usize; 3]) -> f64 {
        triangle_area(self.pts[tri[0]], self.pts[tri[1]], self.pts[tri[2]])
    }

    pub fn tri_min_angle(&self, tri: [usize; 3]) -> f64 {
        min_angle(self.pts[tri[0]], self.pts[tri[1]], self.pts[tri[2]])
    }

    pub fn global_min_angle(&self) -> f64 {
        self.slots.iter().flatten().map(|&t| self.tri_min_angle(t)).fold(f64::INFINITY, f64::min)
    }

    /// The edge `a-b` is locally Delaunay (or on the boundary).
    pub fn is_locally_delaunay(&self, a: usize, b: usize) -> bool {
        let (Some(t1), Some(t2)) = (self.edge_owner(a, b), self.edge_owner(b, a)) else {
            return true;
        };
        let c = third(self.slots[t1].unwrap(), a, b);
        let d = third(self.slots[t2].unwrap(), b, a);
        incircle(self.pts[a], self.pts[b], self.pts[c], self.pts[d]) <= PREDICATE_EPS
    }

    /// Flip edge `a-b`, returning false if the surrounding quad is not
    /// strictly convex.
    pub fn flip(&mut self, a: usize, b: usize) -> bool {
        let (Some(t1), Some(t2)) = (self.edge_owner(a, b), self.edge_owner(b, a)) else {
            return false;
        };
        let c = third(self.slots[t1].unwrap(), a, b);
        let d = third(self.slots[t2].unwrap(), b, a);
        let p = &self.pts;
        if orient2d(p[a], p[d], p[c]) <= PREDICATE_EPS || orient2d(p[d], p[b], p[c]) <= PREDICATE_EPS {
            return false;
        }
        self.remove(t1);
        self.remove(t2);
        self.add([a, d, c]);
        self.add([d, b, c]);
        true
    }

    /// Lawson flipping starting from the given edges. `may_flip` restricts
    /// which edges are allowed to change.
    pub fn legalize<F>(&mut self, mut stack: Vec<(usize, usize)>, may_flip: F)
    where
        F: Fn(usize, usize) -> bool,
    {
        let mut guard = 0usize;
        let limit = 64 * (self.pts.len() + 16) * (self.pts.len() + 16);
        while let Some((a, b)) = stack.pop() {
            guard += 1;
            if guard > limit {
                break;
            }
            if !may_flip(a, b) || self.is_locally_delaunay(a, b) {
                continue;
            }
            let (Some(t1), Some(t2)) = (self.edge_owner(a, b), self.edge_owner(b, a)) else {
                continue;
            };
            let c = third(self.slots[t1].unwrap(), a, b);
            let d = third(self.slots[t2].unwrap(), b, a);
            if self.flip(a, b) {
                stack.extend_from_slice(&[(a, d), (d, b), (b, c), (c, a)]);
            }
        }
    }

    pub fn legalize_all(&mut self) {
        let stack: Vec<_> = self.edges.keys().filter(|&&(a, b)| a < b).copied().collect();
        self.legalize(stack, |_, _| true);
    }

    /// Remove vertex `v` (which must be interior) and re-triangulate its
    /// cavity by ear clipping followed by Delaunay flips. The vertex keeps
    /// its slot in `pts` but no longer belongs to any triangle.
    pub fn remove_vertex(&mut self, v: usize) -> bool {
        let Some(polygon) = self.ring(v).or_else(|| self.straight_boundary_fan(v)) else {
            return false;
        };
        let incident: Vec<usize> = self.incident[v].clone();
        for t in incident {
            self.remove(t);
        }
        let new_tris = ear_clip(&self.pts, &polygon);
        let mut stack = Vec::new();
        for tri in new_tris {
            self.add(tri);
            for k in 0..3 {
                stack.push((tri[k], tri[(k + 1) % 3]));
            }
        }
        self.legalize(stack, |_, _| true);
        true
    }

    /// Open fan `s, ..., e` of a boundary vertex, counter-clockwise.
    fn boundary_fan(&self, v: usize) -> Option<Vec<usize>> {
        let mut next = BTreeMap::new();
        for &t in &self.incident[v] {
            let tri = self.slots[t].unwrap();
            let k = tri.iter().position(|&x| x == v).unwrap();
            next.insert(tri[(k + 1) % 3], tri[(k + 2) % 3]);
        }
        let targets: Vec<usize> = next.values().copied().collect();
        let mut starts = next.keys().filter(|k| !targets.contains(k));
        let start = *starts.next()?;
        if starts.next().is_some() {
            return None;
        }
        let mut out = vec![start];
        let mut cur = start;
        while let Some(&n) = next.get(&cur) {
            out.push(n);
            cur = n;
            if out.len() > next.len() + 1 {
                return None;
            }
        }
        (out.len() == next.len() + 1).then_some(out)
    }

    /// The fan of a boundary vertex lying on the straight segment between
    /// its two boundary neighbours; removing it leaves the domain unchanged.
    fn straight_boundary_fan(&self, v: usize) -> Option<Vec<usize>> {
        let fan = self.boundary_fan(v)?;
        let (s, e) = (fan[0], fan[fan.len() - 1]);
        let (a, b, p) = (self.pts[e], self.pts[s], self.pts[v]);
        let between = (p.x - a.x) * (p.x - b.x) + (p.y - a.y) * (p.y - b.y) < 0.0;
        (between && orient2d(a, p, b) == 0.0 && fan.len() >= 3).then_some(fan)
    }

    /// Boundary vertex at a corner of the outer loop, that is, not lying
    /// on the straight segment between its boundary neighbours.
    pub fn is_hull_corner(&self, v: usize) -> bool {
        self.is_boundary_vertex(v) && self.straight_boundary_fan(v).is_none()
    }

    /// Locate the triangle containing `p`; returns its id and barycentrics.
    pub fn locate(&self, p: Point2, tol: f64) -> Option<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for id in self.triangle_ids() {
            let tri = self.slots[id].unwrap();
            let bc = barycentric(self.pts[tri[0]], self.pts[tri[1]], self.pts[tri[2]], p);
            let worst = bc[0].min(bc[1]).min(bc[2]);
            if worst >= 0.0 {
                return Some((id, bc));
            }
            if worst >= -tol && best.as_ref().is_none_or(|b| worst > b.2) {
                best = Some((id, bc, worst));
            }
        }
        best.map(|(id, bc, _)| (id, bc))
    }

    /// Insert existing point `v` (which must not belong to any triangle)
    /// into the triangulation and restore the Delaunay property. Returns
    /// false if the point lies outside or coincides with a vertex.
    pub fn insert_vertex(&mut self, v: usize) -> bool {
        let p = self.pts[v];
        let Some((id, bc)) = self.locate(p, 1e-12) else {
            return false;
        };
        let tri = self.slots[id].unwrap();
        let scale = triangle_area(self.pts[tri[0]], self.pts[tri[1]], self.pts[tri[2]]).max(1e-300);
        if tri.iter().any(|&w| self.pts[w].dist(p) <= 1e-12 * (1.0 + scale)) {
            return false;
        }
        let on_edge = (0..3).find(|&k| bc[k].abs() <= 1e-12);
        let mut stack = Vec::new();
        match on_edge {
            None => {
                self.remove(id);
                for k in 0..3 {
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    self.add([a, b, v]);
                    stack.push((a, b));
                }
            }
            Some(k) => {
                // edge opposite vertex k
                let (a, b, c) = (tri[(k + 1) % 3], tri[(k + 2) % 3], tri[k]);
                let other = self.edge_owner(b, a);
                self.remove(id);
                self.add([b, c, v]);
                self.add([c, a, v]);
                stack.extend_from_slice(&[(b, c), (c, a)]);
                if let Some(t2) = other {
                    let d = third(self.slots[t2].unwrap(), b, a);
                    self.remove(t2);
                    self.add([a, d, v]);
                    self.add([d, b, v]);
                    stack.extend_from_slice(&[(a, d), (d, b)]);
                }
            }
        }
        self.legalize(stack, |_, _| true);
        true
    }
}

/// Vertex of `tri` other than `a` and `b`.
pub(crate) fn third(tri: [usize; 3], a: usize, b: usize) -> usize {
    *tri.iter().find(|&&x| x != a && x != b).expect("triangle has a third vertex")
}

/// Ear clipping of a simple counter-clockwise polygon.
pub(crate) fn ear_clip(pts: &[Point2], polygon: &[usize]) -> Vec<[usize; 3]> {
    let mut poly: Vec<usize> = polygon.to_vec();
    let mut out = Vec::with_capacity(poly.len().saturating_sub(2));
    while poly.len() > 3 {
        let n = poly.len();
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            let (a, b, c) = (poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n]);
            if orient2d(pts[a], pts[b], pts[c]) <= PREDICATE_EPS {
                continue;
            }
            let blocked = poly.iter().any(|&w| {
                w != a && w != b && w != c && {
                    let bc = barycentric(pts[a], pts[b], pts[c], pts[w]);
                    bc.iter().all(|&l| l >= -1e-14)
                }
            });
            if blocked {
                continue;
            }
            let q = min_angle(pts[a], pts[b], pts[c]);
            if best.is_none_or(|(_, bq)| q > bq) {
                best = Some((i, q));
            }
        }
        // A star-shaped polygon always has an ear; fall back to the first
        // vertex if round-off hides it.
        let i = best.map(|b| b.0).unwrap_or(0);
        let n = poly.len();
        out.push([poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n]]);
        poly.remove(i);
    }
    if poly.len() == 3 {
        out.push([poly[0], poly[1], poly[2]]);
    }
    out
}
