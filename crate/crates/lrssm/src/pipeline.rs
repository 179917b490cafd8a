//! Sites to finished mesh: Delaunay, decimation, smoothing, buffer rings.

use lrssm_core::mesh::{
    decimate, delaunay_triangulate, extend_boundary_graded, laplacian_smooth, mesh_quality, Mesh, QualityReport,
};
use lrssm_core::{Point2, Result};

/// Knobs of the mesh pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshSpec {
    /// Non-auxiliary vertex count after decimation; `None` keeps every site.
    pub target: Option<usize>,
    pub smooth: bool,
    pub theta_min: f64,
    pub max_sweeps: usize,
    /// Zero skips the auxiliary rings.
    pub buffer: f64,
    /// First ring gap; `None` uses the mean edge length.
    pub ring_spacing: Option<f64>,
    pub ring_growth: f64,
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec {
            target: None,
            smooth: true,
            theta_min: std::f64::consts::PI / 9.0,
            max_sweeps: 50,
            buffer: 0.0,
            ring_spacing: None,
            ring_growth: 1.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltMesh {
    pub mesh: Mesh,
    pub quality: QualityReport,
    /// Quality of the core mesh before the rings were added.
    pub core_quality: QualityReport,
    pub smooth_sweeps: usize,
    pub angle_target_met: bool,
}

/// Buffer width of two Matérn ranges at scale `kappa`.
pub fn two_ranges(kappa: f64) -> f64 {
    2.0 * 8f64.sqrt() / kappa
}

/// Distinct sites in first-seen order.
pub fn dedup_sites(sites: &[Point2]) -> Vec<Point2> {
    let mut seen = std::collections::HashSet::new();
    sites.iter().copied().filter(|s| seen.insert((s.x.to_bits(), s.y.to_bits()))).collect()
}

pub fn build_mesh(sites: &[Point2], spec: &MeshSpec) -> Result<BuiltMesh> {
    let sites = dedup_sites(sites);
    let mut mesh = delaunay_triangulate(&sites)?;
    if let Some(r) = spec.target {
        if r < mesh.vertex_count() {
            mesh = decimate(&mesh, r)?;
        }
    }
    let (mut smooth_sweeps, mut angle_target_met) = (0, true);
    if spec.smooth {
        let out = laplacian_smooth(&mesh, spec.theta_min, spec.max_sweeps)?;
        smooth_sweeps = out.sweeps;
        angle_target_met = out.target_met;
        mesh = out.mesh;
    }
    let core_quality = mesh_quality(&mesh);
    if spec.buffer > 0.0 {
        let spacing = spec.ring_spacing.unwrap_or_else(|| mesh.mean_edge_length());
        mesh = extend_boundary_graded(&mesh, spec.buffer, spacing, spec.ring_growth)?;
    }
    Ok(BuiltMesh { quality: mesh_quality(&mesh), mesh, core_quality, smooth_sweeps, angle_target_met })
}
