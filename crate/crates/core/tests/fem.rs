mod common;

use common::{rng, unit_grid};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use lrssm_core::fem::{
    assemble, bessel_k1, element_matrices, folded_matern_1d, matern_cov, precision, precision_with, unit_variance_scale,
    SpdeOptions,
};
use lrssm_core::mesh::{delaunay_triangulate, extend_boundary, Mesh};
use lrssm_core::model::LatentMesh;
use lrssm_core::{Error, Point2};

fn right_triangle() -> Mesh {
    Mesh::from_triangles(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)], vec![[0, 1, 2]])
        .unwrap()
}

fn random_mesh(seed: u64, n: usize) -> Mesh {
    let mut r = rng(seed);
    let pts: Vec<Point2> = (0..n).map(|_| Point2::new(r.random_range(0.0..2.0), r.random_range(0.0..1.0))).collect();
    delaunay_triangulate(&pts).unwrap()
}

/// `K₁(x) = ∫₀^∞ exp(-x cosh t) cosh t dt` by the trapezoid rule, which
/// converges geometrically for this smooth, rapidly decaying integrand.
fn k1_quadrature(x: f64) -> f64 {
    let h = 1e-3;
    let upper = (50.0 / x).max(1.0).acosh() + 1.0;
    let n = (upper / h) as usize;
    let f = |t: f64| (-x * t.cosh()).exp() * t.cosh();
    h * (0.5 * f(0.0) + (1..=n).map(|k| f(k as f64 * h)).sum::<f64>())
}

#[test]
fn element_matrices_of_the_unit_right_triangle() {
    let fem = assemble(&right_triangle()).unwrap();
    let c = fem.c.to_dense();
    let g = fem.g.to_dense();
    let ce = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0]) / 24.0;
    let ge = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, -1.0, -1.0, 1.0, 0.0, -1.0, 0.0, 1.0]) / 2.0;
    assert!((c - ce).amax() < 1e-16);
    assert!((g - ge).amax() < 1e-16);
    assert_eq!(fem.c_lumped, vec![1.0 / 6.0; 3]);
}

/// Mass entries by the edge-midpoint rule, exact for quadratics; stiffness
/// from gradients solved out of the vertex interpolation system.
#[test]
fn element_matrices_match_quadrature_on_random_triangles() {
    let mut r = rng(4);
    for _ in 0..50 {
        let mut p: Vec<Point2> = (0..3).map(|_| Point2::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
        let area2 = (p[1] - p[0]).cross(p[2] - p[0]);
        if area2.abs() < 1e-3 {
            continue;
        }
        if area2 < 0.0 {
            p.swap(1, 2);
        }
        let area = 0.5 * area2.abs();
        let (m, s) = element_matrices(p[0], p[1], p[2]).unwrap();
        // Barycentric values at the edge midpoints.
        let mids = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
        let v = DMatrix::from_row_slice(3, 3, &[p[0].x, p[0].y, 1.0, p[1].x, p[1].y, 1.0, p[2].x, p[2].y, 1.0]);
        let coef = v.try_inverse().unwrap(); // column k = (a, b, c) of basis k
        for i in 0..3 {
            for j in 0..3 {
                let mq: f64 = mids.iter().map(|l| l[i] * l[j]).sum::<f64>() * area / 3.0;
                assert!((m[i][j] - mq).abs() < 1e-14);
                let gq = area * (coef[(0, i)] * coef[(0, j)] + coef[(1, i)] * coef[(1, j)]);
                assert!((s[i][j] - gq).abs() < 1e-12 * (1.0 + gq.abs()));
            }
        }
    }
    assert!(element_matrices(Point2::new(0.0, 0.0), Point2::new(0.0, 1.0), Point2::new(1.0, 0.0)).is_none());
}

#[test]
fn assembly_is_the_sum_of_element_matrices() {
    let m = random_mesh(1, 25);
    let fem = assemble(&m).unwrap();
    let n = m.vertex_count();
    let mut c = DMatrix::zeros(n, n);
    let mut g = DMatrix::zeros(n, n);
    for t in m.triangles() {
        let v = m.vertices();
        let (me, se) = element_matrices(v[t[0]], v[t[1]], v[t[2]]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                c[(t[i], t[j])] += me[i][j];
                g[(t[i], t[j])] += se[i][j];
            }
        }
    }
    assert!((fem.c.to_dense() - &c).amax() < 1e-15);
    assert!((fem.g.to_dense() - &g).amax() < 1e-13);
}

#[test]
fn fem_matrix_invariants() {
    for seed in 0..5 {
        let m = random_mesh(10 + seed, 30);
        let fem = assemble(&m).unwrap();
        let (c, g) = (fem.c.to_dense(), fem.g.to_dense());
        let area = m.total_area();
        assert!((&c - c.transpose()).amax() == 0.0);
        assert!((&g - g.transpose()).amax() == 0.0);
        assert!(((c.sum() - area) / area).abs() < 1e-10);
        assert!(((fem.c_lumped.iter().sum::<f64>() - area) / area).abs() < 1e-10);
        for i in 0..m.vertex_count() {
            assert!(g.row(i).sum().abs() < 1e-10);
            assert!((c.row(i).sum() - fem.c_lumped[i]).abs() < 1e-15);
        }
        assert!(c.clone().cholesky().is_some());
        let ev = g.symmetric_eigenvalues();
        assert!(ev.min() > -1e-10);
    }
}

#[test]
fn single_triangle_precision_by_hand() {
    let m = right_triangle();
    let fem = assemble(&m).unwrap();
    let p = precision(&m, &fem, 1.0).unwrap();
    // K = C̃ + G with C̃ = I/6.
    let k = DMatrix::from_row_slice(3, 3, &[7.0 / 6.0, -0.5, -0.5, -0.5, 4.0 / 6.0, 0.0, -0.5, 0.0, 4.0 / 6.0]);
    let expect = &k * 6.0 * &k;
    assert!((p.q().to_dense() - expect).amax() < 1e-13);
    assert!(matches!(precision(&m, &fem, 0.0), Err(Error::NonPositiveKappa(_))));
    assert!(matches!(precision(&m, &fem, -1.0), Err(Error::NonPositiveKappa(_))));
}

#[test]
fn large_kappa_diagonal_is_dominated_by_mass() {
    let m = random_mesh(3, 20);
    let fem = assemble(&m).unwrap();
    let kappa: f64 = 1e3;
    let p = precision(&m, &fem, kappa).unwrap();
    for (i, d) in p.q().diagonal().iter().enumerate() {
        let lead = kappa.powi(4) * fem.c_lumped[i];
        assert!(((d - lead) / lead).abs() < 0.01);
    }
}

#[test]
fn precision_pattern_within_two_hops() {
    let m = random_mesh(5, 40);
    let fem = assemble(&m).unwrap();
    let q = precision(&m, &fem, 3.0).unwrap();
    let n = m.vertex_count();
    let mut adj = DMatrix::<f64>::identity(n, n);
    for (a, b) in m.edges() {
        adj[(a, b)] = 1.0;
        adj[(b, a)] = 1.0;
    }
    let two = &adj * &adj;
    let dense = q.q().to_dense();
    let mut nnz_two = 0;
    for i in 0..n {
        for j in 0..n {
            nnz_two += usize::from(two[(i, j)] > 0.0);
            if dense[(i, j)] != 0.0 {
                assert!(two[(i, j)] > 0.0, "entry ({i}, {j}) outside 2-hop pattern");
            }
        }
    }
    assert!(q.q().nnz() <= nnz_two);
    assert!(dense.cholesky().is_some());
}

#[test]
fn k_spectrum_respects_rayleigh_bound() {
    for (seed, kappa) in [(1u64, 0.5), (2, 3.0), (3, 20.0)] {
        let m = random_mesh(seed, 60);
        let p = precision(&m, &assemble(&m).unwrap(), kappa).unwrap();
        let ev = p.k().to_dense().symmetric_eigenvalues().min();
        let cmin = p.c_lumped().iter().copied().fold(f64::INFINITY, f64::min);
        assert!(ev >= kappa * kappa * cmin * (1.0 - 1e-10));
    }
}

#[test]
fn exact_mass_switch_changes_k_only_through_mass() {
    let m = random_mesh(8, 15);
    let fem = assemble(&m).unwrap();
    let a = precision_with(&m, &fem, 2.0, SpdeOptions { exact_mass_in_k: true }).unwrap();
    let k = fem.c.to_dense() * 4.0 + fem.g.to_dense();
    assert!((a.k().to_dense() - &k).amax() < 1e-14);
    let cinv = DMatrix::from_diagonal(&DVector::from_iterator(15, fem.c_lumped.iter().map(|c| 1.0 / c)));
    assert!((a.q().to_dense() - &k * cinv * &k).amax() < 1e-10);
}

#[test]
fn logdet_routes_agree_without_auxiliary_vertices() {
    for (seed, kappa) in [(1u64, 1.0), (2, 4.0), (3, 12.0)] {
        let m = random_mesh(seed, 25);
        let latent = LatentMesh::new(m.clone()).unwrap();
        let prior = latent.prior(kappa).unwrap();
        let p = precision(&m, &latent.fem, kappa).unwrap();
        let sparse = p.extended_logdet().unwrap();
        let dense = p.q().to_dense().cholesky().unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
        assert!((sparse - dense).abs() < 1e-9 * dense.abs().max(1.0));
        let shifted = sparse - 25.0 * unit_variance_scale(kappa).ln();
        assert!((prior.logdet_prec - shifted).abs() < 1e-8 * shifted.abs().max(1.0), "{} vs {shifted}", prior.logdet_prec);
    }
}

#[test]
fn bessel_k1_matches_integral_representation() {
    for x in [1e-3, 0.05, 0.3, 1.0, 1.9, 2.0, 2.1, 3.5, 7.0, 15.0, 40.0] {
        let a = bessel_k1(x);
        let b = k1_quadrature(x);
        assert!(((a - b) / b).abs() < 1e-12, "x = {x}: {a} vs {b}");
    }
    assert!((matern_cov(1.0, 1.0) - 0.601_907_230_197_234_6).abs() < 1e-12);
}

#[test]
fn matern_shape() {
    assert_eq!(matern_cov(0.0, 3.0), 1.0);
    assert!((matern_cov(1e-9, 3.0) - 1.0).abs() < 1e-12);
    let vals: Vec<f64> = (1..=100).map(|k| matern_cov(k as f64 * 0.02, 4.0)).collect();
    for w in vals.windows(2) {
        assert!(w[0] > w[1] && w[1] >= 0.0);
    }
    // Correlation at the practical range √8/κ is about 0.14.
    let k = 5.0;
    assert!((matern_cov(8f64.sqrt() / k, k) - 0.1399).abs() < 1e-3);
}

#[test]
fn folded_matern_examples() {
    let (kappa, l) = (20.0, 10.0);
    assert!((folded_matern_1d(l / 2.0, l / 2.0, kappa, l, 5) - 1.0).abs() < 1e-6);
    assert!((folded_matern_1d(0.0, 0.0, kappa, l, 5) - 2.0).abs() < 1e-6);
    let mut r = rng(2);
    for _ in 0..100 {
        let (u, v) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        assert!((folded_matern_1d(u, v, 3.0, 1.0, 4) - folded_matern_1d(v, u, 3.0, 1.0, 4)).abs() < 1e-14);
    }
}

fn correlation(cov: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt()
}

/// Largest correlation error over vertex pairs of `mesh` at least `margin`
/// inside the square.
fn buffered_error(n: usize, kappa: f64, margin: f64) -> f64 {
    let core = unit_grid(n, n);
    let h = 1.0 / n as f64;
    let ext = extend_boundary(&core, 2.0 * 8f64.sqrt() / kappa, h).unwrap();
    let p = precision(&ext, &assemble(&ext).unwrap(), kappa).unwrap();
    let cov = p.marginal_covariance().unwrap();
    let pts = ext.latent_vertices();
    let keep: Vec<usize> = (0..pts.len())
        .filter(|&k| pts[k].x >= margin && pts[k].x <= 1.0 - margin && pts[k].y >= margin && pts[k].y <= 1.0 - margin)
        .collect();
    let mut worst: f64 = 0.0;
    for &i in &keep {
        for &j in &keep {
            worst = worst.max((correlation(&cov, i, j) - matern_cov(pts[i].dist(pts[j]), kappa)).abs());
        }
    }
    worst
}

#[test]
fn correlation_error_shrinks_with_h() {
    let kappa = 2.0 * 8f64.sqrt();
    let coarse = buffered_error(8, kappa, 0.25);
    let fine = buffered_error(16, kappa, 0.25);
    assert!(fine < coarse, "{coarse} -> {fine}");
}

#[test]
fn buffer_removes_boundary_effect_on_a_strip() {
    let kappa = 8.0;
    let strip = Mesh::regular_grid(0.0, 2.0, 0.0, 0.1, 40, 2).unwrap();
    let mid: Vec<usize> = (0..strip.vertex_count()).filter(|&v| (strip.vertices()[v].y - 0.05).abs() < 1e-12).collect();
    let errors = |mesh: &Mesh| {
        let p = precision(mesh, &assemble(mesh).unwrap(), kappa).unwrap();
        let cov = p.marginal_covariance().unwrap();
        let pts = mesh.latent_vertices();
        let (mut interior, mut edge): (f64, f64) = (0.0, 0.0);
        for &i in &mid {
            for &j in &mid {
                let e = (correlation(&cov, i, j) - matern_cov(pts[i].dist(pts[j]), kappa)).abs();
                let near_end = pts[i].x.min(pts[j].x) < 0.2 || pts[i].x.max(pts[j].x) > 1.8;
                if near_end {
                    edge = edge.max(e);
                } else {
                    interior = interior.max(e);
                }
            }
        }
        (interior, edge)
    };
    let plain = errors(&strip);
    let buffered = errors(&extend_boundary(&strip, 2.0 * 8f64.sqrt() / kappa, 0.05).unwrap());
    assert!(buffered.0 < 0.05 && buffered.1 < 0.05, "buffered {buffered:?}");
    assert!(plain.1 > 0.05, "unbuffered {plain:?}");
}
