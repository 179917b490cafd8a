//! Piecewise-linear finite elements for the Matérn SPDE.
//!
//! [`assemble`] produces the mass, lumped-mass and stiffness matrices on the
//! full (possibly extended) mesh, and [`precision`] turns them into the
//! sparse GMRF precision `K C̃⁻¹ K` with `K = κ² C̃ + G`. The analytic
//! Matérn covariance is provided for comparison.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{orient2d, Point2};
use crate::mesh::Mesh;
use crate::sparse::{CsrMatrix, SparseCholesky};

/// Mass `C`, lumped mass `C̃` (diagonal) and stiffness `G`.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub c: CsrMatrix,
    pub c_lumped: Vec<f64>,
    pub g: CsrMatrix,
}

/// Element mass and stiffness matrices of a counter-clockwise triangle.
pub fn element_matrices(a: Point2, b: Point2, c: Point2) -> Option<([[f64; 3]; 3], [[f64; 3]; 3])> {
    let twice = orient2d(a, b, c);
    if !(twice > 0.0) {
        return None;
    }
    let area = 0.5 * twice;
    let p = [a, b, c];
    // Gradient of the barycentric coordinate of vertex k.
    let grad: [Point2; 3] = core::array::from_fn(|k| {
        let (u, v) = (p[(k + 1) % 3], p[(k + 2) % 3]);
        Point2::new(u.y - v.y, v.x - u.x) * (1.0 / twice)
    });
    let mut mass = [[0.0; 3]; 3];
    let mut stiff = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            mass[i][j] = area / 12.0 * if i == j { 2.0 } else { 1.0 };
            stiff[i][j] = area * grad[i].dot(grad[j]);
        }
    }
    Some((mass, stiff))
}

/// Assemble `C`, `C̃` and `G` over every triangle of the mesh.
pub fn assemble(mesh: &Mesh) -> Result<FemMatrices> {
    let n = mesh.vertex_count();
    let v = mesh.vertices();
    let mut ct = Vec::with_capacity(9 * mesh.triangles().len());
    let mut gt = Vec::with_capacity(9 * mesh.triangles().len());
    let mut lumped = vec![0.0; n];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let (m, s) = element_matrices(v[tri[0]], v[tri[1]], v[tri[2]]).ok_or(Error::DegenerateTriangle(t))?;
        for i in 0..3 {
            for j in 0..3 {
                ct.push((tri[i], tri[j], m[i][j]));
                gt.push((tri[i], tri[j], s[i][j]));
                lumped[tri[i]] += m[i][j];
            }
        }
    }
    Ok(FemMatrices { c: CsrMatrix::from_triplets(n, &ct), c_lumped: lumped, g: CsrMatrix::from_triplets(n, &gt) })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpdeOptions {
    /// Use the consistent mass matrix `C` in `K` instead of `C̃`.
    pub exact_mass_in_k: bool,
}

/// `K = κ² M + G` with `M` the lumped (default) or consistent mass.
pub fn k_matrix(fem: &FemMatrices, kappa: f64, opts: SpdeOptions) -> CsrMatrix {
    let k2 = kappa * kappa;
    if opts.exact_mass_in_k {
        fem.c.add_scaled(k2, &fem.g, 1.0)
    } else {
        CsrMatrix::from_diagonal(&fem.c_lumped).add_scaled(k2, &fem.g, 1.0)
    }
}

/// GMRF precision of the SPDE solution on a (possibly extended) mesh.
#[derive(Debug, Clone)]
pub struct Precision {
    kappa: f64,
    k: CsrMatrix,
    c_lumped: Vec<f64>,
    extended: CsrMatrix,
    interior: Vec<usize>,
    q: CsrMatrix,
}

/// Precision `Q* = K C̃⁻¹ K` on the full mesh and its restriction to the
/// non-auxiliary vertices.
pub fn precision(mesh: &Mesh, fem: &FemMatrices, kappa: f64) -> Result<Precision> {
    precision_with(mesh, fem, kappa, SpdeOptions::default())
}

pub fn precision_with(mesh: &Mesh, fem: &FemMatrices, kappa: f64, opts: SpdeOptions) -> Result<Precision> {
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::NonPositiveKappa(kappa));
    }
    if fem.c_lumped.len() != mesh.vertex_count() {
        return Err(Error::DimensionMismatch("fem matrices do not match mesh"));
    }
    let k = k_matrix(fem, kappa, opts);
    let inv: Vec<f64> = fem.c_lumped.iter().map(|c| 1.0 / c).collect();
    let extended = k.sandwich_diag(&inv);
    let interior = mesh.interior_index().to_vec();
    let q = extended.principal_submatrix(&interior);
    Ok(Precision { kappa, k, c_lumped: fem.c_lumped.clone(), extended, interior, q })
}

impl Precision {
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Principal submatrix of `Q*` over the non-auxiliary vertices.
    pub fn q(&self) -> &CsrMatrix {
        &self.q
    }

    pub fn principal_submatrix(&self) -> &CsrMatrix {
        &self.q
    }

    /// `Q*` on the whole mesh.
    pub fn extended(&self) -> &CsrMatrix {
        &self.extended
    }

    pub fn k(&self) -> &CsrMatrix {
        &self.k
    }

    pub fn c_lumped(&self) -> &[f64] {
        &self.c_lumped
    }

    /// `log|Q*| = 2 log|K| - log|C̃|` from a sparse factor of `K`.
    pub fn extended_logdet(&self) -> Result<f64> {
        let chol = SparseCholesky::factor(&self.k)?;
        Ok(2.0 * chol.logdet() - self.c_lumped.iter().map(|c| c.ln()).sum::<f64>())
    }

    /// Covariance of the field at the non-auxiliary vertices, the
    /// corresponding block of `Q*⁻¹ = K⁻¹ C̃ K⁻¹`. Without auxiliary
    /// vertices this is simply `Q⁻¹`.
    pub fn marginal_covariance(&self) -> Result<DMatrix<f64>> {
        let chol = SparseCholesky::factor(&self.k)?;
        let n = self.k.dim();
        let r = self.interior.len();
        let sqrt_c: Vec<f64> = self.c_lumped.iter().map(|c| c.sqrt()).collect();
        // Columns of C̃^{1/2} K⁻¹ E_I; the covariance is Y'Y.
        let mut y = DMatrix::zeros(n, r);
        let mut e = vec![0.0; n];
        for (col, &i) in self.interior.iter().enumerate() {
            e[i] = 1.0;
            let x = chol.solve(&e);
            e[i] = 0.0;
            for k in 0..n {
                y[(k, col)] = sqrt_c[k] * x[k];
            }
        }
        let s = y.tr_mul(&y);
        Ok((&s + s.transpose()) * 0.5)
    }
}

/// The SPDE field has marginal variance `1/τ²` with `τ² = 4πκ²`; its
/// covariance times this factor has unit variance.
pub fn unit_variance_scale(kappa: f64) -> f64 {
    4.0 * PI * kappa * kappa
}

/// Matérn covariance with ν = 1 and unit variance: `(κd) K₁(κd)`.
pub fn matern_cov(d: f64, kappa: f64) -> f64 {
    let x = kappa * d;
    if x <= 0.0 {
        return 1.0;
    }
    if x > 700.0 {
        return 0.0;
    }
    x * bessel_k1(x)
}

/// Modified Bessel function of the second kind, order one.
pub fn bessel_k1(x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k1 needs a positive argument");
    if x <= 2.0 {
        k1_series(x)
    } else {
        k1_continued_fraction(x)
    }
}

fn k1_series(x: f64) -> f64 {
    const EULER: f64 = 0.577_215_664_901_532_9;
    let y = 0.25 * x * x;
    let mut term = 1.0; // y^k / (k! (k+1)!)
    let mut psi_k1 = -EULER; // ψ(k+1)
    let mut psi_k2 = 1.0 - EULER; // ψ(k+2)
    let mut i1_sum = 0.0;
    let mut rest = 0.0;
    for k in 0..60 {
        i1_sum += term;
        rest += (psi_k1 + psi_k2) * term;
        let kf = k as f64;
        term *= y / ((kf + 1.0) * (kf + 2.0));
        psi_k1 += 1.0 / (kf + 1.0);
        psi_k2 += 1.0 / (kf + 2.0);
        if term < 1e-18 * i1_sum {
            break;
        }
    }
    let i1 = 0.5 * x * i1_sum;
    1.0 / x + (0.5 * x).ln() * i1 - 0.25 * x * rest
}

/// Steed's continued fraction (Temme's form) for K₀ and K₁, valid for x ≳ 2.
fn k1_continued_fraction(x: f64) -> f64 {
    let a1 = 0.25;
    let mut b = 2.0 * (1.0 + x);
    let mut d = 1.0 / b;
    let mut h = d;
    let mut delh = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    for i in 2..10_000 {
        let fi = i as f64;
        a -= 2.0 * (fi - 1.0);
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < 1e-16 {
            break;
        }
    }
    let k0 = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
    k0 * (x + 0.5 - a1 * h) / x
}

/// Matérn covariance on `[0, L]` under reflecting boundaries: the sum over
/// images `v - 2kL` and `2kL - v` for `|k| <= n_terms`.
pub fn folded_matern_1d(u: f64, v: f64, kappa: f64, length: f64, n_terms: usize) -> f64 {
    let n = n_terms as i64;
    (-n..=n)
        .map(|k| {
            let shift = 2.0 * k as f64 * length;
            matern_cov((u - (v - shift)).abs(), kappa) + matern_cov((u - (shift - v)).abs(), kappa)
        })
        .sum()
}
