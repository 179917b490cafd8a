//! Plug-in prediction, raster maps and validation metrics.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::kalman::SmootherMoments;
use crate::mesh::{BasisRow, Mesh};
use crate::model::{build_loading, BasisCache, ModelParams, ObservationPanel};

/// Mean and covariance across the p variables at one site and time.
#[derive(Debug, Clone, PartialEq)]
pub struct SitePrediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl SitePrediction {
    pub fn sd(&self) -> DVector<f64> {
        DVector::from_fn(self.cov.nrows(), |i, _| self.cov[(i, i)].max(0.0).sqrt())
    }
}

fn check_time(moments: &SmootherMoments, t: usize) -> Result<()> {
    if t == 0 || t > moments.t_len() {
        return Err(Error::InvalidParameter("prediction time must be in 1..=T"));
    }
    Ok(())
}

/// Prediction from precomputed basis rows (one per component).
fn predict_rows(
    params: &ModelParams,
    moments: &SmootherMoments,
    offsets: &[usize],
    rows: &[BasisRow],
    t: usize,
    covariates: Option<&[Vec<f64>]>,
    panel_offsets: &[usize],
) -> SitePrediction {
    let (p, q) = (params.p(), params.q());
    let z = &moments.mean[t];
    let pm = &moments.cov[t];
    // Row i of H as sparse (state index, weight) pairs.
    let h: Vec<Vec<(usize, f64)>> = (0..p)
        .map(|i| {
            (0..q)
                .flat_map(|j| rows[j].iter().map(move |(c, v)| (offsets[j] + c, params.w[(i, j)] * v)))
                .filter(|&(_, v)| v != 0.0)
                .collect()
        })
        .collect();
    let mean = DVector::from_fn(p, |i, _| {
        let fixed: f64 = match covariates {
            Some(x) => x[i].iter().enumerate().map(|(k, v)| v * params.beta[panel_offsets[i] + k]).sum(),
            None => 0.0,
        };
        fixed + h[i].iter().map(|&(c, v)| v * z[c]).sum::<f64>()
    });
    let cov = DMatrix::from_fn(p, p, |a, b| {
        h[a].iter().map(|&(ca, va)| h[b].iter().map(|&(cb, vb)| va * vb * pm[(ca, cb)]).sum::<f64>()).sum()
    });
    SitePrediction { mean, cov }
}

fn offsets_of(meshes: &[Mesh]) -> Vec<usize> {
    meshes
        .iter()
        .scan(0, |acc, m| {
            let here = *acc;
            *acc += m.latent_dim();
            Some(here)
        })
        .collect()
}

fn beta_offsets(covariates: Option<&[Vec<f64>]>, p: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(p);
    let mut acc = 0;
    for i in 0..p {
        out.push(acc);
        acc += covariates.map_or(0, |x| x[i].len());
    }
    out
}

/// Plug-in prediction at `s0` for state time `t` (1..=T). `covariates[i]`
/// is the covariate row of variable `i`; with `None` only the latent effect
/// is returned. The covariance is the latent part only.
pub fn predict(
    params: &ModelParams,
    moments: &SmootherMoments,
    meshes: &[Mesh],
    s0: Point2,
    t: usize,
    covariates: Option<&[Vec<f64>]>,
) -> Result<SitePrediction> {
    check_time(moments, t)?;
    check_covariates(params, covariates)?;
    let rows = meshes.iter().map(|m| m.basis_row(s0)).collect::<Result<Vec<_>>>()?;
    let offs = offsets_of(meshes);
    let boffs = beta_offsets(covariates, params.p());
    Ok(predict_rows(params, moments, &offs, &rows, t, covariates, &boffs))
}

fn check_covariates(params: &ModelParams, covariates: Option<&[Vec<f64>]>) -> Result<()> {
    if let Some(x) = covariates {
        if x.len() != params.p() || x.iter().map(Vec::len).sum::<usize>() != params.beta.len() {
            return Err(Error::DimensionMismatch("covariates do not match beta"));
        }
    }
    Ok(())
}

/// Add the measurement-error variances to a latent prediction.
pub fn with_noise(pred: &SitePrediction, sigma2: &DVector<f64>) -> SitePrediction {
    let mut cov = pred.cov.clone();
    for i in 0..cov.nrows() {
        cov[(i, i)] += sigma2[i];
    }
    SitePrediction { mean: pred.mean.clone(), cov }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RasterTime {
    At(usize),
    /// Mean of the per-time means and of the per-time variances.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterCell {
    pub at: Point2,
    /// `None` outside the mesh.
    pub value: Option<(Vec<f64>, Vec<f64>)>,
}

/// Means and standard deviations at cell centres of an `nx × ny` grid,
/// row-major with x varying fastest.
#[allow(clippy::too_many_arguments)]
pub fn raster_map(
    params: &ModelParams,
    moments: &SmootherMoments,
    meshes: &[Mesh],
    bbox: BBox,
    nx: usize,
    ny: usize,
    time: RasterTime,
    covariates: Option<&[Vec<f64>]>,
) -> Result<Vec<RasterCell>> {
    check_covariates(params, covariates)?;
    let times: Vec<usize> = match time {
        RasterTime::At(t) => {
            check_time(moments, t)?;
            alloc::vec![t]
        }
        RasterTime::Average => (1..=moments.t_len()).collect(),
    };
    if times.is_empty() {
        return Err(Error::InvalidParameter("no time steps to map"));
    }
    let offs = offsets_of(meshes);
    let boffs = beta_offsets(covariates, params.p());
    let p = params.p();
    let (dx, dy) = ((bbox.x1 - bbox.x0) / nx as f64, (bbox.y1 - bbox.y0) / ny as f64);
    let mut out = Vec::with_capacity(nx * ny);
    for r in 0..ny {
        for c in 0..nx {
            let at = Point2::new(bbox.x0 + (c as f64 + 0.5) * dx, bbox.y0 + (r as f64 + 0.5) * dy);
            let rows: Option<Vec<BasisRow>> = meshes.iter().map(|m| m.basis_row(at).ok()).collect();
            let value = rows.map(|rows| {
                let mut mean = alloc::vec![0.0; p];
                let mut var = alloc::vec![0.0; p];
                for &t in &times {
                    let pr = predict_rows(params, moments, &offs, &rows, t, covariates, &boffs);
                    for i in 0..p {
                        mean[i] += pr.mean[i];
                        var[i] += pr.cov[(i, i)].max(0.0);
                    }
                }
                let k = times.len() as f64;
                (mean.iter().map(|m| m / k).collect(), var.iter().map(|v| (v / k).sqrt()).collect())
            });
            out.push(RasterCell { at, value });
        }
    }
    Ok(out)
}

/// Fit statistics of one variable on one panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub rmse: f64,
    pub r2: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub train: Vec<Fit>,
    pub test: Vec<Fit>,
    /// RMSE over all variables' errors together.
    pub pooled_train: Fit,
    pub pooled_test: Fit,
}

/// Fitted values `X'β + Ψ^w z_t^T` for every observation of the panel,
/// grouped by variable.
pub fn fitted(params: &ModelParams, moments: &SmootherMoments, panel: &ObservationPanel, meshes: &[Mesh]) -> Vec<Vec<(f64, f64)>> {
    let cache = BasisCache::new(panel, meshes);
    let mut out = alloc::vec![Vec::new(); panel.p()];
    for t in 0..panel.t_len() {
        let psi = build_loading(&params.w, &cache, t);
        let lat = psi.mul_vec(&moments.mean[t + 1]);
        let mut k = 0;
        for i in 0..panel.p() {
            let fixed = panel.fixed_effect(i, t, &params.beta);
            for (y, xb) in panel.cell(i, t).y.iter().zip(fixed) {
                out[i].push((*y, xb + lat[k]));
                k += 1;
            }
        }
    }
    out
}

fn stats(pairs: &[(f64, f64)]) -> Fit {
    let n = pairs.len();
    if n == 0 {
        return Fit { rmse: f64::NAN, r2: f64::NAN, n };
    }
    let ybar = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let sse: f64 = pairs.iter().map(|(y, f)| (y - f) * (y - f)).sum();
    let sst: f64 = pairs.iter().map(|(y, _)| (y - ybar) * (y - ybar)).sum();
    Fit { rmse: (sse / n as f64).sqrt(), r2: 1.0 - sse / sst, n }
}

/// RMSE and R² per variable on training and test panels. Sites off the
/// mesh are moved to its nearest point.
pub fn validate(
    params: &ModelParams,
    moments: &SmootherMoments,
    train: &ObservationPanel,
    test: &ObservationPanel,
    meshes: &[Mesh],
) -> ValidationReport {
    let a = fitted(params, moments, train, meshes);
    let b = fitted(params, moments, test, meshes);
    // Pooled R² compares with each variable's own mean.
    let pooled = |v: &[Vec<(f64, f64)>]| {
        let n: usize = v.iter().map(Vec::len).sum();
        let sse: f64 = v.iter().flatten().map(|(y, f)| (y - f) * (y - f)).sum();
        let sst: f64 = v.iter().map(|g| stats_sst(g)).sum();
        Fit { rmse: (sse / n as f64).sqrt(), r2: 1.0 - sse / sst, n }
    };
    ValidationReport {
        train: a.iter().map(|v| stats(v)).collect(),
        test: b.iter().map(|v| stats(v)).collect(),
        pooled_train: pooled(&a),
        pooled_test: pooled(&b),
    }
}

fn stats_sst(pairs: &[(f64, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let ybar = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    pairs.iter().map(|(y, _)| (y - ybar) * (y - ybar)).sum()
}
