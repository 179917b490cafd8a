//! Kalman filter, fixed-interval smoother and lag-one covariances.
//!
//! State index `s = 0..=T`, with `s = 0` the initial state and observation
//! time `t` of the panel feeding state `s = t + 1`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::{build_loading, BasisCache, ComponentPrior, LoadingMatrix, ModelParams, ObservationPanel};

/// How the measurement update is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateForm {
    /// Covariance form when `m_t <= n`, information form otherwise.
    #[default]
    Auto,
    Covariance,
    Information,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FilterOptions {
    pub form: UpdateForm,
    /// Keep every innovation covariance `Σ_ε,t` (costs `m_t²` memory each).
    pub keep_innovation_cov: bool,
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// `z_s^{s-1}`, with entry 0 the prior mean.
    pub pred_mean: Vec<DVector<f64>>,
    pub pred_cov: Vec<DMatrix<f64>>,
    /// `z_s^s`, with entry 0 the prior mean.
    pub filt_mean: Vec<DVector<f64>>,
    pub filt_cov: Vec<DMatrix<f64>>,
    /// Innovation at each observation time.
    pub innovations: Vec<DVector<f64>>,
    /// Innovation covariances, when requested.
    pub innovation_cov: Vec<Option<DMatrix<f64>>>,
    /// Per-time log-likelihood contributions.
    pub loglik_terms: Vec<f64>,
    pub loglik: f64,
    /// `K_T Ψ_T` at the last time, used to start the lag-one recursion.
    pub last_gain_loading: DMatrix<f64>,
    /// Times at which a ridge had to be added to `Σ_ε,t`.
    pub ridged: Vec<usize>,
    f_diag: DVector<f64>,
    pred_prec: Vec<Option<DMatrix<f64>>>,
}

impl FilterOutput {
    pub fn t_len(&self) -> usize {
        self.innovations.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherMoments {
    /// `z_s^T` for `s = 0..=T`.
    pub mean: Vec<DVector<f64>>,
    /// `P_s^T` for `s = 0..=T`.
    pub cov: Vec<DMatrix<f64>>,
    /// `P_{s,s-1}^T` for `s = 1..=T`; entry 0 is zero.
    pub lag_one: Vec<DMatrix<f64>>,
}

impl SmootherMoments {
    pub fn t_len(&self) -> usize {
        self.mean.len() - 1
    }
}

/// Block-diagonal innovation covariance.
pub fn innovation_covariance(priors: &[ComponentPrior]) -> DMatrix<f64> {
    let n: usize = priors.iter().map(|p| p.cov.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut off = 0;
    for p in priors {
        let r = p.cov.nrows();
        out.view_mut((off, off), (r, r)).copy_from(&p.cov);
        off += r;
    }
    out
}

/// Stacked observations and their fixed effects and noise variances.
pub(crate) struct Stacked {
    pub y: DVector<f64>,
    pub fixed: DVector<f64>,
    pub noise: Vec<f64>,
}

pub(crate) fn stack(params: &ModelParams, panel: &ObservationPanel, t: usize) -> Stacked {
    let m = panel.m_t(t);
    let mut y = Vec::with_capacity(m);
    let mut fixed = Vec::with_capacity(m);
    let mut noise = Vec::with_capacity(m);
    for i in 0..panel.p() {
        y.extend_from_slice(&panel.cell(i, t).y);
        fixed.extend(panel.fixed_effect(i, t, &params.beta));
        noise.extend(core::iter::repeat_n(params.sigma2[i], panel.cell(i, t).len()));
    }
    Stacked { y: DVector::from_vec(y), fixed: DVector::from_vec(fixed), noise }
}

pub(crate) fn symmetrize_in_place(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

fn logdet_chol(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `F A F` for diagonal `F`.
pub(crate) fn scale_both(a: &DMatrix<f64>, f: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| f[i] * a[(i, j)] * f[j])
}

/// `A F` for diagonal `F`.
pub(crate) fn scale_cols(a: &DMatrix<f64>, f: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * f[j])
}

/// `F A` for diagonal `F`.
pub(crate) fn scale_rows(a: &DMatrix<f64>, f: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| f[i] * a[(i, j)])
}

/// `K Ψ` for a dense gain `K` (n × m) and sparse `Ψ` (m × n).
fn gain_times_loading(k: &DMatrix<f64>, psi: &LoadingMatrix) -> DMatrix<f64> {
    let n = k.nrows();
    let mut out = DMatrix::zeros(n, psi.ncols());
    for r in 0..psi.nrows() {
        for &(c, w) in psi.row(r) {
            let mut col = out.column_mut(c);
            col.axpy(w, &k.column(r), 1.0);
        }
    }
    out
}

/// Kalman filter with the default options.
pub fn filter(params: &ModelParams, panel: &ObservationPanel, cache: &BasisCache, priors: &[ComponentPrior]) -> Result<FilterOutput> {
    filter_with(params, panel, cache, priors, FilterOptions::default())
}

pub fn filter_with(
    params: &ModelParams,
    panel: &ObservationPanel,
    cache: &BasisCache,
    priors: &[ComponentPrior],
    opts: FilterOptions,
) -> Result<FilterOutput> {
    let layout = cache.layout();
    params.validate(panel, layout)?;
    if priors.len() != layout.q() || priors.iter().enumerate().any(|(j, p)| p.cov.nrows() != layout.dim(j)) {
        return Err(Error::DimensionMismatch("priors do not match the latent layout"));
    }
    let n = layout.n();
    let t_len = panel.t_len();
    let fd = layout.expand(&params.f);
    let q_eta = innovation_covariance(priors);

    let mut out = FilterOutput {
        pred_mean: vec![params.mu0.clone()],
        pred_cov: vec![params.sigma0.clone()],
        filt_mean: vec![params.mu0.clone()],
        filt_cov: vec![params.sigma0.clone()],
        innovations: Vec::with_capacity(t_len),
        innovation_cov: Vec::with_capacity(t_len),
        loglik_terms: Vec::with_capacity(t_len),
        loglik: 0.0,
        last_gain_loading: DMatrix::zeros(n, n),
        ridged: Vec::new(),
        f_diag: fd.clone(),
        pred_prec: vec![None],
    };

    for t in 0..t_len {
        let zp = out.filt_mean[t].component_mul(&fd);
        let mut pp = scale_both(&out.filt_cov[t], &fd) + &q_eta;
        symmetrize_in_place(&mut pp);
        let psi = build_loading(&params.w, cache, t);
        let obs = stack(params, panel, t);
        let m = obs.y.len();
        let e = &obs.y - &obs.fixed - psi.mul_vec(&zp);
        let info = match opts.form {
            UpdateForm::Information => true,
            UpdateForm::Covariance => false,
            UpdateForm::Auto => m > n,
        } && m > 0
            && obs.noise.iter().all(|&s| s > 0.0);

        let (zf, pf, term, pred_prec, s_keep) = if m == 0 {
            (zp.clone(), pp.clone(), 0.0, None, None)
        } else if info {
            let pp_chol = pp.clone().cholesky().ok_or(Error::SingularPredictedCovariance(t + 1))?;
            let mut pp_inv = pp_chol.inverse();
            symmetrize_in_place(&mut pp_inv);
            let d_inv: Vec<f64> = obs.noise.iter().map(|s| 1.0 / s).collect();
            let mut a = &pp_inv + psi.weighted_gram(&d_inv);
            symmetrize_in_place(&mut a);
            let a_chol = a.cholesky().ok_or(Error::SingularInnovationCovariance(t))?;
            let mut pf = a_chol.inverse();
            symmetrize_in_place(&mut pf);
            let de = DVector::from_iterator(m, e.iter().zip(&d_inv).map(|(v, d)| v * d));
            let b = psi.tr_mul_vec(&de);
            let zf = &zp + &pf * &b;
            let logdet_s = obs.noise.iter().map(|s| s.ln()).sum::<f64>() + logdet_chol(&pp_chol) + logdet_chol(&a_chol);
            let quad = e.dot(&de) - b.dot(&a_chol.solve(&b));
            let term = -0.5 * (m as f64 * (2.0 * PI).ln() + logdet_s + quad);
            if t + 1 == t_len {
                out.last_gain_loading = &pf * psi.weighted_gram(&d_inv);
            }
            let s_keep = opts.keep_innovation_cov.then(|| {
                let mut s = psi.left_mul(&psi.right_mul_t(&pp));
                for k in 0..m {
                    s[(k, k)] += obs.noise[k];
                }
                s
            });
            (zf, pf, term, Some(pp_inv), s_keep)
        } else {
            let ppsi = psi.right_mul_t(&pp); // n × m
            let mut s = psi.left_mul(&ppsi);
            for k in 0..m {
                s[(k, k)] += obs.noise[k];
            }
            symmetrize_in_place(&mut s);
            let s_chol = match s.clone().cholesky() {
                Some(c) if condition_ok(&c) => c,
                _ => {
                    let ridge = 1e-10 * s.trace() / m as f64;
                    for k in 0..m {
                        s[(k, k)] += ridge;
                    }
                    out.ridged.push(t);
                    s.clone().cholesky().ok_or(Error::SingularInnovationCovariance(t))?
                }
            };
            let kt = s_chol.solve(&ppsi.transpose()); // m × n, = K'
            let gain = kt.transpose();
            let zf = &zp + &gain * &e;
            let mut pf = &pp - &gain * ppsi.transpose();
            symmetrize_in_place(&mut pf);
            let quad = e.dot(&s_chol.solve(&e));
            let term = -0.5 * (m as f64 * (2.0 * PI).ln() + logdet_chol(&s_chol) + quad);
            if t + 1 == t_len {
                out.last_gain_loading = gain_times_loading(&gain, &psi);
            }
            (zf, pf, term, None, opts.keep_innovation_cov.then_some(s))
        };
        out.pred_mean.push(zp);
        out.pred_cov.push(pp);
        out.filt_mean.push(zf);
        out.filt_cov.push(pf);
        out.innovations.push(e);
        out.innovation_cov.push(s_keep);
        out.loglik_terms.push(term);
        out.loglik += term;
        out.pred_prec.push(pred_prec);
    }
    if !out.loglik.is_finite() {
        return Err(Error::SingularInnovationCovariance(t_len.saturating_sub(1)));
    }
    Ok(out)
}

/// Cheap condition check from the Cholesky diagonal.
fn condition_ok(c: &Cholesky<f64, Dyn>) -> bool {
    let d = c.l_dirty().diagonal();
    let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    lo > 0.0 && (hi / lo).powi(2) <= 1e12
}

/// Rauch-Tung-Striebel smoother with the lag-one covariance recursion.
pub fn smooth(filtered: &FilterOutput) -> Result<SmootherMoments> {
    let t_len = filtered.t_len();
    let n = filtered.f_diag.len();
    let fd = &filtered.f_diag;
    let mut mean = filtered.filt_mean.clone();
    let mut cov = filtered.filt_cov.clone();
    // j[s] = J_s for s = 0..T-1.
    let mut js: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
    for s in (1..=t_len).rev() {
        let pp_inv = match &filtered.pred_prec[s] {
            Some(p) => p.clone(),
            None => {
                let c = filtered.pred_cov[s].clone().cholesky().ok_or(Error::SingularPredictedCovariance(s))?;
                c.inverse()
            }
        };
        let j = scale_cols(&filtered.filt_cov[s - 1], fd) * pp_inv;
        let dm = &mean[s] - &filtered.pred_mean[s];
        mean[s - 1] = &filtered.filt_mean[s - 1] + &j * dm;
        let dp = &cov[s] - &filtered.pred_cov[s];
        let mut c = &filtered.filt_cov[s - 1] + &j * dp * j.transpose();
        symmetrize_in_place(&mut c);
        cov[s - 1] = c;
        js.push(j);
    }
    js.reverse();

    let mut lag = vec![DMatrix::zeros(n, n); t_len + 1];
    if t_len >= 1 {
        let ik = DMatrix::identity(n, n) - &filtered.last_gain_loading;
        lag[t_len] = ik * scale_rows(&filtered.filt_cov[t_len - 1], fd);
        for s in (2..=t_len).rev() {
            let fp = scale_rows(&filtered.filt_cov[s - 1], fd);
            let jt = js[s - 2].transpose();
            lag[s - 1] = &filtered.filt_cov[s - 1] * &jt + &js[s - 1] * (&lag[s] - fp) * &jt;
        }
    }
    Ok(SmootherMoments { mean, cov, lag_one: lag })
}

/// Lag-one covariances from the identity `P_{s,s-1}^T = P_s^T J_{s-1}'`,
/// an independent route used to cross-check the recursion.
pub fn lag_one_direct(filtered: &FilterOutput, moments: &SmootherMoments) -> Result<Vec<DMatrix<f64>>> {
    let t_len = filtered.t_len();
    let n = filtered.f_diag.len();
    let mut out = vec![DMatrix::zeros(n, n); t_len + 1];
    for s in 1..=t_len {
        let c = filtered.pred_cov[s].clone().cholesky().ok_or(Error::SingularPredictedCovariance(s))?;
        let j = scale_cols(&filtered.filt_cov[s - 1], &filtered.f_diag) * c.inverse();
        out[s] = &moments.cov[s] * j.transpose();
    }
    Ok(out)
}

/// Brute-force answer from the joint Gaussian of all states and
/// observations.
#[derive(Debug, Clone)]
pub struct OracleOutput {
    pub loglik: f64,
    pub moments: SmootherMoments,
}

/// Largest total dimension accepted by [`dense_oracle`].
pub const ORACLE_MAX_DIM: usize = 2000;

pub fn dense_oracle(
    params: &ModelParams,
    panel: &ObservationPanel,
    cache: &BasisCache,
    priors: &[ComponentPrior],
) -> Result<OracleOutput> {
    let layout = cache.layout();
    params.validate(panel, layout)?;
    let n = layout.n();
    let t_len = panel.t_len();
    let m_total: usize = (0..t_len).map(|t| panel.m_t(t)).sum();
    let dz = (t_len + 1) * n;
    if dz + m_total > ORACLE_MAX_DIM {
        return Err(Error::DimensionTooLarge(dz + m_total));
    }
    let fd = layout.expand(&params.f);
    let q_eta = innovation_covariance(priors);

    // Marginal covariances V_s and means of the states.
    let mut v = vec![params.sigma0.clone()];
    let mut mu = vec![params.mu0.clone()];
    for s in 1..=t_len {
        v.push(scale_both(&v[s - 1], &fd) + &q_eta);
        mu.push(mu[s - 1].component_mul(&fd));
    }
    let mut cz = DMatrix::zeros(dz, dz);
    for s in 0..=t_len {
        let mut block = v[s].clone();
        for t in s..=t_len {
            // Cov(z_t, z_s) = F^{t-s} V_s.
            cz.view_mut((t * n, s * n), (n, n)).copy_from(&block);
            cz.view_mut((s * n, t * n), (n, n)).copy_from(&block.transpose());
            block = scale_rows(&block, &fd);
        }
    }
    let mut mz = DVector::zeros(dz);
    for s in 0..=t_len {
        mz.rows_mut(s * n, n).copy_from(&mu[s]);
    }

    // Observation operator H (m_total × dz), mean and noise.
    let mut h = DMatrix::zeros(m_total, dz);
    let mut y = DVector::zeros(m_total);
    let mut my = DVector::zeros(m_total);
    let mut noise = DVector::zeros(m_total);
    let mut row = 0;
    for t in 0..t_len {
        let psi = build_loading(&params.w, cache, t).to_dense();
        let obs = stack(params, panel, t);
        let m = obs.y.len();
        h.view_mut((row, (t + 1) * n), (m, n)).copy_from(&psi);
        y.rows_mut(row, m).copy_from(&obs.y);
        my.rows_mut(row, m).copy_from(&obs.fixed);
        for k in 0..m {
            noise[row + k] = obs.noise[k];
        }
        row += m;
    }
    my += &h * &mz;
    let czh = &cz * h.transpose();
    let mut cy = &h * &czh;
    for k in 0..m_total {
        cy[(k, k)] += noise[k];
    }
    symmetrize_in_place(&mut cy);

    let (loglik, post_mean, post_cov) = if m_total == 0 {
        (0.0, mz, cz)
    } else {
        let c = cy.cholesky().ok_or(Error::SingularInnovationCovariance(0))?;
        let r = &y - &my;
        let alpha = c.solve(&r);
        let loglik = -0.5 * (m_total as f64 * (2.0 * PI).ln() + logdet_chol(&c) + r.dot(&alpha));
        let pm = &mz + &czh * alpha;
        let pc = &cz - &czh * c.solve(&czh.transpose());
        (loglik, pm, pc)
    };
    let mean = (0..=t_len).map(|s| post_mean.rows(s * n, n).into_owned()).collect();
    let cov = (0..=t_len).map(|s| post_cov.view((s * n, s * n), (n, n)).into_owned()).collect();
    let mut lag_one = vec![DMatrix::zeros(n, n)];
    for s in 1..=t_len {
        lag_one.push(post_cov.view((s * n, (s - 1) * n), (n, n)).into_owned());
    }
    Ok(OracleOutput { loglik, moments: SmootherMoments { mean, cov, lag_one } })
}
