//! EM estimation of the low-rank model.
//!
//! The E-step is the Kalman smoother. The M-step updates β, σ², W, f in
//! closed form and each κ by a golden-section search on log κ, in that
//! order, every update using the freshest co-parameters available.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::golden::golden_section;
use crate::kalman::{filter_with, smooth, FilterOptions, SmootherMoments};
use crate::model::{
    build_loading, priors, stream_rng, BasisCache, ComponentPrior, LatentMesh, ModelParams, ObservationPanel,
    StateLayout,
};

/// Largest |f| kept by the AR update.
pub const F_BOUND: f64 = 1.0 - 1e-6;

const SQRT8: f64 = 2.828_427_124_746_190_3;

/// Uniform ranges for the random start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitRanges {
    pub beta: (f64, f64),
    /// Range for odd-numbered components (1st, 3rd, ...).
    pub f_odd: (f64, f64),
    /// Range for even-numbered components.
    pub f_even: (f64, f64),
    pub w: (f64, f64),
    pub kappa: (f64, f64),
    pub sigma2: (f64, f64),
}

impl Default for InitRanges {
    fn default() -> Self {
        InitRanges {
            beta: (0.0, 1.0),
            f_odd: (0.2, 0.8),
            f_even: (-0.8, -0.2),
            w: (0.2, 2.0),
            kappa: (SQRT8, 7.0 * SQRT8),
            sigma2: (0.1, 2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Given(ModelParams),
    Random(InitRanges),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub kappa_bounds: (f64, f64),
    /// Bracket length at which the search on log κ stops.
    pub kappa_tol: f64,
    pub init: Init,
    pub rng_seed: u64,
    pub filter: FilterOptions,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 300,
            rel_tol: 1e-4,
            kappa_bounds: (0.1 * SQRT8, 20.0 * SQRT8),
            kappa_tol: 1e-3,
            init: Init::Random(InitRanges::default()),
            rng_seed: 0,
            filter: FilterOptions::default(),
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("rel_tol must be positive"));
        }
        let (lo, hi) = self.kappa_bounds;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidParameter("kappa bounds must satisfy 0 < lo < hi"));
        }
        if !(self.kappa_tol > 0.0) {
            return Err(Error::InvalidParameter("kappa_tol must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    /// Observed-data log-likelihood at each E-step.
    pub loglik_trace: Vec<f64>,
    /// Number of M-steps taken.
    pub iterations: usize,
    pub converged: bool,
    /// Smoothed moments at the returned parameters.
    pub moments: SmootherMoments,
    /// Reported component `k` is fitted component `component_order[k]`.
    pub component_order: Vec<usize>,
    /// κ searches whose result was rejected in favour of the previous κ.
    pub kappa_fallbacks: usize,
    /// κ searches that ended on a bound.
    pub kappa_boundary_hits: usize,
    /// Filter steps that needed a ridge on the innovation covariance.
    pub ridge_warnings: usize,
}

/// Output of one E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    pub loglik: f64,
    pub moments: SmootherMoments,
    pub ridged: usize,
}

pub fn e_step(
    params: &ModelParams,
    panel: &ObservationPanel,
    cache: &BasisCache,
    priors: &[ComponentPrior],
    opts: FilterOptions,
) -> Result<EStep> {
    let filtered = filter_with(params, panel, cache, priors, opts)?;
    let moments = smooth(&filtered)?;
    Ok(EStep { loglik: filtered.loglik, moments, ridged: filtered.ridged.len() })
}

/// Per-component smoothed second moments:
/// `S11 = Σ E[z_t z_t']`, `S10 = Σ E[z_t z_{t-1}']`, `S00 = Σ E[z_{t-1} z_{t-1}']`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    pub s11: DMatrix<f64>,
    pub s10: DMatrix<f64>,
    pub s00: DMatrix<f64>,
    pub t_len: usize,
}

impl ComponentStats {
    /// `Σ E[(z_t - f z_{t-1})(z_t - f z_{t-1})']`.
    pub fn innovation_moment(&self, f: f64) -> DMatrix<f64> {
        let mut a = &self.s11 - (&self.s10 + self.s10.transpose()) * f + &self.s00 * (f * f);
        crate::kalman::symmetrize_in_place(&mut a);
        a
    }
}

pub fn component_stats(moments: &SmootherMoments, layout: &StateLayout) -> Vec<ComponentStats> {
    let t_len = moments.t_len();
    (0..layout.q())
        .map(|j| {
            let (o, r) = (layout.offset(j), layout.dim(j));
            let mut s11 = DMatrix::zeros(r, r);
            let mut s10 = DMatrix::zeros(r, r);
            let mut s00 = DMatrix::zeros(r, r);
            for t in 1..=t_len {
                let zt = moments.mean[t].rows(o, r);
                let zp = moments.mean[t - 1].rows(o, r);
                s11 += moments.cov[t].view((o, o), (r, r)) + zt * zt.transpose();
                s10 += moments.lag_one[t].view((o, o), (r, r)) + zt * zp.transpose();
                s00 += moments.cov[t - 1].view((o, o), (r, r)) + zp * zp.transpose();
            }
            ComponentStats { s11, s10, s00, t_len }
        })
        .collect()
}

/// `tr(A B)` for symmetric `A`.
fn trace_prod(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Per-variable `Σ_t [ |y - Xβ - Ψz|² + tr(Ψ P Ψ') ]` and observation counts.
fn residual_moments(params: &ModelParams, moments: &SmootherMoments, panel: &ObservationPanel, cache: &BasisCache) -> (Vec<f64>, Vec<usize>) {
    let p = panel.p();
    let mut ss = vec![0.0; p];
    let mut count = vec![0usize; p];
    for t in 0..panel.t_len() {
        let psi = build_loading(&params.w, cache, t);
        let z = &moments.mean[t + 1];
        let pm = &moments.cov[t + 1];
        let mut k = 0;
        for i in 0..p {
            let cell = panel.cell(i, t);
            let fixed = panel.fixed_effect(i, t, &params.beta);
            for (y, xb) in cell.y.iter().zip(&fixed) {
                let row = psi.row(k);
                let fit: f64 = row.iter().map(|&(c, w)| w * z[c]).sum();
                let r = y - xb - fit;
                let mut quad = 0.0;
                for &(a, wa) in row {
                    for &(b, wb) in row {
                        quad += wa * wb * pm[(a, b)];
                    }
                }
                ss[i] += r * r + quad;
                count[i] += 1;
                k += 1;
            }
        }
    }
    (ss, count)
}

/// Generalised least squares for β given the smoothed states.
pub fn update_beta(moments: &SmootherMoments, panel: &ObservationPanel, cache: &BasisCache, params: &ModelParams) -> Result<DVector<f64>> {
    let b = panel.beta_len();
    let mut lhs = DMatrix::zeros(b, b);
    let mut rhs = DVector::zeros(b);
    for t in 0..panel.t_len() {
        let psi = build_loading(&params.w, cache, t);
        let fit = psi.mul_vec(&moments.mean[t + 1]);
        let mut k = 0;
        for i in 0..panel.p() {
            let s2 = params.sigma2[i];
            // The weight only matters across variables, and β blocks are
            // separate per variable, so a zero variance can use weight one.
            let wt = if s2 > 0.0 { 1.0 / s2 } else { 1.0 };
            let off = panel.beta_offset(i);
            let cell = panel.cell(i, t);
            for (x, y) in cell.x.iter().zip(&cell.y) {
                let r = y - fit[k];
                for (a, xa) in x.iter().enumerate() {
                    rhs[off + a] += wt * xa * r;
                    for (c, xc) in x.iter().enumerate() {
                        lhs[(off + a, off + c)] += wt * xa * xc;
                    }
                }
                k += 1;
            }
        }
    }
    if b == 0 {
        return Ok(DVector::zeros(0));
    }
    let chol = lhs.cholesky().ok_or(Error::SingularNormalEquations)?;
    Ok(chol.solve(&rhs))
}

/// Measurement-error variances from residual second moments.
pub fn update_sigma2(moments: &SmootherMoments, panel: &ObservationPanel, cache: &BasisCache, params: &ModelParams) -> Result<DVector<f64>> {
    let (ss, count) = residual_moments(params, moments, panel, cache);
    let mut out = DVector::zeros(panel.p());
    for i in 0..panel.p() {
        if count[i] == 0 {
            return Err(Error::NoObservationsForVariable(i));
        }
        out[i] = ss[i] / count[i] as f64;
    }
    Ok(out)
}

/// Row-wise loading update `w_i = R_i⁻¹ g_i`.
pub fn update_w(moments: &SmootherMoments, panel: &ObservationPanel, cache: &BasisCache, params: &ModelParams) -> Result<DMatrix<f64>> {
    let layout = cache.layout();
    let (p, q) = (panel.p(), layout.q());
    let mut w = DMatrix::zeros(p, q);
    for i in 0..p {
        let mut g = DVector::zeros(q);
        let mut r = DMatrix::zeros(q, q);
        for t in 0..panel.t_len() {
            let z = &moments.mean[t + 1];
            let pm = &moments.cov[t + 1];
            let cell = panel.cell(i, t);
            let fixed = panel.fixed_effect(i, t, &params.beta);
            for (k, (y, xb)) in cell.y.iter().zip(&fixed).enumerate() {
                let resid = y - xb;
                let rows: Vec<_> = (0..q).map(|j| cache.rows(j, i, t)[k]).collect();
                let a: Vec<f64> =
                    (0..q).map(|j| rows[j].iter().map(|(c, v)| v * z[layout.offset(j) + c]).sum()).collect();
                for j in 0..q {
                    g[j] += resid * a[j];
                    for l in j..q {
                        let mut tr = 0.0;
                        for (cj, vj) in rows[j].iter() {
                            for (cl, vl) in rows[l].iter() {
                                tr += vj * vl * pm[(layout.offset(j) + cj, layout.offset(l) + cl)];
                            }
                        }
                        r[(j, l)] += a[j] * a[l] + tr;
                    }
                }
            }
        }
        for j in 0..q {
            for l in 0..j {
                r[(j, l)] = r[(l, j)];
            }
        }
        let chol = r.cholesky().ok_or(Error::SingularRowSystem(i))?;
        w.set_row(i, &chol.solve(&g).transpose());
    }
    Ok(w)
}

/// AR coefficients `f_j = tr(Q_j S10_j) / tr(Q_j S00_j)`, clamped inside (-1, 1).
pub fn update_f(stats: &[ComponentStats], priors: &[ComponentPrior]) -> Result<DVector<f64>> {
    let mut f = DVector::zeros(stats.len());
    for (j, (s, pr)) in stats.iter().zip(priors).enumerate() {
        let num = trace_prod(&pr.prec, &s.s10);
        let den = trace_prod(&pr.prec, &s.s00);
        if !(den > 0.0) || !num.is_finite() {
            return Err(Error::DegenerateDenominator(j));
        }
        f[j] = (num / den).clamp(-F_BOUND, F_BOUND);
    }
    Ok(f)
}

/// `g(κ) = -T log|Q_κ| + tr(Q_κ A)` with `A` the innovation moment at `f`.
pub fn kappa_objective(prior: &ComponentPrior, stats: &ComponentStats, f: f64) -> f64 {
    -(stats.t_len as f64) * prior.logdet_prec + trace_prod(&prior.prec, &stats.innovation_moment(f))
}

#[derive(Debug, Clone)]
pub struct KappaUpdate {
    pub kappa: f64,
    pub objective: f64,
    /// The minimum sits on a bound of the search interval.
    pub at_boundary: bool,
    pub prior: ComponentPrior,
}

/// Golden-section search of `g` over log κ.
pub fn update_kappa(latent: &LatentMesh, stats: &ComponentStats, f: f64, bounds: (f64, f64), tol: f64) -> Result<KappaUpdate> {
    let (lo, hi) = bounds;
    if !(lo > 0.0 && lo < hi) || !(tol > 0.0) {
        return Err(Error::InvalidParameter("kappa bounds must satisfy 0 < lo < hi"));
    }
    let a = stats.innovation_moment(f);
    let t = stats.t_len as f64;
    let objective = |log_k: f64| match latent.prior(log_k.exp()) {
        Ok(pr) => -t * pr.logdet_prec + trace_prod(&pr.prec, &a),
        Err(_) => f64::NAN,
    };
    let best = golden_section(objective, lo.ln(), hi.ln(), tol);
    if !best.fx.is_finite() {
        return Err(Error::NoInteriorMinimum { component: 0, kappa: best.x.exp() });
    }
    let kappa = best.x.exp();
    let prior = latent.prior(kappa)?;
    Ok(KappaUpdate { kappa, objective: best.fx, at_boundary: best.at_boundary, prior })
}

/// `μ₀ = z₀^T`, `Σ₀ = P₀^T`.
pub fn update_initial(moments: &SmootherMoments) -> (DVector<f64>, DMatrix<f64>) {
    (moments.mean[0].clone(), moments.cov[0].clone())
}

/// Expected complete-data `-2 log L` (up to the `2π` constants) under the
/// given moments, as a function of `params`.
pub fn expected_neg2_loglik(
    params: &ModelParams,
    moments: &SmootherMoments,
    panel: &ObservationPanel,
    cache: &BasisCache,
    priors: &[ComponentPrior],
) -> Result<f64> {
    let layout = cache.layout();
    let chol = params.sigma0.clone().cholesky().ok_or(Error::CholeskyFailure)?;
    let logdet0 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let d0 = &moments.mean[0] - &params.mu0;
    let m0 = &moments.cov[0] + &d0 * d0.transpose();
    let mut total = logdet0 + trace_prod(&chol.inverse(), &m0);

    let (ss, count) = residual_moments(params, moments, panel, cache);
    for i in 0..panel.p() {
        if count[i] > 0 {
            let s2 = params.sigma2[i];
            if !(s2 > 0.0) {
                return Err(Error::InvalidParameter("sigma2 must be positive"));
            }
            total += count[i] as f64 * s2.ln() + ss[i] / s2;
        }
    }
    for (j, s) in component_stats(moments, layout).iter().enumerate() {
        total += kappa_objective(&priors[j], s, params.f[j]);
    }
    Ok(total)
}

/// Random start: draws from `ranges`, `μ₀ = 0` and `Σ₀` the stationary
/// covariance of each AR(1) block.
pub fn random_init(panel: &ObservationPanel, latent: &[LatentMesh], ranges: &InitRanges, seed: u64) -> Result<ModelParams> {
    let draw = draw_init(panel, latent.len(), ranges, seed);
    with_stationary_initial(draw, latent)
}

/// The random part of [`random_init`]; `mu0` and `sigma0` are left empty.
pub fn draw_init(panel: &ObservationPanel, q: usize, ranges: &InitRanges, seed: u64) -> ModelParams {
    let mut rng = stream_rng(seed, 0);
    let mut draw = |(a, b): (f64, f64)| if a < b { rng.random_range(a..b) } else { a };
    let p = panel.p();
    let beta = DVector::from_iterator(panel.beta_len(), (0..panel.beta_len()).map(|_| draw(ranges.beta)));
    let sigma2 = DVector::from_iterator(p, (0..p).map(|_| draw(ranges.sigma2)));
    let f = DVector::from_iterator(q, (0..q).map(|j| draw(if j % 2 == 0 { ranges.f_odd } else { ranges.f_even })));
    let w = DMatrix::from_fn(p, q, |_, _| draw(ranges.w));
    let kappa = DVector::from_iterator(q, (0..q).map(|_| draw(ranges.kappa)));
    ModelParams { beta, sigma2, f, w, kappa, mu0: DVector::zeros(0), sigma0: DMatrix::zeros(0, 0) }
}

/// Fill `mu0` and `sigma0` with the stationary start on the given meshes.
pub fn with_stationary_initial(mut params: ModelParams, latent: &[LatentMesh]) -> Result<ModelParams> {
    let pr = priors(latent, &params.kappa)?;
    let (mu0, sigma0) = stationary_initial(&pr, &params.f);
    params.mu0 = mu0;
    params.sigma0 = sigma0;
    Ok(params)
}

/// Zero mean and block-diagonal `Σ_κ / (1 - f²)`.
pub fn stationary_initial(priors: &[ComponentPrior], f: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut s = crate::kalman::innovation_covariance(priors);
    let mut off = 0;
    for (j, pr) in priors.iter().enumerate() {
        let r = pr.cov.nrows();
        let scale = 1.0 / (1.0 - f[j] * f[j]);
        s.view_mut((off, off), (r, r)).scale_mut(scale);
        off += r;
    }
    (DVector::zeros(s.nrows()), s)
}

/// Fit the model by EM.
pub fn fit(panel: &ObservationPanel, latent: &[LatentMesh], config: &EmConfig) -> Result<FitResult> {
    config.validate()?;
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let meshes: Vec<_> = latent.iter().map(|l| l.mesh.clone()).collect();
    let cache = BasisCache::new(panel, &meshes);
    let mut params = match &config.init {
        Init::Given(p) => p.clone(),
        Init::Random(r) => random_init(panel, latent, r, config.rng_seed)?,
    };
    params.validate(panel, cache.layout())?;
    let mut pr = priors(latent, &params.kappa)?;

    let mut trace = Vec::new();
    let mut kappa_fallbacks = 0;
    let mut kappa_boundary_hits = 0;
    let mut ridge_warnings = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut e = e_step(&params, panel, &cache, &pr, config.filter)?;
    loop {
        trace.push(e.loglik);
        ridge_warnings += e.ridged;
        if let [.., prev, last] = trace[..] {
            if ((last - prev) / prev).abs() < config.rel_tol {
                converged = true;
                break;
            }
        }
        if iterations == config.max_iter {
            break;
        }
        let m = &e.moments;
        params.beta = update_beta(m, panel, &cache, &params)?;
        params.sigma2 = update_sigma2(m, panel, &cache, &params)?.map(|s| s.max(1e-10));
        params.w = update_w(m, panel, &cache, &params)?;
        let stats = component_stats(m, cache.layout());
        params.f = update_f(&stats, &pr)?;
        for j in 0..latent.len() {
            let current = kappa_objective(&pr[j], &stats[j], params.f[j]);
            match update_kappa(&latent[j], &stats[j], params.f[j], config.kappa_bounds, config.kappa_tol) {
                Ok(u) if u.objective <= current => {
                    kappa_boundary_hits += usize::from(u.at_boundary);
                    params.kappa[j] = u.kappa;
                    pr[j] = u.prior;
                }
                _ => kappa_fallbacks += 1,
            }
        }
        let (mu0, sigma0) = update_initial(m);
        params.mu0 = mu0;
        params.sigma0 = sigma0;
        iterations += 1;
        e = e_step(&params, panel, &cache, &pr, config.filter)?;
    }

    let mut moments = e.moments;
    let order = apply_convention(&mut params, &mut moments, cache.layout(), &meshes);
    Ok(FitResult {
        params,
        loglik_trace: trace,
        iterations,
        converged,
        moments,
        component_order: order,
        kappa_fallbacks,
        kappa_boundary_hits,
        ridge_warnings,
    })
}

/// Identifiability convention: the first nonzero entry of each W column is
/// made positive (flipping the matching latent block), then components are
/// sorted by f descending when all latent meshes are identical. Returns the
/// applied order: new component `k` is old component `order[k]`.
pub fn apply_convention(
    params: &mut ModelParams,
    moments: &mut SmootherMoments,
    layout: &StateLayout,
    meshes: &[crate::mesh::Mesh],
) -> Vec<usize> {
    let q = params.q();
    let signs: Vec<f64> = (0..q)
        .map(|j| match params.w.column(j).iter().find(|v| **v != 0.0) {
            Some(v) if *v < 0.0 => -1.0,
            _ => 1.0,
        })
        .collect();
    let mut order: Vec<usize> = (0..q).collect();
    if meshes.windows(2).all(|w| w[0] == w[1]) {
        order.sort_by(|&a, &b| params.f[b].total_cmp(&params.f[a]));
    }
    if signs.iter().all(|s| *s > 0.0) && order.iter().enumerate().all(|(k, &j)| k == j) {
        return order;
    }

    // Old state index for each new index, and the sign applied to it.
    let mut src = Vec::with_capacity(layout.n());
    let mut sgn = Vec::with_capacity(layout.n());
    for &j in &order {
        for c in layout.range(j) {
            src.push(c);
            sgn.push(signs[j]);
        }
    }
    let n = src.len();
    let vec_map = |v: &DVector<f64>| DVector::from_fn(n, |a, _| sgn[a] * v[src[a]]);
    let mat_map = |m: &DMatrix<f64>| DMatrix::from_fn(n, n, |a, b| sgn[a] * sgn[b] * m[(src[a], src[b])]);

    params.w = DMatrix::from_fn(params.p(), q, |i, k| signs[order[k]] * params.w[(i, order[k])]);
    params.f = DVector::from_fn(q, |k, _| params.f[order[k]]);
    params.kappa = DVector::from_fn(q, |k, _| params.kappa[order[k]]);
    params.mu0 = vec_map(&params.mu0);
    params.sigma0 = mat_map(&params.sigma0);
    for v in moments.mean.iter_mut() {
        *v = vec_map(v);
    }
    for m in moments.cov.iter_mut().chain(moments.lag_one.iter_mut()) {
        *m = mat_map(m);
    }
    order
}
