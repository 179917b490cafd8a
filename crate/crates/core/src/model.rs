//! Model parameters, observation panels, basis caches and simulators.
//!
//! The latent state stacks the q components, component `j` living on the
//! `R_j` non-auxiliary vertices of its own mesh. Observations are grouped in
//! cells `(variable i, time t)`; a cell holds the sites, the values and an
//! `m × b_i` covariate block. Times are `0..T` internally (the first
//! observed time), with the initial state `z_0` one step before.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fem::{assemble, matern_cov, precision_with, unit_variance_scale, FemMatrices, SpdeOptions};
use crate::geometry::Point2;
use crate::mesh::{BasisRow, Mesh};
use crate::sparse::SparseCholesky;

/// Parameter set of the low-rank state-space model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Regression coefficients stacked by variable.
    pub beta: DVector<f64>,
    /// Measurement-error variance per variable.
    pub sigma2: DVector<f64>,
    /// Autoregressive coefficient per latent component.
    pub f: DVector<f64>,
    /// `p × q` loading matrix.
    pub w: DMatrix<f64>,
    /// SPDE scale per latent component.
    pub kappa: DVector<f64>,
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

impl ModelParams {
    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    pub fn q(&self) -> usize {
        self.w.ncols()
    }

    /// Check dimensions against a panel and a latent layout, and the
    /// parameter constraints.
    pub fn validate(&self, panel: &ObservationPanel, layout: &StateLayout) -> Result<()> {
        let (p, q) = (self.p(), self.q());
        if p != panel.p() || self.sigma2.len() != p {
            return Err(Error::DimensionMismatch("variable count"));
        }
        if self.beta.len() != panel.beta_len() {
            return Err(Error::DimensionMismatch("beta length"));
        }
        if self.f.len() != q || self.kappa.len() != q || layout.q() != q {
            return Err(Error::DimensionMismatch("latent component count"));
        }
        let n = layout.n();
        if self.mu0.len() != n || self.sigma0.nrows() != n || self.sigma0.ncols() != n {
            return Err(Error::DimensionMismatch("initial state dimension"));
        }
        if self.f.iter().any(|f| !(f.abs() < 1.0)) {
            return Err(Error::InvalidParameter("|f| must be below 1"));
        }
        if self.sigma2.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidParameter("sigma2 must be non-negative"));
        }
        if self.kappa.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::InvalidParameter("kappa must be positive"));
        }
        Ok(())
    }
}

/// Offsets of the latent components inside the stacked state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl StateLayout {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0;
        for &d in &dims {
            offsets.push(acc);
            acc += d;
        }
        offsets.push(acc);
        StateLayout { dims, offsets }
    }

    pub fn from_meshes(meshes: &[Mesh]) -> Self {
        Self::new(meshes.iter().map(Mesh::latent_dim).collect())
    }

    pub fn q(&self) -> usize {
        self.dims.len()
    }

    /// Total state dimension.
    pub fn n(&self) -> usize {
        self.offsets[self.dims.len()]
    }

    pub fn dim(&self, j: usize) -> usize {
        self.dims[j]
    }

    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    pub fn range(&self, j: usize) -> core::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    /// Per-state-entry component value, e.g. the diagonal of `F`.
    pub fn expand(&self, per_component: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n());
        for j in 0..self.q() {
            out.rows_mut(self.offset(j), self.dim(j)).fill(per_component[j]);
        }
        out
    }
}

/// Observations of one variable at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelCell {
    pub sites: Vec<Point2>,
    pub y: Vec<f64>,
    /// One row of covariates per observation.
    pub x: Vec<Vec<f64>>,
}

impl PanelCell {
    fn empty() -> Self {
        PanelCell { sites: Vec::new(), y: Vec::new(), x: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Heterotopic multivariate panel; missing observations are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel {
    p: usize,
    t_len: usize,
    cov_dims: Vec<usize>,
    cells: Vec<PanelCell>,
}

impl ObservationPanel {
    /// Empty panel for `cov_dims.len()` variables over `t_len` times.
    pub fn new(t_len: usize, cov_dims: Vec<usize>) -> Self {
        let p = cov_dims.len();
        ObservationPanel { p, t_len, cov_dims, cells: vec![PanelCell::empty(); p * t_len] }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn cov_dims(&self) -> &[usize] {
        &self.cov_dims
    }

    /// Length of the stacked coefficient vector.
    pub fn beta_len(&self) -> usize {
        self.cov_dims.iter().sum()
    }

    /// Position of variable `i`'s coefficients in the stacked vector.
    pub fn beta_offset(&self, i: usize) -> usize {
        self.cov_dims[..i].iter().sum()
    }

    pub fn push(&mut self, i: usize, t: usize, site: Point2, y: f64, x: &[f64]) -> Result<()> {
        if i >= self.p || t >= self.t_len {
            return Err(Error::DimensionMismatch("observation index outside panel"));
        }
        if x.len() != self.cov_dims[i] {
            return Err(Error::DimensionMismatch("covariate row length"));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) || !site.is_finite() {
            return Err(Error::InvalidParameter("non-finite observation"));
        }
        let cell = &mut self.cells[i * self.t_len + t];
        cell.sites.push(site);
        cell.y.push(y);
        cell.x.push(x.to_vec());
        Ok(())
    }

    pub fn cell(&self, i: usize, t: usize) -> &PanelCell {
        &self.cells[i * self.t_len + t]
    }

    /// Observation count at time `t` over all variables.
    pub fn m_t(&self, t: usize) -> usize {
        (0..self.p).map(|i| self.cell(i, t).len()).sum()
    }

    pub fn count(&self, i: usize) -> usize {
        (0..self.t_len).map(|t| self.cell(i, t).len()).sum()
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(PanelCell::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Distinct sites of variable `i`, in order of first appearance.
    pub fn sites(&self, i: usize) -> Vec<Point2> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for t in 0..self.t_len {
            for &s in &self.cell(i, t).sites {
                if seen.insert(site_key(s), ()).is_none() {
                    out.push(s);
                }
            }
        }
        out
    }

    /// Distinct sites over all variables.
    pub fn union_sites(&self) -> Vec<Point2> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for i in 0..self.p {
            for s in self.sites(i) {
                if seen.insert(site_key(s), ()).is_none() {
                    out.push(s);
                }
            }
        }
        out
    }

    /// Panel keeping only the observations for which `keep(i, site)` holds.
    pub fn filter<F: Fn(usize, Point2) -> bool>(&self, keep: F) -> Self {
        let mut out = ObservationPanel::new(self.t_len, self.cov_dims.clone());
        for i in 0..self.p {
            for t in 0..self.t_len {
                let c = self.cell(i, t);
                let dst = &mut out.cells[i * self.t_len + t];
                for k in 0..c.len() {
                    if keep(i, c.sites[k]) {
                        dst.sites.push(c.sites[k]);
                        dst.y.push(c.y[k]);
                        dst.x.push(c.x[k].clone());
                    }
                }
            }
        }
        out
    }

    /// `X β` for the observations of cell `(i, t)`.
    pub fn fixed_effect(&self, i: usize, t: usize, beta: &DVector<f64>) -> Vec<f64> {
        let off = self.beta_offset(i);
        self.cell(i, t).x.iter().map(|row| row.iter().enumerate().map(|(k, x)| x * beta[off + k]).sum()).collect()
    }
}

pub(crate) fn site_key(s: Point2) -> (u64, u64) {
    (s.x.to_bits(), s.y.to_bits())
}

/// Basis rows of every observation site against every component mesh.
#[derive(Debug, Clone)]
pub struct BasisCache {
    layout: StateLayout,
    t_len: usize,
    /// `rows[j][i * T + t][k]`.
    rows: Vec<Vec<Vec<BasisRow>>>,
}

impl BasisCache {
    /// Sites outside a mesh's non-auxiliary region are moved to its nearest
    /// point before evaluation.
    pub fn new(panel: &ObservationPanel, meshes: &[Mesh]) -> Self {
        let layout = StateLayout::from_meshes(meshes);
        let mut rows = Vec::with_capacity(meshes.len());
        for mesh in meshes {
            let mut memo: BTreeMap<(u64, u64), BasisRow> = BTreeMap::new();
            let mut per_cell = Vec::with_capacity(panel.p * panel.t_len);
            for i in 0..panel.p {
                for t in 0..panel.t_len {
                    let cell = panel.cell(i, t);
                    per_cell.push(
                        cell.sites
                            .iter()
                            .map(|&s| *memo.entry(site_key(s)).or_insert_with(|| mesh.basis_row_nearest(s)))
                            .collect(),
                    );
                }
            }
            rows.push(per_cell);
        }
        BasisCache { layout, t_len: panel.t_len, rows }
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    /// Rows of `Ψ_{ij,t}` (component `j`, variable `i`, time `t`).
    pub fn rows(&self, j: usize, i: usize, t: usize) -> &[BasisRow] {
        &self.rows[j][i * self.t_len + t]
    }
}

/// Sparse `m_t × n` loading matrix `Ψ_t^w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingMatrix {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl LoadingMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, k: usize) -> &[(usize, f64)] {
        &self.rows[k]
    }

    pub fn mul_vec(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.iter().map(|&(c, w)| w * z[c]).sum()))
    }

    /// `A Ψ'` for a dense `n × n` matrix `A`.
    pub fn right_mul_t(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(a.nrows(), self.rows.len());
        for (k, r) in self.rows.iter().enumerate() {
            let mut col = out.column_mut(k);
            for &(c, w) in r {
                col.axpy(w, &a.column(c), 1.0);
            }
        }
        out
    }

    /// `Ψ B` for a dense `n × k` matrix `B`.
    pub fn left_mul(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows.len(), b.ncols());
        for (k, r) in self.rows.iter().enumerate() {
            for &(c, w) in r {
                for col in 0..b.ncols() {
                    out[(k, col)] += w * b[(c, col)];
                }
            }
        }
        out
    }

    /// `Ψ' diag(d) Ψ`.
    pub fn weighted_gram(&self, d: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.ncols, self.ncols);
        for (k, r) in self.rows.iter().enumerate() {
            for &(a, wa) in r {
                for &(b, wb) in r {
                    out[(a, b)] += d[k] * wa * wb;
                }
            }
        }
        out
    }

    /// `Ψ' v`.
    pub fn tr_mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.ncols);
        for (k, r) in self.rows.iter().enumerate() {
            for &(c, w) in r {
                out[c] += w * v[k];
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows.len(), self.ncols);
        for (k, r) in self.rows.iter().enumerate() {
            for &(c, w) in r {
                out[(k, c)] += w;
            }
        }
        out
    }
}

/// `Ψ_t^w`: rows stacked by variable, block `(i, j)` equal to `w_ij Ψ_{ij,t}`.
pub fn build_loading(w: &DMatrix<f64>, cache: &BasisCache, t: usize) -> LoadingMatrix {
    let layout = cache.layout();
    let (p, q) = (w.nrows(), w.ncols());
    let mut rows = Vec::new();
    for i in 0..p {
        let m = if q > 0 { cache.rows(0, i, t).len() } else { 0 };
        for k in 0..m {
            let mut row = Vec::with_capacity(3 * q);
            for j in 0..q {
                let wij = w[(i, j)];
                if wij == 0.0 {
                    continue;
                }
                let off = layout.offset(j);
                for (c, v) in cache.rows(j, i, t)[k].iter() {
                    row.push((off + c, wij * v));
                }
            }
            rows.push(row);
        }
    }
    LoadingMatrix { ncols: layout.n(), rows }
}

/// Mesh plus its FEM matrices, from which per-κ priors are built.
#[derive(Debug, Clone)]
pub struct LatentMesh {
    pub mesh: Mesh,
    pub fem: FemMatrices,
    pub opts: SpdeOptions,
}

impl LatentMesh {
    pub fn new(mesh: Mesh) -> Result<Self> {
        Self::with_options(mesh, SpdeOptions::default())
    }

    pub fn with_options(mesh: Mesh, opts: SpdeOptions) -> Result<Self> {
        let fem = assemble(&mesh)?;
        Ok(LatentMesh { mesh, fem, opts })
    }

    pub fn prior(&self, kappa: f64) -> Result<ComponentPrior> {
        ComponentPrior::new(self, kappa)
    }
}

/// Innovation covariance `Σ_κ = Q_κ⁻¹` of one component on its latent
/// vertices, with unit marginal variance scaling.
#[derive(Debug, Clone)]
pub struct ComponentPrior {
    pub kappa: f64,
    pub cov: DMatrix<f64>,
    pub prec: DMatrix<f64>,
    /// `log|Q_κ|`.
    pub logdet_prec: f64,
}

impl ComponentPrior {
    pub fn new(latent: &LatentMesh, kappa: f64) -> Result<Self> {
        let p = precision_with(&latent.mesh, &latent.fem, kappa, latent.opts)?;
        let cov = p.marginal_covariance()? * unit_variance_scale(kappa);
        Self::from_covariance(kappa, cov)
    }

    pub fn from_covariance(kappa: f64, cov: DMatrix<f64>) -> Result<Self> {
        let chol = cov.clone().cholesky().ok_or(Error::CholeskyFailure)?;
        let logdet_cov = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let prec = chol.inverse();
        let prec = (&prec + prec.transpose()) * 0.5;
        Ok(ComponentPrior { kappa, cov, prec, logdet_prec: -logdet_cov })
    }
}

/// Priors for every component at the given κ values.
pub fn priors(latent: &[LatentMesh], kappa: &DVector<f64>) -> Result<Vec<ComponentPrior>> {
    latent.iter().zip(kappa.iter()).map(|(l, &k)| l.prior(k)).collect()
}

/// Cholesky factor of `a + δI`, trying δ = 0 then 1e-10 up to 1e-6.
pub fn jittered_cholesky(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    let mut jitter = 0.0;
    loop {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(c) = b.cholesky() {
            return Ok((c.unpack(), jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > 1e-6 * 1.000_001 {
            return Err(Error::CholeskyFailure);
        }
    }
}

/// Dense Matérn covariance matrix over `sites`.
pub fn matern_matrix(sites: &[Point2], kappa: f64) -> DMatrix<f64> {
    let n = sites.len();
    DMatrix::from_fn(n, n, |a, b| matern_cov(sites[a].dist(sites[b]), kappa))
}

/// Named random streams derived from one master seed.
pub mod streams {
    pub const ETA: u64 = 1;
    pub const EPS: u64 = 101;
    pub const Z0: u64 = 201;
    pub const COVARIATES: u64 = 301;
}

/// Generator for stream `stream` of the master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Sites, horizon and covariate layout of a simulation.
#[derive(Debug, Clone)]
pub struct SimulationDesign {
    /// Observation sites per variable (observed at every time).
    pub sites: Vec<Vec<Point2>>,
    pub t_len: usize,
    /// Covariate count per variable; covariates are iid N(0, 1).
    pub cov_dims: Vec<usize>,
}

/// Simulated panel plus the hidden latent path.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub panel: ObservationPanel,
    /// Locations of the latent truth: union of sites (exact simulator) or
    /// latent vertices of component `j` (low-rank simulator).
    pub latent_sites: Vec<Vec<Point2>>,
    /// `latent[j][t]` for `t = 0..=T`, with `t = 0` the initial state.
    pub latent: Vec<Vec<DVector<f64>>>,
}

fn draw_covariates(design: &SimulationDesign, seed: u64) -> Vec<Vec<Vec<Vec<f64>>>> {
    // [i][t][k] -> row
    (0..design.sites.len())
        .map(|i| {
            let mut rng = stream_rng(seed, streams::COVARIATES + i as u64);
            (0..design.t_len)
                .map(|_| {
                    (0..design.sites[i].len())
                        .map(|_| (0..design.cov_dims[i]).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn assemble_panel(
    params: &ModelParams,
    design: &SimulationDesign,
    seed: u64,
    latent_at: impl Fn(usize, usize, usize, usize) -> f64,
) -> Result<ObservationPanel> {
    let p = design.sites.len();
    let mut panel = ObservationPanel::new(design.t_len, design.cov_dims.clone());
    let cov = draw_covariates(design, seed);
    for i in 0..p {
        let mut rng = stream_rng(seed, streams::EPS + i as u64);
        let sd = params.sigma2[i].sqrt();
        let off = panel.beta_offset(i);
        for t in 0..design.t_len {
            for (k, &s) in design.sites[i].iter().enumerate() {
                let x = &cov[i][t][k];
                let fixed: f64 = x.iter().enumerate().map(|(c, v)| v * params.beta[off + c]).sum();
                let latent: f64 = (0..params.q()).map(|j| params.w[(i, j)] * latent_at(j, i, k, t)).sum();
                let noise: f64 = rng.sample::<f64, _>(StandardNormal);
                panel.push(i, t, s, fixed + latent + sd * noise, x)?;
            }
        }
    }
    Ok(panel)
}

/// Simulate the continuous-space model: per component, innovations from
/// the dense Matérn covariance over the union of sites, AR(1) in time, and
/// the initial state iid `N(z0_mean, z0_sd²)` at each site.
pub fn simulate_exact(
    params: &ModelParams,
    design: &SimulationDesign,
    z0_mean: f64,
    z0_sd: f64,
    seed: u64,
) -> Result<Simulated> {
    if design.sites.iter().all(Vec::is_empty) {
        return Err(Error::EmptyPanel);
    }
    let mut union = Vec::new();
    let mut index = BTreeMap::new();
    for s in design.sites.iter().flatten() {
        index.entry(site_key(*s)).or_insert_with(|| {
            union.push(*s);
            union.len() - 1
        });
    }
    let n = union.len();
    let q = params.q();
    let mut latent = Vec::with_capacity(q);
    for j in 0..q {
        let (l, _) = jittered_cholesky(&matern_matrix(&union, params.kappa[j]))?;
        let mut rng = stream_rng(seed, streams::ETA + j as u64);
        let mut z0_rng = stream_rng(seed, streams::Z0 + j as u64);
        let z0 = DVector::from_iterator(n, (0..n).map(|_| z0_mean + z0_sd * z0_rng.sample::<f64, _>(StandardNormal)));
        let mut path = Vec::with_capacity(design.t_len + 1);
        path.push(z0);
        for t in 1..=design.t_len {
            let eta = &l * normal_vec(&mut rng, n);
            let next = &path[t - 1] * params.f[j] + eta;
            path.push(next);
        }
        latent.push(path);
    }
    let pos: Vec<Vec<usize>> = design.sites.iter().map(|s| s.iter().map(|x| index[&site_key(*x)]).collect()).collect();
    let panel = assemble_panel(params, design, seed, |j, i, k, t| latent[j][t + 1][pos[i][k]])?;
    Ok(Simulated { panel, latent_sites: vec![union; q], latent })
}

/// Simulate the low-rank model on the given meshes: innovations
/// `N(0, Q_κ⁻¹)` at the latent vertices (drawn on the extended mesh by a
/// sparse solve), initial state `N(μ₀, Σ₀)`, observations through the
/// piecewise-linear basis.
pub fn simulate_lowrank(params: &ModelParams, latent: &[LatentMesh], design: &SimulationDesign, seed: u64) -> Result<Simulated> {
    let q = params.q();
    if latent.len() != q {
        return Err(Error::DimensionMismatch("one mesh per latent component"));
    }
    let layout = StateLayout::from_meshes(&latent.iter().map(|l| l.mesh.clone()).collect::<Vec<_>>());
    if params.mu0.len() != layout.n() {
        return Err(Error::DimensionMismatch("initial state dimension"));
    }
    let (l0, _) = jittered_cholesky(&params.sigma0)?;
    let mut z0_rng = stream_rng(seed, streams::Z0);
    let z0 = &params.mu0 + &l0 * normal_vec(&mut z0_rng, layout.n());

    let mut paths = Vec::with_capacity(q);
    for (j, lm) in latent.iter().enumerate() {
        let kappa = params.kappa[j];
        let p = precision_with(&lm.mesh, &lm.fem, kappa, lm.opts)?;
        let chol = SparseCholesky::factor(p.k())?;
        let sqrt_c: Vec<f64> = p.c_lumped().iter().map(|c| c.sqrt()).collect();
        let tau = unit_variance_scale(kappa).sqrt();
        let idx = lm.mesh.interior_index();
        let mut rng = stream_rng(seed, streams::ETA + j as u64);
        let mut path = Vec::with_capacity(design.t_len + 1);
        path.push(DVector::from_iterator(layout.dim(j), z0.rows(layout.offset(j), layout.dim(j)).iter().copied()));
        for t in 1..=design.t_len {
            let w: Vec<f64> = (0..sqrt_c.len()).map(|k| sqrt_c[k] * rng.sample::<f64, _>(StandardNormal)).collect();
            let x = chol.solve(&w);
            let eta = DVector::from_iterator(idx.len(), idx.iter().map(|&v| x[v] * tau));
            let next = &path[t - 1] * params.f[j] + eta;
            path.push(next);
        }
        paths.push(path);
    }
    let rows: Vec<Vec<BasisRow>> = latent
        .iter()
        .map(|lm| design.sites.iter().flatten().map(|&s| lm.mesh.basis_row_nearest(s)).collect())
        .collect();
    let starts: Vec<usize> = design.sites.iter().scan(0, |acc, s| {
        let here = *acc;
        *acc += s.len();
        Some(here)
    }).collect();
    let panel =
        assemble_panel(params, design, seed, |j, i, k, t| rows[j][starts[i] + k].dot(paths[j][t + 1].as_slice()))?;
    let latent_sites = latent.iter().map(|l| l.mesh.latent_vertices()).collect();
    Ok(Simulated { panel, latent_sites, latent: paths })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_offsets() {
        let l = StateLayout::new(vec![3, 2]);
        assert_eq!(l.n(), 5);
        assert_eq!(l.range(1), 3..5);
        let e = l.expand(&DVector::from_vec(vec![0.5, -1.0]));
        assert_eq!(e.as_slice(), &[0.5, 0.5, 0.5, -1.0, -1.0]);
    }

    #[test]
    fn jitter_rescues_singular() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let (_, j) = jittered_cholesky(&a).unwrap();
        assert!(j > 0.0 && j <= 1e-6);
        assert!(jittered_cholesky(&(-DMatrix::<f64>::identity(2, 2))).is_err());
    }
}
