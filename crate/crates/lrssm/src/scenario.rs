//! The lattice simulation design: three variables, two latent components,
//! random training sites per variable and the rest of the lattice held out.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;

use lrssm_core::em::{draw_init, fit, with_stationary_initial, EmConfig, FitResult, Init, InitRanges};
use lrssm_core::model::{simulate_exact, stream_rng, LatentMesh, ModelParams, ObservationPanel, SimulationDesign};
use lrssm_core::predict::{validate, ValidationReport};
use lrssm_core::{Point2, Result};

use crate::pipeline::{build_mesh, two_ranges, BuiltMesh, MeshSpec};

/// Stream id for the training-site draw of variable `i` is `SPLIT + i`.
const SPLIT: u64 = 401;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    /// Training sites per variable.
    pub m: usize,
    pub t_len: usize,
    /// Mesh vertices as a fraction of `m`.
    pub lr: f64,
    /// Lattice side; the lattice is `grid × grid` with spacing `1/grid`.
    pub grid: usize,
}

impl Scenario {
    pub fn new(m: usize, t_len: usize, lr: f64) -> Self {
        Scenario { m, t_len, lr, grid: 25 }
    }

    /// Mesh size `R = round(LR·m)`.
    pub fn rank(&self) -> usize {
        (self.lr * self.m as f64).round() as usize
    }

    pub fn label(&self) -> String {
        format!("m{}_T{}_LR{}", self.m, self.t_len, (self.lr * 100.0).round())
    }
}

/// Generating parameters; `mu0` and `sigma0` are unused (the initial
/// state is iid N(1, 1) at every site).
pub fn true_params() -> ModelParams {
    let s8 = 8f64.sqrt();
    ModelParams {
        beta: DVector::from_vec(vec![1.0, 2.0, -1.0]),
        sigma2: DVector::from_vec(vec![0.5, 1.5, 1.0]),
        f: DVector::from_vec(vec![0.85, -0.5]),
        w: DMatrix::from_row_slice(3, 2, &[0.5, 1.0, 0.5, 0.25, 0.2, 0.8]),
        kappa: DVector::from_vec(vec![7.0 * s8, 2.0 * s8]),
        mu0: DVector::zeros(0),
        sigma0: DMatrix::zeros(0, 0),
    }
}

/// Points `(iδ, jδ)` for `i, j < n`, `δ = 1/n`.
pub fn lattice(n: usize) -> Vec<Point2> {
    let d = 1.0 / n as f64;
    (0..n).flat_map(|j| (0..n).map(move |i| Point2::new(i as f64 * d, j as f64 * d))).collect()
}

#[derive(Debug, Clone)]
pub struct Replicate {
    pub train: ObservationPanel,
    pub test: ObservationPanel,
    pub train_sites: Vec<Vec<Point2>>,
    pub truth: ModelParams,
}

/// Simulate one data set on the whole lattice from [`true_params`] and
/// split it.
pub fn generate(sc: &Scenario, seed: u64) -> Result<Replicate> {
    generate_with(sc, &true_params(), 1.0, 1.0, seed)
}

/// As [`generate`] with explicit parameters and initial-state moments.
pub fn generate_with(sc: &Scenario, truth: &ModelParams, z0_mean: f64, z0_sd: f64, seed: u64) -> Result<Replicate> {
    let truth = truth.clone();
    let grid = lattice(sc.grid);
    let p = truth.p();
    let design = SimulationDesign { sites: vec![grid.clone(); p], t_len: sc.t_len, cov_dims: vec![1; p] };
    let sim = simulate_exact(&truth, &design, z0_mean, z0_sd, seed)?;
    let chosen: Vec<std::collections::HashSet<(u64, u64)>> = (0..p)
        .map(|i| {
            let mut rng = stream_rng(seed, SPLIT + i as u64);
            sample(&mut rng, grid.len(), sc.m.min(grid.len()))
                .into_iter()
                .map(|k| (grid[k].x.to_bits(), grid[k].y.to_bits()))
                .collect()
        })
        .collect();
    let is_train = |i: usize, s: Point2| chosen[i].contains(&(s.x.to_bits(), s.y.to_bits()));
    let train = sim.panel.filter(is_train);
    let test = sim.panel.filter(|i, s| !is_train(i, s));
    let train_sites = (0..p).map(|i| train.sites(i)).collect();
    Ok(Replicate { train, test, train_sites, truth })
}

/// Everything a replicate fit produces.
#[derive(Debug, Clone)]
pub struct ReplicateFit {
    pub fit: FitResult,
    pub mesh: BuiltMesh,
    pub validation: ValidationReport,
    pub runtime_s: f64,
}

/// Mesh settings used for a scenario: the union of training sites
/// decimated to `R`, smoothed unless `LR = 100%`, buffered by two ranges of
/// the smallest starting κ.
pub fn scenario_mesh_spec(sc: &Scenario, kappa_init: &DVector<f64>) -> MeshSpec {
    let kmin = kappa_init.iter().copied().fold(f64::INFINITY, f64::min);
    MeshSpec { target: Some(sc.rank()), smooth: sc.lr < 1.0, buffer: two_ranges(kmin), ..MeshSpec::default() }
}

/// Random start, mesh, EM fit and validation for one replicate.
pub fn fit_replicate(sc: &Scenario, rep: &Replicate, config: &EmConfig, seed: u64) -> Result<ReplicateFit> {
    let start = Instant::now();
    let q = rep.truth.q();
    let ranges = match &config.init {
        Init::Random(r) => *r,
        Init::Given(_) => InitRanges::default(),
    };
    let draw = match &config.init {
        Init::Given(p) => p.clone(),
        Init::Random(_) => draw_init(&rep.train, q, &ranges, seed),
    };
    let sites: Vec<Point2> = rep.train_sites.iter().flatten().copied().collect();
    let built = build_mesh(&sites, &scenario_mesh_spec(sc, &draw.kappa))?;
    let latent: Vec<LatentMesh> = (0..q).map(|_| LatentMesh::new(built.mesh.clone())).collect::<Result<_>>()?;
    let init = if draw.mu0.is_empty() { with_stationary_initial(draw, &latent)? } else { draw };
    let cfg = EmConfig { init: Init::Given(init), ..config.clone() };
    let result = fit(&rep.train, &latent, &cfg)?;
    let meshes: Vec<_> = latent.iter().map(|l| l.mesh.clone()).collect();
    let validation = validate(&result.params, &result.moments, &rep.train, &rep.test, &meshes);
    Ok(ReplicateFit { fit: result, mesh: built, validation, runtime_s: start.elapsed().as_secs_f64() })
}
