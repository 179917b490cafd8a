#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lrssm_core::mesh::Mesh;
use lrssm_core::model::{priors, BasisCache, ComponentPrior, LatentMesh, ModelParams, ObservationPanel};
use lrssm_core::Point2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn unit_grid(nx: usize, ny: usize) -> Mesh {
    Mesh::regular_grid(0.0, 1.0, 0.0, 1.0, nx, ny).unwrap()
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| normal(rng));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

/// A small model with everything needed to run the filter.
pub struct Instance {
    pub params: ModelParams,
    pub panel: ObservationPanel,
    pub latent: Vec<LatentMesh>,
    pub meshes: Vec<Mesh>,
    pub cache: BasisCache,
    pub priors: Vec<ComponentPrior>,
}

impl Instance {
    pub fn rebuild(&mut self) {
        self.cache = BasisCache::new(&self.panel, &self.meshes);
        self.priors = priors(&self.latent, &self.params.kappa).unwrap();
    }
}

/// Random heterotopic instance: `p` variables, `q` components on small
/// grids (R ≤ 9), `t_len` steps and at most `m_max` observations per step.
pub fn random_instance(seed: u64, p: usize, q: usize, t_len: usize, m_max: usize) -> Instance {
    let mut r = rng(seed);
    let shapes = [(2, 2), (2, 1), (1, 2)];
    let meshes: Vec<Mesh> = (0..q).map(|j| unit_grid(shapes[j % 3].0, shapes[j % 3].1)).collect();
    let latent: Vec<LatentMesh> = meshes.iter().map(|m| LatentMesh::new(m.clone()).unwrap()).collect();
    let n: usize = meshes.iter().map(|m| m.latent_dim()).sum();
    let cov_dims: Vec<usize> = (0..p).map(|_| r.random_range(0..3)).collect();
    let mut panel = ObservationPanel::new(t_len, cov_dims.clone());
    for t in 0..t_len {
        let mut left = m_max;
        for i in 0..p {
            let k = r.random_range(0..=left.min(4));
            left -= k;
            for _ in 0..k {
                let s = Point2::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0));
                let x: Vec<f64> = (0..cov_dims[i]).map(|_| normal(&mut r)).collect();
                let y = 2.0 * normal(&mut r);
                panel.push(i, t, s, y, &x).unwrap();
            }
        }
    }
    let params = ModelParams {
        beta: DVector::from_fn(panel.beta_len(), |_, _| normal(&mut r)),
        sigma2: DVector::from_fn(p, |_, _| r.random_range(0.2..1.5)),
        f: DVector::from_fn(q, |_, _| r.random_range(-0.9..0.9)),
        w: DMatrix::from_fn(p, q, |_, _| normal(&mut r)),
        kappa: DVector::from_fn(q, |_, _| r.random_range(2.0..8.0)),
        mu0: DVector::from_fn(n, |_, _| normal(&mut r)),
        sigma0: random_spd(&mut r, n),
    };
    let cache = BasisCache::new(&panel, &meshes);
    let priors = priors(&latent, &params.kappa).unwrap();
    Instance { params, panel, latent, meshes, cache, priors }
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
