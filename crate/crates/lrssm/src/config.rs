//! Run configuration: `key = value` text plus command-line overrides.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use lrssm_core::em::{EmConfig, Init, InitRanges};
use lrssm_core::kalman::{FilterOptions, UpdateForm};
use lrssm_core::model::ModelParams;
use lrssm_core::predict::{BBox, RasterTime};

use crate::error::{CliError, Result};
use crate::io::{parse_matrix, parse_vec, KvDoc};
use crate::pipeline::{two_ranges, MeshSpec};
use crate::scenario::{true_params, Scenario};

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    // run
    "seed", "threads", "out",
    // inputs
    "sites", "panel", "test_panel", "mesh", "report",
    // mesh
    "lr", "target_r", "theta_min", "max_sweeps", "smooth", "buffer", "kappa_init", "ring_spacing", "ring_growth",
    "exact_mass", "dump_q",
    // EM
    "max_iter", "rel_tol", "kappa_min", "kappa_max", "kappa_tol", "filter_form", "q",
    // scenarios
    "m", "t_len", "grid", "replicates",
    // generating parameters
    "beta", "sigma2", "f", "w", "kappa", "z0_mean", "z0_sd",
    // prediction
    "nx", "ny", "bbox", "time", "add_noise", "covariates",
];

const INPUTS: &[&str] = &["sites", "panel", "test_panel", "mesh", "report"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: PathBuf,

    pub sites: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub test_panel: Option<PathBuf>,
    pub mesh: Option<PathBuf>,
    pub report: Option<PathBuf>,

    pub lr: Vec<f64>,
    pub target_r: Option<usize>,
    pub theta_min: f64,
    pub max_sweeps: usize,
    /// `None` smooths exactly when the mesh was decimated.
    pub smooth: Option<bool>,
    /// `None` uses two ranges at `kappa_init`.
    pub buffer: Option<f64>,
    pub kappa_init: Option<f64>,
    pub ring_spacing: Option<f64>,
    pub ring_growth: f64,
    pub exact_mass: bool,
    pub dump_q: bool,

    pub max_iter: usize,
    pub rel_tol: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub kappa_tol: f64,
    pub filter_form: UpdateForm,
    pub q: usize,

    pub m: Vec<usize>,
    pub t_len: Vec<usize>,
    pub grid: usize,
    pub replicates: usize,

    pub truth: ModelParams,
    pub z0_mean: f64,
    pub z0_sd: f64,

    pub nx: usize,
    pub ny: usize,
    pub bbox: Option<BBox>,
    pub time: RasterTime,
    pub add_noise: bool,
    pub covariates: Option<Vec<Vec<f64>>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let em = EmConfig::default();
        RunConfig {
            seed: 1,
            threads: None,
            out: PathBuf::from("out"),
            sites: None,
            panel: None,
            test_panel: None,
            mesh: None,
            report: None,
            lr: vec![1.0],
            target_r: None,
            theta_min: MeshSpec::default().theta_min,
            max_sweeps: MeshSpec::default().max_sweeps,
            smooth: None,
            buffer: None,
            kappa_init: None,
            ring_spacing: None,
            ring_growth: MeshSpec::default().ring_growth,
            exact_mass: false,
            dump_q: false,
            max_iter: em.max_iter,
            rel_tol: em.rel_tol,
            kappa_min: em.kappa_bounds.0,
            kappa_max: em.kappa_bounds.1,
            kappa_tol: em.kappa_tol,
            filter_form: UpdateForm::Auto,
            q: 2,
            m: vec![100],
            t_len: vec![50],
            grid: 25,
            replicates: 20,
            truth: true_params(),
            z0_mean: 1.0,
            z0_sd: 1.0,
            nx: 50,
            ny: 50,
            bbox: None,
            time: RasterTime::Average,
            add_noise: false,
            covariates: None,
        }
    }
}

struct Reader<'a> {
    doc: &'a KvDoc,
    src: &'a Path,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.doc.get(key)
    }

    fn bad(&self, key: &str, what: &str) -> CliError {
        CliError::config(format!("{}: `{key}` {what}", self.src.display()))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key).map(|v| v.parse().map_err(|_| self.bad(key, &format!("has invalid value `{v}`")))).transpose()
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.raw(key)
            .map(|v| match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(self.bad(key, "must be true or false")),
            })
            .transpose()
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                let items: Vec<&str> = v.split([',', ' ']).filter(|s| !s.is_empty()).collect();
                if items.is_empty() {
                    return Err(self.bad(key, "is empty"));
                }
                items.iter().map(|s| s.parse().map_err(|_| self.bad(key, &format!("has invalid item `{s}`")))).collect()
            })
            .transpose()
    }

    fn vector(&self, key: &str) -> Result<Option<DVector<f64>>> {
        self.raw(key)
            .map(|v| parse_vec(self.src, key, &v.replace(',', " ")).map(DVector::from_vec))
            .transpose()
            .map_err(|e| self.bad(key, &e.to_string()))
    }
}

impl RunConfig {
    /// Read and check a config file. Relative paths are taken from the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let doc = KvDoc::read(path).map_err(|e| match e {
            CliError::Format { path, msg } => CliError::config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_doc(&doc, &base, path)
    }

    pub fn from_doc(doc: &KvDoc, base: &Path, src: &Path) -> Result<Self> {
        for (k, _) in &doc.entries {
            if !KEYS.contains(&k.as_str()) {
                return Err(CliError::config(format!("{}: unknown key `{k}`", src.display())));
            }
        }
        let r = Reader { doc, src };
        let mut c = RunConfig::default();
        let resolve = |p: &str| if Path::new(p).is_absolute() { PathBuf::from(p) } else { base.join(p) };

        if let Some(v) = r.parse("seed")? {
            c.seed = v;
        }
        c.threads = r.parse("threads")?;
        if let Some(v) = r.raw("out") {
            c.out = resolve(v);
        }
        for key in INPUTS {
            if let Some(v) = r.raw(key) {
                let p = resolve(v);
                if !p.exists() {
                    return Err(r.bad(key, &format!("points to missing file {}", p.display())));
                }
                *c.input_mut(key) = Some(p);
            }
        }

        if let Some(v) = r.list("lr")? {
            c.lr = v;
        }
        c.target_r = r.parse("target_r")?;
        if let Some(v) = r.parse("theta_min")? {
            c.theta_min = f64::to_radians(v);
        }
        if let Some(v) = r.parse("max_sweeps")? {
            c.max_sweeps = v;
        }
        c.smooth = r.bool("smooth")?;
        c.buffer = r.parse("buffer")?;
        c.kappa_init = r.parse("kappa_init")?;
        c.ring_spacing = r.parse("ring_spacing")?;
        if let Some(v) = r.parse("ring_growth")? {
            c.ring_growth = v;
        }
        c.exact_mass = r.bool("exact_mass")?.unwrap_or(false);
        c.dump_q = r.bool("dump_q")?.unwrap_or(false);

        if let Some(v) = r.parse("max_iter")? {
            c.max_iter = v;
        }
        if let Some(v) = r.parse("rel_tol")? {
            c.rel_tol = v;
        }
        if let Some(v) = r.parse("kappa_min")? {
            c.kappa_min = v;
        }
        if let Some(v) = r.parse("kappa_max")? {
            c.kappa_max = v;
        }
        if let Some(v) = r.parse("kappa_tol")? {
            c.kappa_tol = v;
        }
        if let Some(v) = r.raw("filter_form") {
            c.filter_form = match v {
                "auto" => UpdateForm::Auto,
                "covariance" => UpdateForm::Covariance,
                "information" => UpdateForm::Information,
                _ => return Err(r.bad("filter_form", "must be auto, covariance or information")),
            };
        }
        if let Some(v) = r.parse("q")? {
            c.q = v;
        }

        if let Some(v) = r.list("m")? {
            c.m = v;
        }
        if let Some(v) = r.list("t_len")? {
            c.t_len = v;
        }
        if let Some(v) = r.parse("grid")? {
            c.grid = v;
        }
        if let Some(v) = r.parse("replicates")? {
            c.replicates = v;
        }

        if let Some(v) = r.vector("beta")? {
            c.truth.beta = v;
        }
        if let Some(v) = r.vector("sigma2")? {
            c.truth.sigma2 = v;
        }
        if let Some(v) = r.vector("f")? {
            c.truth.f = v;
        }
        if let Some(v) = r.raw("w") {
            c.truth.w = parse_matrix(src, "w", v).map_err(|e| r.bad("w", &e.to_string()))?;
        }
        if let Some(v) = r.vector("kappa")? {
            c.truth.kappa = v;
        }
        if let Some(v) = r.parse("z0_mean")? {
            c.z0_mean = v;
        }
        if let Some(v) = r.parse("z0_sd")? {
            c.z0_sd = v;
        }

        if let Some(v) = r.parse("nx")? {
            c.nx = v;
        }
        if let Some(v) = r.parse("ny")? {
            c.ny = v;
        }
        if let Some(v) = r.list::<f64>("bbox")? {
            if v.len() != 4 {
                return Err(r.bad("bbox", "needs x0 x1 y0 y1"));
            }
            c.bbox = Some(BBox { x0: v[0], x1: v[1], y0: v[2], y1: v[3] });
        }
        if let Some(v) = r.raw("time") {
            c.time = match v {
                "average" => RasterTime::Average,
                t => RasterTime::At(t.parse().map_err(|_| r.bad("time", "must be a time index or `average`"))?),
            };
        }
        c.add_noise = r.bool("add_noise")?.unwrap_or(false);
        if let Some(v) = r.raw("covariates") {
            // Variables separated by `;`, entries by spaces or commas.
            let rows = v
                .split(';')
                .map(|g| parse_vec(src, "covariates", &g.replace(',', " ")))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| r.bad("covariates", &e.to_string()))?;
            c.covariates = Some(rows);
        }
        c.check()?;
        Ok(c)
    }

    fn input_mut(&mut self, key: &str) -> &mut Option<PathBuf> {
        match key {
            "sites" => &mut self.sites,
            "panel" => &mut self.panel,
            "test_panel" => &mut self.test_panel,
            "mesh" => &mut self.mesh,
            _ => &mut self.report,
        }
    }

    /// Value checks that do not depend on the command.
    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(CliError::config(m.to_owned()));
        if self.lr.iter().any(|&l| !(l > 0.0 && l <= 1.0)) {
            return fail("lr values must lie in (0, 1]");
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1");
        }
        if !(self.ring_growth >= 1.0) {
            return fail("ring_growth must be at least 1");
        }
        if self.kappa_init.is_some_and(|k| !(k > 0.0)) {
            return fail("kappa_init must be positive");
        }
        if self.m.contains(&0) || self.t_len.contains(&0) || self.grid == 0 || self.q == 0 {
            return fail("m, t_len, grid and q must be positive");
        }
        if self.nx == 0 || self.ny == 0 {
            return fail("nx and ny must be positive");
        }
        let t = &self.truth;
        let p = t.sigma2.len();
        if t.beta.len() != p || t.w.nrows() != p || t.w.ncols() != t.f.len() || t.kappa.len() != t.f.len() {
            return fail("beta, sigma2, f, w and kappa have inconsistent sizes");
        }
        Ok(())
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            kappa_bounds: (self.kappa_min, self.kappa_max),
            kappa_tol: self.kappa_tol,
            init: Init::Random(InitRanges::default()),
            rng_seed: self.seed,
            filter: FilterOptions { form: self.filter_form, keep_innovation_cov: false },
        }
    }

    /// Mesh settings for data with `m` sites per variable. Without
    /// `target_r` the first `lr` entry sets `R = round(LR·m)`; smoothing
    /// defaults to on when `R < m`. Without `buffer` or `kappa_init` the
    /// buffer is two ranges at `kappa_fallback`.
    pub fn mesh_spec(&self, m: usize, kappa_fallback: f64) -> MeshSpec {
        let target = self.target_r.unwrap_or_else(|| (self.lr[0] * m as f64).round() as usize);
        let kappa = self.kappa_init.unwrap_or(kappa_fallback);
        MeshSpec {
            target: Some(target),
            smooth: self.smooth.unwrap_or(target < m),
            theta_min: self.theta_min,
            max_sweeps: self.max_sweeps,
            buffer: self.buffer.unwrap_or_else(|| two_ranges(kappa)),
            ring_spacing: self.ring_spacing,
            ring_growth: self.ring_growth,
        }
    }

    /// Every `(m, T, LR)` combination, `m` slowest.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &m in &self.m {
            for &t in &self.t_len {
                for &lr in &self.lr {
                    out.push(Scenario { m, t_len: t, lr, grid: self.grid });
                }
            }
        }
        out
    }

    /// Generating parameters with empty `mu0`/`sigma0`.
    pub fn truth(&self) -> ModelParams {
        ModelParams { mu0: DVector::zeros(0), sigma0: DMatrix::zeros(0, 0), ..self.truth.clone() }
    }
}
