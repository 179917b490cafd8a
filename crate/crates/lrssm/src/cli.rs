//! Subcommands of the `lrssm` binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use lrssm_core::em::{draw_init, e_step, fit, with_stationary_initial, EmConfig, Init, InitRanges};
use lrssm_core::fem::{precision_with, SpdeOptions};
use lrssm_core::mesh::Mesh;
use lrssm_core::model::{priors, BasisCache, LatentMesh, ModelParams, ObservationPanel};
use lrssm_core::predict::{raster_map, validate, BBox, RasterCell, ValidationReport};
use lrssm_core::Point2;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io;
use crate::pipeline::{build_mesh, dedup_sites, BuiltMesh};
use crate::study::{aggregate, rows_to_csv, run_study, StudySpec};

#[derive(Debug, Parser)]
#[command(name = "lrssm", version, about = "Low-rank SPDE state-space model")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Global {
    /// `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Build a mesh from sites and write it with its quality report.
    Mesh {
        /// Also write the precision matrix at `kappa_init` as COO triplets.
        #[arg(long)]
        dump_q: bool,
    },
    /// Simulate a lattice data set and split it into train and test panels.
    Simulate,
    /// Fit the model to a panel by EM.
    Fit,
    /// Raster map of predicted means and standard deviations.
    Predict,
    /// RMSE and R² on the training and test panels.
    Validate,
    /// Monte Carlo study over the scenario grid.
    Study,
}

/// Config file (if any) with the global flags applied on top.
pub fn resolve_config(g: &Global) -> Result<RunConfig> {
    let mut c = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(o) = &g.out {
        c.out = o.clone();
    }
    if g.threads.is_some() {
        c.threads = g.threads;
    }
    c.check()?;
    Ok(c)
}

pub fn run(cli: &Cli) -> Result<()> {
    let c = resolve_config(&cli.global)?;
    match &cli.command {
        Command::Mesh { dump_q } => cmd_mesh(&c, *dump_q || c.dump_q).map(drop),
        Command::Simulate => cmd_simulate(&c),
        Command::Fit => cmd_fit(&c).map(drop),
        Command::Predict => cmd_predict(&c).map(drop),
        Command::Validate => cmd_validate(&c).map(drop),
        Command::Study => cmd_study(&c),
    }
}

fn need<'a>(p: &'a Option<PathBuf>, key: &str, cmd: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| CliError::config(format!("`{cmd}` needs `{key}` in the config")))
}

fn spde_options(c: &RunConfig) -> SpdeOptions {
    SpdeOptions { exact_mass_in_k: c.exact_mass }
}

fn latent_meshes(c: &RunConfig, mesh: &Mesh, q: usize) -> Result<Vec<LatentMesh>> {
    (0..q).map(|_| Ok(LatentMesh::with_options(mesh.clone(), spde_options(c))?)).collect()
}

fn print_quality(b: &BuiltMesh) {
    let q = &b.quality;
    println!(
        "R = {}  vertices = {}  triangles = {}  min angle = {:.2} deg  h = {:.4}",
        q.vertex_count,
        q.total_vertices,
        q.triangle_count,
        q.min_angle.to_degrees(),
        q.max_edge_h
    );
    if !b.angle_target_met {
        eprintln!("warning: smoothing stopped after {} sweeps below the angle target", b.smooth_sweeps);
    }
}

/// Largest number of distinct sites of any one variable.
pub fn sites_per_variable(panel: &ObservationPanel) -> usize {
    (0..panel.p()).map(|i| panel.sites(i).len()).max().unwrap_or(0)
}

/// Sites from `sites`, else the union of the training panel's sites, with
/// the site count `LR` refers to.
fn mesh_sites(c: &RunConfig) -> Result<(Vec<Point2>, usize)> {
    if let Some(p) = &c.sites {
        let s = dedup_sites(&io::read_sites(p)?);
        let n = s.len();
        return Ok((s, n));
    }
    if let Some(p) = &c.panel {
        let panel = io::read_panel(p, None)?;
        return Ok((panel.union_sites(), sites_per_variable(&panel)));
    }
    Err(CliError::config("`mesh` needs `sites` or `panel` in the config"))
}

/// Writes `mesh.txt` (and `q.coo` when asked) to the output directory.
pub fn cmd_mesh(c: &RunConfig, dump_q: bool) -> Result<BuiltMesh> {
    let (sites, m) = mesh_sites(c)?;
    let kappa = c.kappa_init.unwrap_or(InitRanges::default().kappa.0);
    let built = build_mesh(&sites, &c.mesh_spec(m, kappa))?;
    io::write_mesh(&c.out.join("mesh.txt"), &built.mesh)?;
    print_quality(&built);
    if dump_q {
        let latent = LatentMesh::with_options(built.mesh.clone(), spde_options(c))?;
        let prec = precision_with(&latent.mesh, &latent.fem, kappa, latent.opts)?;
        io::write_coo(&c.out.join("q.coo"), prec.q())?;
    }
    Ok(built)
}

/// Writes `train.csv`, `test.csv`, `sites.csv` and `truth.txt`.
pub fn cmd_simulate(c: &RunConfig) -> Result<()> {
    let sc = c.scenarios()[0];
    let truth = c.truth();
    let rep = crate::scenario::generate_with(&sc, &truth, c.z0_mean, c.z0_sd, c.seed)?;
    io::write_panel(&c.out.join("train.csv"), &rep.train)?;
    io::write_panel(&c.out.join("test.csv"), &rep.test)?;
    io::write_sites(&c.out.join("sites.csv"), &rep.train.union_sites())?;
    let mut doc = io::KvDoc::default();
    doc.push("scenario", sc.label());
    doc.push("seed", c.seed);
    io::push_params(&mut doc, &truth);
    doc.push("z0_mean", c.z0_mean);
    doc.push("z0_sd", c.z0_sd);
    io::write_doc(&c.out.join("truth.txt"), &doc, "generating parameters")?;
    println!("{}: {} training and {} test observations", sc.label(), rep.train.total(), rep.test.total());
    Ok(())
}

pub struct FitOutput {
    pub params: ModelParams,
    pub mesh: Mesh,
    pub report: io::KvDoc,
}

/// Mesh from `mesh` or built from the panel, random start, EM. Writes
/// `report.txt` and the mesh used to `mesh.txt`.
pub fn cmd_fit(c: &RunConfig) -> Result<FitOutput> {
    let start = Instant::now();
    let panel = io::read_panel(need(&c.panel, "panel", "fit")?, None)?;
    let ranges = InitRanges::default();
    let draw = draw_init(&panel, c.q, &ranges, c.seed);
    let mesh = match &c.mesh {
        Some(p) => io::read_mesh(p)?,
        None => {
            let sites = panel.union_sites();
            let kmin = draw.kappa.iter().copied().fold(f64::INFINITY, f64::min);
            let built = build_mesh(&sites, &c.mesh_spec(sites_per_variable(&panel), kmin))?;
            print_quality(&built);
            built.mesh
        }
    };
    let latent = latent_meshes(c, &mesh, c.q)?;
    let init = with_stationary_initial(draw, &latent)?;
    let cfg = EmConfig { init: Init::Given(init), ..c.em_config() };
    let result = fit(&panel, &latent, &cfg)?;
    let report = io::fit_report(&result, start.elapsed().as_secs_f64());
    io::write_doc(&c.out.join("report.txt"), &report, "fit report")?;
    io::write_mesh(&c.out.join("mesh.txt"), &mesh)?;
    println!(
        "{} after {} iterations, loglik {:.6}",
        if result.converged { "converged" } else { "stopped" },
        result.iterations,
        result.loglik_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(FitOutput { params: result.params, mesh, report })
}

/// Fitted parameters, mesh and training panel, with the smoother rerun at
/// the fitted parameters.
struct Fitted {
    params: ModelParams,
    meshes: Vec<Mesh>,
    panel: ObservationPanel,
    moments: lrssm_core::kalman::SmootherMoments,
}

fn load_fitted(c: &RunConfig, cmd: &str) -> Result<Fitted> {
    let report_path = need(&c.report, "report", cmd)?;
    let params = io::params_from_doc(report_path, &io::KvDoc::read(report_path)?)?;
    let mesh = io::read_mesh(need(&c.mesh, "mesh", cmd)?)?;
    let panel = io::read_panel(need(&c.panel, "panel", cmd)?, None)?;
    let latent = latent_meshes(c, &mesh, params.q())?;
    let meshes: Vec<Mesh> = latent.iter().map(|l| l.mesh.clone()).collect();
    let cache = BasisCache::new(&panel, &meshes);
    params.validate(&panel, cache.layout())?;
    let pr = priors(&latent, &params.kappa)?;
    let e = e_step(&params, &panel, &cache, &pr, c.em_config().filter)?;
    Ok(Fitted { params, meshes, panel, moments: e.moments })
}

fn core_bbox(mesh: &Mesh) -> BBox {
    let core = mesh.latent_vertices();
    let fold = |f: fn(&Point2) -> f64, init: f64, g: fn(f64, f64) -> f64| core.iter().map(f).fold(init, g);
    BBox {
        x0: fold(|p| p.x, f64::INFINITY, f64::min),
        x1: fold(|p| p.x, f64::NEG_INFINITY, f64::max),
        y0: fold(|p| p.y, f64::INFINITY, f64::min),
        y1: fold(|p| p.y, f64::NEG_INFINITY, f64::max),
    }
}

/// Writes `raster.csv`.
pub fn cmd_predict(c: &RunConfig) -> Result<Vec<RasterCell>> {
    let f = load_fitted(c, "predict")?;
    let bbox = c.bbox.unwrap_or_else(|| core_bbox(&f.meshes[0]));
    let mut cells = raster_map(&f.params, &f.moments, &f.meshes, bbox, c.nx, c.ny, c.time, c.covariates.as_deref())?;
    if c.add_noise {
        for cell in &mut cells {
            if let Some((_, sd)) = &mut cell.value {
                for (s, v) in sd.iter_mut().zip(f.params.sigma2.iter()) {
                    *s = (*s * *s + v).sqrt();
                }
            }
        }
    }
    io::write_raster(&c.out.join("raster.csv"), &cells, f.params.p())?;
    let na = cells.iter().filter(|c| c.value.is_none()).count();
    println!("{} cells written, {na} outside the mesh", cells.len());
    Ok(cells)
}

/// Writes `validation.csv`.
pub fn cmd_validate(c: &RunConfig) -> Result<ValidationReport> {
    let f = load_fitted(c, "validate")?;
    let test = io::read_panel(need(&c.test_panel, "test_panel", "validate")?, Some(f.panel.t_len()))?;
    let rep = validate(&f.params, &f.moments, &f.panel, &test, &f.meshes);
    let mut s = String::from("var,rmse_train,r2_train,n_train,rmse_test,r2_test,n_test\n");
    let mut line = |name: String, a: &lrssm_core::predict::Fit, b: &lrssm_core::predict::Fit| {
        s.push_str(&format!("{name},{},{},{},{},{},{}\n", a.rmse, a.r2, a.n, b.rmse, b.r2, b.n));
    };
    for (i, (a, b)) in rep.train.iter().zip(&rep.test).enumerate() {
        line((i + 1).to_string(), a, b);
    }
    line("all".into(), &rep.pooled_train, &rep.pooled_test);
    io::write_text(&c.out.join("validation.csv"), &s)?;
    print!("{s}");
    Ok(rep)
}

/// Writes `study.csv`; exits with the partial-study code when any
/// replicate failed.
pub fn cmd_study(c: &RunConfig) -> Result<()> {
    let spec = StudySpec {
        scenarios: c.scenarios(),
        replicates: c.replicates,
        seed: c.seed,
        em: c.em_config(),
        truth: c.truth(),
        z0_mean: c.z0_mean,
        z0_sd: c.z0_sd,
        threads: c.threads,
    };
    let results = run_study(&spec)?;
    let rows: Vec<_> = results.iter().flat_map(|r| aggregate(r, &spec.truth)).collect();
    io::write_text(&c.out.join("study.csv"), &rows_to_csv(&rows))?;
    let failed: usize = results.iter().map(|r| r.failed.len()).sum();
    let total = results.len() * spec.replicates;
    println!("{} of {total} replicates succeeded", total - failed);
    if failed > 0 {
        return Err(CliError::PartialStudy { failed, total });
    }
    Ok(())
}
