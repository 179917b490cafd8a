//! Monte Carlo study: replicates per scenario in parallel, aggregated into
//! bias and RMSE per scalar parameter.

use std::fmt::Write as _;

use rayon::prelude::*;

use lrssm_core::em::EmConfig;
use lrssm_core::model::ModelParams;
use lrssm_core::predict::ValidationReport;

use crate::error::{CliError, Result};
use crate::scenario::{fit_replicate, generate_with, Scenario};

pub const HEADER: &str = "scenario,param,bias,rmse,rmse_train,rmse_test,runtime_s,n_ok";

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub scenarios: Vec<Scenario>,
    pub replicates: usize,
    /// Replicate `r` uses seed `seed + r`.
    pub seed: u64,
    pub em: EmConfig,
    pub truth: ModelParams,
    pub z0_mean: f64,
    pub z0_sd: f64,
    pub threads: Option<usize>,
}

/// What is kept of one successful replicate.
#[derive(Debug, Clone)]
pub struct ReplicateSummary {
    pub seed: u64,
    pub params: ModelParams,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub validation: ValidationReport,
    pub runtime_s: f64,
    /// Non-auxiliary mesh vertices.
    pub mesh_r: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub ok: Vec<ReplicateSummary>,
    pub failed: Vec<(u64, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub scenario: String,
    pub param: String,
    pub bias: f64,
    pub rmse: f64,
    pub rmse_train: f64,
    pub rmse_test: f64,
    pub runtime_s: f64,
    pub n_ok: usize,
}

/// Scalar parameters in table order with their names.
pub fn scalar_params(p: &ModelParams) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut put = |name: &str, v: &[f64]| {
        for (k, x) in v.iter().enumerate() {
            out.push((format!("{name}_{}", k + 1), *x));
        }
    };
    put("beta", p.beta.as_slice());
    put("sigma2", p.sigma2.as_slice());
    put("f", p.f.as_slice());
    put("kappa", p.kappa.as_slice());
    for i in 0..p.w.nrows() {
        for j in 0..p.w.ncols() {
            out.push((format!("w_{}{}", i + 1, j + 1), p.w[(i, j)]));
        }
    }
    out
}

pub fn run_replicate(sc: &Scenario, spec: &StudySpec, r: usize) -> Result<ReplicateSummary> {
    let seed = spec.seed + r as u64;
    let rep = generate_with(sc, &spec.truth, spec.z0_mean, spec.z0_sd, seed)?;
    let em = EmConfig { rng_seed: seed, ..spec.em.clone() };
    let out = fit_replicate(sc, &rep, &em, seed)?;
    Ok(ReplicateSummary {
        seed,
        params: out.fit.params,
        loglik_trace: out.fit.loglik_trace,
        iterations: out.fit.iterations,
        converged: out.fit.converged,
        validation: out.validation,
        runtime_s: out.runtime_s,
        mesh_r: out.mesh.quality.vertex_count,
    })
}

/// Run every scenario. Failed replicates are recorded and skipped.
pub fn run_study(spec: &StudySpec) -> Result<Vec<ScenarioResult>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = spec.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    let results = pool.install(|| {
        spec.scenarios
            .iter()
            .map(|sc| {
                let runs: Vec<(usize, Result<ReplicateSummary>)> =
                    (0..spec.replicates).into_par_iter().map(|r| (r, run_replicate(sc, spec, r))).collect();
                let mut ok = Vec::new();
                let mut failed = Vec::new();
                for (r, res) in runs {
                    match res {
                        Ok(s) => ok.push(s),
                        Err(e) => {
                            eprintln!("{} replicate {r}: {e}", sc.label());
                            failed.push((spec.seed + r as u64, e.to_string()));
                        }
                    }
                }
                ScenarioResult { scenario: *sc, ok, failed }
            })
            .collect()
    });
    Ok(results)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Bias `mean(θ̂ − θ)` and RMSE `sqrt(mean((θ̂ − θ)²))` per scalar
/// parameter. The RMSE and runtime columns repeat the scenario means of the
/// pooled train/test RMSE and the wall time.
pub fn aggregate(res: &ScenarioResult, truth: &ModelParams) -> Vec<StudyRow> {
    let label = res.scenario.label();
    let n_ok = res.ok.len();
    let rmse_train = mean(res.ok.iter().map(|s| s.validation.pooled_train.rmse));
    let rmse_test = mean(res.ok.iter().map(|s| s.validation.pooled_test.rmse));
    let runtime_s = mean(res.ok.iter().map(|s| s.runtime_s));
    let est: Vec<Vec<(String, f64)>> = res.ok.iter().map(|s| scalar_params(&s.params)).collect();
    scalar_params(truth)
        .into_iter()
        .enumerate()
        .map(|(k, (name, th))| {
            let errs: Vec<f64> = est.iter().map(|e| e[k].1 - th).collect();
            StudyRow {
                scenario: label.clone(),
                param: name,
                bias: mean(errs.iter().copied()),
                rmse: mean(errs.iter().map(|e| e * e)).sqrt(),
                rmse_train,
                rmse_test,
                runtime_s,
                n_ok,
            }
        })
        .collect()
}

pub fn rows_to_csv(rows: &[StudyRow]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.scenario, r.param, r.bias, r.rmse, r.rmse_train, r.rmse_test, r.runtime_s, r.n_ok
        );
    }
    s
}
