//! Acceptance criteria 1 to 9, one PASS/FAIL line each. Runs as a plain
//! binary so the lines are printed as they are reached.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lrssm::config::RunConfig;
use lrssm::io;
use lrssm::scenario::{generate_with, true_params, Scenario};
use lrssm::study::{run_study, ScenarioResult, StudySpec};
use lrssm_core::fem::{assemble, element_matrices, matern_cov, precision};
use lrssm_core::kalman::{dense_oracle, filter, smooth};
use lrssm_core::mesh::{extend_boundary_graded, Mesh};
use lrssm_core::model::{priors, BasisCache, LatentMesh, ModelParams, ObservationPanel};
use lrssm_core::Point2;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, title: &str, secs: f64, o: &Outcome) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n} {tag} [{title}] {} ({secs:.1} s)", o.detail);
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn correlation(cov: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt()
}

// ---- 1 ----

fn fem_element_oracles() -> Outcome {
    let (a, b, c) = (Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0));
    let area = 0.5;
    // Mass: A/12 with 2 on the diagonal. Stiffness: A ∇φ_i·∇φ_j with
    // ∇φ = (-1,-1), (1,0), (0,1); equivalently -cot(θ_k)/2 off the diagonal.
    let grads = [(-1.0, -1.0), (1.0, 0.0), (0.0, 1.0)];
    let mass_ref = |i: usize, j: usize| area / 12.0 * if i == j { 2.0 } else { 1.0 };
    let stiff_ref = |i: usize, j: usize| {
        let (gi, gj): ((f64, f64), (f64, f64)) = (grads[i], grads[j]);
        area * (gi.0 * gj.0 + gi.1 * gj.1)
    };
    let cot = |t: f64| 1.0 / t.tan();
    let right = std::f64::consts::FRAC_PI_2;
    let quarter = std::f64::consts::FRAC_PI_4;
    // Edge (1,2) faces the right angle at 0; edges (0,1), (0,2) face 45°.
    let cot_ref = [(1, 2, -0.5 * cot(right)), (0, 1, -0.5 * cot(quarter)), (0, 2, -0.5 * cot(quarter))];

    let (m, k) = element_matrices(a, b, c).expect("non-degenerate");
    let mesh = Mesh::from_triangles(vec![a, b, c], vec![[0, 1, 2]]).unwrap();
    let fem = assemble(&mesh).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((m[i][j] - mass_ref(i, j)).abs()).max((k[i][j] - stiff_ref(i, j)).abs());
            worst = worst.max((fem.c.get(i, j) - mass_ref(i, j)).abs()).max((fem.g.get(i, j) - stiff_ref(i, j)).abs());
        }
    }
    for (i, j, v) in cot_ref {
        worst = worst.max((k[i][j] - v).abs()).max((fem.g.get(i, j) - v).abs());
    }
    Outcome { pass: worst <= 1e-12, detail: format!("max deviation {worst:.2e} (tol 1e-12)") }
}

// ---- 2 ----

fn interior_correlation_error(n: usize, kappa: f64) -> f64 {
    let h = 1.0 / n as f64;
    let core = Mesh::regular_grid(0.0, 1.0, 0.0, 1.0, n, n).unwrap();
    let mesh = extend_boundary_graded(&core, 2.0 * 8f64.sqrt() / kappa, h, 1.3).unwrap();
    let cov = precision(&mesh, &assemble(&mesh).unwrap(), kappa).unwrap().marginal_covariance().unwrap();
    let pts = mesh.latent_vertices();
    let mut worst: f64 = 0.0;
    for i in 0..pts.len() {
        for j in 0..i {
            worst = worst.max((correlation(&cov, i, j) - matern_cov(pts[i].dist(pts[j]), kappa)).abs());
        }
    }
    worst
}

fn spde_accuracy_trend() -> Outcome {
    let kappa = 2.0 * 8f64.sqrt();
    let errs: Vec<f64> = [8, 16, 32].iter().map(|&n| interior_correlation_error(n, kappa)).collect();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass: monotone && errs[2] < 0.05,
        detail: format!("max |corr error| at h=1/8,1/16,1/32: {:.4} {:.4} {:.4} (finest < 0.05, decreasing)", errs[0], errs[1], errs[2]),
    }
}

// ---- 3 ----

fn random_spd(r: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| normal(r));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.1
}

/// Heterotopic instance with at most 8 observations per step, T ≤ 5 and
/// at most 9 latent vertices per component.
fn kalman_instance(seed: u64) -> (ModelParams, ObservationPanel, BasisCache, Vec<lrssm_core::model::ComponentPrior>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let p = 1 + seed as usize % 3;
    let q = 1 + (seed as usize / 3) % 2;
    let t_len = 1 + seed as usize % 5;
    let shapes = [(2, 2), (2, 1)];
    let meshes: Vec<Mesh> =
        (0..q).map(|j| Mesh::regular_grid(0.0, 1.0, 0.0, 1.0, shapes[j].0, shapes[j].1).unwrap()).collect();
    let latent: Vec<LatentMesh> = meshes.iter().map(|m| LatentMesh::new(m.clone()).unwrap()).collect();
    let n: usize = meshes.iter().map(Mesh::latent_dim).sum();
    let cov_dims: Vec<usize> = (0..p).map(|_| r.random_range(0..3)).collect();
    let mut panel = ObservationPanel::new(t_len, cov_dims.clone());
    for t in 0..t_len {
        let mut left = 8usize;
        for (i, &d) in cov_dims.iter().enumerate() {
            let k = r.random_range(0..=left.min(4));
            left -= k;
            for _ in 0..k {
                let s = Point2::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0));
                let x: Vec<f64> = (0..d).map(|_| normal(&mut r)).collect();
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
    let pr = priors(&latent, &params.kappa).unwrap();
    (params, panel, cache, pr)
}

fn kalman_exactness() -> Outcome {
    let (mut d_ll, mut d_mom): (f64, f64) = (0.0, 0.0);
    for seed in 0..20 {
        let (params, panel, cache, pr) = kalman_instance(1000 + seed);
        let f = filter(&params, &panel, &cache, &pr).unwrap();
        let s = smooth(&f).unwrap();
        let o = dense_oracle(&params, &panel, &cache, &pr).unwrap();
        d_ll = d_ll.max((f.loglik - o.loglik).abs());
        for t in 0..s.mean.len() {
            d_mom = d_mom.max((&s.mean[t] - &o.moments.mean[t]).amax()).max((&s.cov[t] - &o.moments.cov[t]).amax());
        }
        for t in 1..s.mean.len() {
            d_mom = d_mom.max((&s.lag_one[t] - &o.moments.lag_one[t]).amax());
        }
    }
    Outcome {
        pass: d_ll <= 1e-8 && d_mom <= 1e-7,
        detail: format!("20 instances: max |Δloglik| {d_ll:.2e} (tol 1e-8), max moment diff {d_mom:.2e} (tol 1e-7)"),
    }
}

// ---- 4, 5, 6 ----

fn study(lr: f64, replicates: usize) -> ScenarioResult {
    let c = RunConfig::default();
    let spec = StudySpec {
        scenarios: vec![Scenario::new(100, 50, lr)],
        replicates,
        seed: 2024,
        em: c.em_config(),
        truth: true_params(),
        z0_mean: 1.0,
        z0_sd: 1.0,
        threads: None,
    };
    run_study(&spec).unwrap().remove(0)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn em_monotonicity(full: &ScenarioResult) -> Outcome {
    let runs: Vec<_> = full.ok.iter().take(10).collect();
    let mut worst_drop: f64 = 0.0;
    for r in &runs {
        for w in r.loglik_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    let secs: f64 = runs.iter().map(|r| r.runtime_s).sum();
    Outcome {
        pass: runs.len() == 10 && worst_drop <= 1e-8 && secs < 600.0,
        detail: format!(
            "{} fits, largest loglik decrease {worst_drop:.2e} (tol 1e-8), {secs:.0} s total (< 600 s)",
            runs.len()
        ),
    }
}

fn table1(full: &ScenarioResult) -> Outcome {
    let truth = true_params();
    let n = full.ok.len();
    let rmse_test = mean(full.ok.iter().map(|r| r.validation.pooled_test.rmse));
    let bias = |get: &dyn Fn(&ModelParams) -> f64| mean(full.ok.iter().map(|r| get(&r.params) - get(&truth)));
    let beta_bias: Vec<f64> = (0..3).map(|i| bias(&|p: &ModelParams| p.beta[i])).collect();
    let s2_bias: Vec<f64> = (0..3).map(|i| bias(&|p: &ModelParams| p.sigma2[i])).collect();
    let paper = [0.160, 0.278, 0.121];
    let s2_ok = s2_bias.iter().zip(paper).all(|(b, r)| *b > 0.0 && *b >= r / 2.0 && *b <= 2.0 * r);
    let beta_ok = beta_bias.iter().all(|b| b.abs() <= 0.02);
    let secs: f64 = full.ok.iter().map(|r| r.runtime_s).sum();
    Outcome {
        pass: n == 20 && (1.13..=1.33).contains(&rmse_test) && beta_ok && s2_ok && secs <= 7200.0,
        detail: format!(
            "{n}/20 fits; mean RMSE_test {rmse_test:.3} (in [1.13, 1.33]); bias(beta) {:+.4} {:+.4} {:+.4} (|.| <= 0.02); \
             bias(sigma2) {:+.3} {:+.3} {:+.3} (positive, within x2 of 0.160 0.278 0.121); {secs:.0} s",
            beta_bias[0], beta_bias[1], beta_bias[2], s2_bias[0], s2_bias[1], s2_bias[2]
        ),
    }
}

fn low_rank(full: &ScenarioResult, half: &ScenarioResult) -> Outcome {
    let r_full = mean(full.ok.iter().map(|r| r.validation.pooled_test.rmse));
    let r_half = mean(half.ok.iter().map(|r| r.validation.pooled_test.rmse));
    let t_full = mean(full.ok.iter().map(|r| r.runtime_s));
    let t_half = mean(half.ok.iter().map(|r| r.runtime_s));
    let rel = (r_half / r_full - 1.0).abs();
    let drop = 1.0 - t_half / t_full;
    Outcome {
        pass: rel <= 0.05 && drop >= 0.40,
        detail: format!(
            "RMSE_test {r_half:.3} vs {r_full:.3} ({:.1}% apart, <= 5%); runtime per fit {t_half:.1} s vs {t_full:.1} s ({:.0}% drop, >= 40%)",
            100.0 * rel,
            100.0 * drop
        ),
    }
}

// ---- 7 ----

/// Monte Carlo mean of ‖y_t − y_t^R‖² for t = 1..=T on a regular mesh of
/// side `n`. Both processes share parameters and innovations: each η_t is
/// one draw of the Matérn field jointly at the sites and mesh vertices,
/// used exactly at the sites and through the basis for `y^R`. Noise and
/// fixed effects cancel in the difference.
fn observable_gap(n: usize, sites: &[Point2], params: &ModelParams, t_len: usize, reps: usize, seed: u64) -> Vec<f64> {
    let mesh = Mesh::regular_grid(0.0, 1.0, 0.0, 1.0, n, n).unwrap();
    let verts = mesh.latent_vertices();
    let ns = sites.len();
    let pts: Vec<Point2> = sites.iter().chain(&verts).copied().collect();
    let rows: Vec<Vec<(usize, f64)>> = sites.iter().map(|&s| mesh.basis_row(s).unwrap().iter().collect()).collect();
    let q = params.q();
    let chols: Vec<DMatrix<f64>> = (0..q)
        .map(|j| {
            let k = params.kappa[j];
            let c = DMatrix::from_fn(pts.len(), pts.len(), |a, b| matern_cov(pts[a].dist(pts[b]), k))
                + DMatrix::identity(pts.len(), pts.len()) * 1e-10;
            c.cholesky().expect("Matérn covariance is positive definite").l()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; t_len + 1];
    for _ in 0..reps {
        let mut x: Vec<DVector<f64>> = (0..q)
            .map(|j| {
                let z = DVector::from_fn(pts.len(), |_, _| normal(&mut rng));
                &chols[j] * z / (1.0 - params.f[j] * params.f[j]).sqrt()
            })
            .collect();
        for t in 0..=t_len {
            if t > 0 {
                for j in 0..q {
                    let z = DVector::from_fn(pts.len(), |_, _| normal(&mut rng));
                    x[j] = &x[j] * params.f[j] + &chols[j] * z;
                }
            }
            let mut sq = 0.0;
            for (s, row) in rows.iter().enumerate() {
                let d: Vec<f64> = (0..q).map(|j| x[j][s] - row.iter().map(|&(v, w)| w * x[j][ns + v]).sum::<f64>()).collect();
                for i in 0..params.p() {
                    let e: f64 = (0..q).map(|j| params.w[(i, j)] * d[j]).sum();
                    sq += e * e;
                }
            }
            acc[t] += sq / reps as f64;
        }
    }
    acc
}

fn observable_bound() -> Outcome {
    let params = true_params();
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let sites: Vec<Point2> = (0..30).map(|_| Point2::new(r.random_range(0.05..0.95), r.random_range(0.05..0.95))).collect();
    let mut ratios = Vec::new();
    let mut levels = Vec::new();
    for (k, n) in [4, 8, 16].into_iter().enumerate() {
        let g = observable_gap(n, &sites, &params, 50, 200, 70 + k as u64);
        ratios.push(g[50] / g[10]);
        levels.push(mean(g[1..].iter().copied()));
    }
    let bounded = ratios.iter().all(|&x| x <= 1.5);
    let shrinking = levels.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        pass: bounded && shrinking,
        detail: format!(
            "E|y_t - y_t^R|^2 averaged over t at h=1/4,1/8,1/16: {:.4} {:.4} {:.4} (decreasing); t=50/t=10 ratios {:.3} {:.3} {:.3} (<= 1.5)",
            levels[0], levels[1], levels[2], ratios[0], ratios[1], ratios[2]
        ),
    }
}

// ---- 8 ----

fn boundary_folding() -> Outcome {
    let kappa = 8.0;
    let two_ranges = 2.0 * 8f64.sqrt() / kappa;
    // h = 0.025 keeps the discretisation error well below the tolerance.
    let strip = Mesh::regular_grid(0.0, 2.0, 0.0, 0.1, 80, 4).unwrap();
    // (max error over all strip pairs, max error over pairs touching an end)
    let errors = |mesh: &Mesh| {
        let cov = precision(mesh, &assemble(mesh).unwrap(), kappa).unwrap().marginal_covariance().unwrap();
        let pts = mesh.latent_vertices();
        let (mut all, mut edge): (f64, f64) = (0.0, 0.0);
        for i in 0..pts.len() {
            for j in 0..i {
                let e = (correlation(&cov, i, j) - matern_cov(pts[i].dist(pts[j]), kappa)).abs();
                all = all.max(e);
                if pts[i].x.min(pts[j].x) < 0.1 || pts[i].x.max(pts[j].x) > 1.9 {
                    edge = edge.max(e);
                }
            }
        }
        (all, edge)
    };
    let buffered = errors(&extend_boundary_graded(&strip, two_ranges, 0.025, 1.3).unwrap());
    let plain = errors(&strip);
    Outcome {
        pass: buffered.0 <= 0.05 && plain.1 > 0.05,
        detail: format!(
            "buffered max |corr error| {:.4} (<= 0.05); unbuffered at end-adjacent pairs {:.4} (> 0.05)",
            buffered.0, plain.1
        ),
    }
}

// ---- 9 ----

fn panel_ingestion() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let rep = generate_with(&Scenario { m: 40, t_len: 20, lr: 1.0, grid: 12 }, &true_params(), 1.0, 1.0, 99).unwrap();
    let full = io::panel_to_string(&rep.train);
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut lines = full.lines();
    let mut text = format!("{}\n", lines.next().unwrap());
    let (mut kept, mut total) = (0usize, 0usize);
    for l in lines {
        total += 1;
        if r.random_range(0.0..1.0) >= 0.3 {
            text.push_str(l);
            text.push('\n');
            kept += 1;
        }
    }
    fs::write(dir.path().join("panel.csv"), text).unwrap();
    fs::write(dir.path().join("fit.cfg"), "panel = panel.csv\nout = out\nseed = 4\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_lrssm"))
        .args(["fit", "--config"])
        .arg(dir.path().join("fit.cfg"))
        .output()
        .unwrap();
    let report = io::KvDoc::read(&dir.path().join("out/report.txt"));
    let ll = report.as_ref().ok().and_then(|d| d.get("loglik")).and_then(|v| v.parse::<f64>().ok());
    let ok = out.status.success() && ll.is_some_and(f64::is_finite);
    Outcome {
        pass: ok,
        detail: format!(
            "3 variables, {kept}/{total} rows kept ({:.0}% missing); exit {:?}, final loglik {}",
            100.0 * (1.0 - kept as f64 / total as f64),
            out.status.code(),
            ll.map_or("none".into(), |v| format!("{v:.3}"))
        ),
    }
}

fn timed<F: FnOnce() -> Outcome>(f: F) -> (Outcome, f64) {
    let start = Instant::now();
    let o = f();
    (o, start.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    // Respect libtest-style filtering so `cargo test <name>` skips this.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut all = true;
    let mut record = |n: usize, title: &str, (o, s): (Outcome, f64), limit: Option<f64>| {
        let mut o = o;
        if let Some(l) = limit {
            if s > l {
                o.pass = false;
                o.detail.push_str(&format!("; over the {l:.0} s budget"));
            }
        }
        report(n, title, s, &o);
        all &= o.pass;
    };
    record(1, "FEM element oracles", timed(fem_element_oracles), Some(1.0));
    record(2, "SPDE accuracy trend", timed(spde_accuracy_trend), Some(30.0));
    record(3, "Kalman exactness", timed(kalman_exactness), Some(10.0));
    record(7, "observable-process bound", timed(observable_bound), None);
    record(8, "boundary folding", timed(boundary_folding), Some(30.0));
    record(9, "heterotopic panel ingestion", timed(panel_ingestion), None);

    let start = Instant::now();
    let full = study(1.0, 20);
    let full_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let half = study(0.5, 20);
    let half_s = start.elapsed().as_secs_f64();
    record(4, "EM monotonicity", (em_monotonicity(&full), full_s), None);
    record(5, "Table 1 at desk scale", (table1(&full), full_s), None);
    record(6, "low-rank robustness", (low_rank(&full, &half), half_s), None);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
