use std::fs;
use std::path::Path;
use std::process::Command;

use lrssm::cli::{cmd_fit, cmd_mesh, cmd_predict, cmd_simulate, cmd_validate, resolve_config, Global};
use lrssm::config::RunConfig;
use lrssm::io::KvDoc;
use lrssm::study::{aggregate, run_study, scalar_params, StudySpec};
use lrssm::CliError;
use lrssm_core::kalman::UpdateForm;
use lrssm_core::predict::RasterTime;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lrssm"))
}

#[test]
fn config_rejects_unknown_and_duplicate_keys() {
    let dir = tempfile::tempdir().unwrap();
    let e = RunConfig::load(&write(dir.path(), "a.cfg", "seed = 1\nkapa = 3\n")).unwrap_err();
    assert!(e.to_string().contains("unknown key `kapa`"), "{e}");
    assert_eq!(e.exit_code(), 2);
    let e = RunConfig::load(&write(dir.path(), "b.cfg", "seed = 1\nseed = 2\n")).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn config_paths_are_relative_to_the_file_and_must_exist() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("sub")).unwrap();
    write(&dir.path().join("sub"), "sites.csv", "x,y\n0,0\n");
    let c = RunConfig::load(&write(dir.path(), "ok.cfg", "sites = sub/sites.csv\nout = res\n")).unwrap();
    assert_eq!(c.sites.as_deref(), Some(dir.path().join("sub/sites.csv").as_path()));
    assert_eq!(c.out, dir.path().join("res"));
    let e = RunConfig::load(&write(dir.path(), "bad.cfg", "panel = nope.csv\n")).unwrap_err();
    assert!(e.to_string().contains("missing file"), "{e}");
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn config_values_are_parsed_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let text = "lr = 1, 0.5\nm = 50 100\nt_len = 20\ntheta_min = 30\nfilter_form = information\n\
                time = 3\nbbox = 0 1 0 2\nsmooth = no\nw = [3x2] 1 2 3 4 5 6\ncovariates = 1; ; 2 3\n";
    let c = RunConfig::load(&write(dir.path(), "c.cfg", text)).unwrap();
    assert_eq!(c.lr, vec![1.0, 0.5]);
    assert_eq!(c.m, vec![50, 100]);
    assert!((c.theta_min - std::f64::consts::PI / 6.0).abs() < 1e-15);
    assert_eq!(c.filter_form, UpdateForm::Information);
    assert_eq!(c.time, RasterTime::At(3));
    assert_eq!(c.smooth, Some(false));
    assert_eq!(c.truth.w[(2, 1)], 6.0);
    assert_eq!(c.covariates, Some(vec![vec![1.0], vec![], vec![2.0, 3.0]]));
    let labels: Vec<String> = c.scenarios().iter().map(|s| s.label()).collect();
    assert_eq!(labels, ["m50_T20_LR100", "m50_T20_LR50", "m100_T20_LR100", "m100_T20_LR50"]);

    for bad in ["lr = 1.5\n", "seed = -1\n", "smooth = maybe\n", "filter_form = fast\n", "bbox = 0 1\n", "w = [2x2] 1 2 3 4\n", "threads = 0\n"] {
        let e = RunConfig::load(&write(dir.path(), "x.cfg", bad)).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{bad}");
    }
}

#[test]
fn mesh_spec_maps_lr_to_rank() {
    let mut c = RunConfig::default();
    c.lr = vec![0.15];
    let spec = c.mesh_spec(100, 8f64.sqrt());
    assert_eq!(spec.target, Some(15));
    assert!(spec.smooth);
    assert!((spec.buffer - 2.0).abs() < 1e-15);
    c.lr = vec![1.0];
    let spec = c.mesh_spec(100, 8f64.sqrt());
    assert_eq!(spec.target, Some(100));
    assert!(!spec.smooth);
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", "seed = 5\nthreads = 2\n");
    let g = Global { config: Some(cfg), seed: Some(9), out: Some("elsewhere".into()), threads: None };
    let c = resolve_config(&g).unwrap();
    assert_eq!((c.seed, c.threads), (9, Some(2)));
    assert_eq!(c.out, Path::new("elsewhere"));
}

#[test]
fn exit_codes() {
    use lrssm_core::Error as E;
    assert_eq!(CliError::config("x").exit_code(), 2);
    assert_eq!(CliError::from(E::CollinearInput).exit_code(), 2);
    assert_eq!(CliError::from(E::EmptyPanel).exit_code(), 2);
    assert_eq!(CliError::from(E::CholeskyFailure).exit_code(), 3);
    assert_eq!(CliError::from(E::NotPositiveDefinite(0)).exit_code(), 3);
    assert_eq!(CliError::PartialStudy { failed: 1, total: 3 }.exit_code(), 4);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.cfg", "nonsense = 1\n");
    let st = bin().args(["fit", "--config"]).arg(&bad).status().unwrap();
    assert_eq!(st.code(), Some(2));
    // `fit` without a panel is a config error.
    let st = bin().arg("fit").arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(2));
    // Three collinear sites cannot be triangulated.
    write(dir.path(), "sites.csv", "x,y\n0,0\n1,1\n2,2\n");
    let cfg = write(dir.path(), "m.cfg", "sites = sites.csv\nout = o\n");
    let st = bin().args(["mesh", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn binary_study_with_failing_replicates_exits_4() {
    // One site per variable on a 2×2 lattice: some replicates draw fewer
    // than three distinct sites and cannot be meshed.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", "m = 1\nt_len = 3\ngrid = 2\nreplicates = 8\nmax_iter = 3\nout = o\n");
    let out = bin().args(["study", "--threads", "2", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("o/study.csv")).unwrap();
    assert!(csv.starts_with("scenario,param,bias,rmse,rmse_train,rmse_test,runtime_s,n_ok\n"));
}

fn small_study(replicates: usize, threads: usize) -> StudySpec {
    let mut c = RunConfig::default();
    c.m = vec![20];
    c.t_len = vec![8];
    c.grid = 15;
    c.max_iter = 8;
    c.seed = 77;
    StudySpec {
        scenarios: c.scenarios(),
        replicates,
        seed: c.seed,
        em: c.em_config(),
        truth: c.truth(),
        z0_mean: 1.0,
        z0_sd: 1.0,
        threads: Some(threads),
    }
}

#[test]
fn single_replicate_table_equals_its_errors() {
    let spec = small_study(1, 1);
    let res = run_study(&spec).unwrap();
    assert_eq!(res[0].ok.len(), 1);
    let rep = &res[0].ok[0];
    let rows = aggregate(&res[0], &spec.truth);
    let est = scalar_params(&rep.params);
    let truth = scalar_params(&spec.truth);
    assert_eq!(rows.len(), truth.len());
    for ((row, (name, e)), (_, th)) in rows.iter().zip(&est).zip(&truth) {
        assert_eq!(&row.param, name);
        assert_eq!(row.bias, e - th);
        assert_eq!(row.rmse, (e - th).abs());
        assert_eq!(row.n_ok, 1);
        assert_eq!(row.rmse_test, rep.validation.pooled_test.rmse);
        assert_eq!(row.rmse_train, rep.validation.pooled_train.rmse);
        assert_eq!(row.runtime_s, rep.runtime_s);
    }
}

#[test]
fn study_is_deterministic_across_thread_counts() {
    let a = run_study(&small_study(3, 1)).unwrap();
    let b = run_study(&small_study(3, 3)).unwrap();
    for (x, y) in a[0].ok.iter().zip(&b[0].ok) {
        assert_eq!(x.seed, y.seed);
        assert_eq!(x.params, y.params);
        assert_eq!(x.loglik_trace, y.loglik_trace);
    }
    assert_eq!(a[0].ok.len(), 3);
}

#[test]
fn commands_chain_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::default();
    c.m = vec![25];
    c.t_len = vec![6];
    c.grid = 8;
    c.seed = 3;
    c.out = dir.path().join("sim");
    cmd_simulate(&c).unwrap();

    let mut f = RunConfig::default();
    f.panel = Some(dir.path().join("sim/train.csv"));
    f.max_iter = 6;
    f.seed = 11;
    f.out = dir.path().join("fit1");
    let a = cmd_fit(&f).unwrap();
    f.out = dir.path().join("fit2");
    let b = cmd_fit(&f).unwrap();
    assert_eq!(a.params, b.params);
    let strip = |d: &KvDoc| d.entries.iter().filter(|(k, _)| k != "wall_time_s").cloned().collect::<Vec<_>>();
    assert_eq!(strip(&a.report), strip(&b.report));
    assert_eq!(fs::read(dir.path().join("fit1/mesh.txt")).unwrap(), fs::read(dir.path().join("fit2/mesh.txt")).unwrap());

    let mut pcfg = RunConfig::default();
    pcfg.panel = f.panel.clone();
    pcfg.test_panel = Some(dir.path().join("sim/test.csv"));
    pcfg.mesh = Some(dir.path().join("fit1/mesh.txt"));
    pcfg.report = Some(dir.path().join("fit1/report.txt"));
    pcfg.out = dir.path().join("pred");
    pcfg.nx = 5;
    pcfg.ny = 4;
    let cells = cmd_predict(&pcfg).unwrap();
    assert_eq!(cells.len(), 20);
    pcfg.add_noise = true;
    let noisy = cmd_predict(&pcfg).unwrap();
    for (x, y) in cells.iter().zip(&noisy) {
        if let (Some((m0, s0)), Some((m1, s1))) = (&x.value, &y.value) {
            assert_eq!(m0, m1);
            for ((s0, s1), v) in s0.iter().zip(s1).zip(a.params.sigma2.iter()) {
                assert!((s1 * s1 - s0 * s0 - v).abs() < 1e-12);
            }
        }
    }
    let rep = cmd_validate(&pcfg).unwrap();
    assert_eq!(rep.test.len(), 3);
    assert!(rep.pooled_test.rmse.is_finite());
    let csv = fs::read_to_string(dir.path().join("pred/validation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let mut m = RunConfig::default();
    m.panel = f.panel.clone();
    m.out = dir.path().join("mesh");
    let built = cmd_mesh(&m, true).unwrap();
    assert!(dir.path().join("mesh/q.coo").exists());
    let again = cmd_mesh(&m, false).unwrap();
    assert_eq!(built.mesh, again.mesh);
}
