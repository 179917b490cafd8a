//! Text formats: mesh files, panel and site CSVs, raster CSVs, COO matrix
//! dumps and key/value documents (configs and fit reports).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use lrssm_core::em::FitResult;
use lrssm_core::mesh::{Mesh, VertexClass};
use lrssm_core::model::{ModelParams, ObservationPanel};
use lrssm_core::predict::RasterCell;
use lrssm_core::sparse::CsrMatrix;
use lrssm_core::Point2;

use crate::error::{CliError, Result};

pub const MESH_MAGIC: &str = "lrssm-mesh v1";
pub const NA: &str = "NA";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| CliError::format(path, format!("line {line}: cannot parse `{s}`")))
}

// ---- mesh ----

/// Header, one `v x y class` line per vertex and one `t i j k` line per
/// triangle. Coordinates carry 17 significant digits.
pub fn mesh_to_string(mesh: &Mesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MESH_MAGIC} R={} T={}", mesh.vertex_count(), mesh.triangles().len());
    for (p, c) in mesh.vertices().iter().zip(mesh.classes()) {
        let _ = writeln!(s, "v {:.16e} {:.16e} {}", p.x, p.y, c.as_str());
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "t {} {} {}", t[0], t[1], t[2]);
    }
    s
}

pub fn parse_mesh(path: &Path, text: &str) -> Result<Mesh> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| CliError::format(path, "empty mesh file"))?;
    let rest = header
        .strip_prefix(MESH_MAGIC)
        .ok_or_else(|| CliError::format(path, format!("expected `{MESH_MAGIC}` header")))?;
    let mut counts = (None, None);
    for tok in rest.split_whitespace() {
        match tok.split_once('=') {
            Some(("R", v)) => counts.0 = Some(num::<usize>(path, 1, v)?),
            Some(("T", v)) => counts.1 = Some(num::<usize>(path, 1, v)?),
            _ => return Err(CliError::format(path, format!("unexpected header token `{tok}`"))),
        }
    }
    let (nv, nt) = match counts {
        (Some(r), Some(t)) => (r, t),
        _ => return Err(CliError::format(path, "header needs R= and T=")),
    };
    let mut vertices = Vec::with_capacity(nv);
    let mut classes = Vec::with_capacity(nv);
    let mut triangles = Vec::with_capacity(nt);
    for (k, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["v", x, y, c] => {
                vertices.push(Point2::new(num(path, k + 1, x)?, num(path, k + 1, y)?));
                classes.push(
                    VertexClass::parse(c)
                        .ok_or_else(|| CliError::format(path, format!("line {}: unknown class `{c}`", k + 1)))?,
                );
            }
            ["t", i, j, l] => triangles.push([num(path, k + 1, i)?, num(path, k + 1, j)?, num(path, k + 1, l)?]),
            _ => return Err(CliError::format(path, format!("line {}: malformed record", k + 1))),
        }
    }
    if vertices.len() != nv || triangles.len() != nt {
        return Err(CliError::format(
            path,
            format!("header announces {nv} vertices and {nt} triangles, found {} and {}", vertices.len(), triangles.len()),
        ));
    }
    Ok(Mesh::with_classes(vertices, triangles, classes)?)
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    write(path, &mesh_to_string(mesh))
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    parse_mesh(path, &read(path)?)
}

// ---- sites and panels ----

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::format(path, format!("{other:?}")),
    }
}

/// Sites from a CSV with header `x,y`.
pub fn read_sites(path: &Path) -> Result<Vec<Point2>> {
    let mut rdr = csv_reader(path)?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_owned).collect();
    if header != ["x", "y"] {
        return Err(CliError::format(path, "sites CSV header must be `x,y`"));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        out.push(Point2::new(num(path, k + 2, &rec[0])?, num(path, k + 2, &rec[1])?));
    }
    Ok(out)
}

pub fn write_sites(path: &Path, sites: &[Point2]) -> Result<()> {
    let mut s = String::from("x,y\n");
    for p in sites {
        let _ = writeln!(s, "{},{}", p.x, p.y);
    }
    write(path, &s)
}

/// Panel CSV with header `var,site_x,site_y,t,value,cov_1..cov_k`. `var`
/// and `t` are 1-based; variables with fewer than `k` covariates leave the
/// trailing cells empty. `t_len` defaults to the largest `t` present.
pub fn read_panel(path: &Path, t_len: Option<usize>) -> Result<ObservationPanel> {
    let mut rdr = csv_reader(path)?;
    let header: Vec<String> = rdr.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_owned).collect();
    let fixed = ["var", "site_x", "site_y", "t", "value"];
    if header.len() < 5 || header[..5] != fixed {
        return Err(CliError::format(path, "panel header must start with `var,site_x,site_y,t,value`"));
    }
    for (k, h) in header[5..].iter().enumerate() {
        if *h != format!("cov_{}", k + 1) {
            return Err(CliError::format(path, format!("expected column `cov_{}`, found `{h}`", k + 1)));
        }
    }
    struct Row {
        var: usize,
        site: Point2,
        t: usize,
        y: f64,
        x: Vec<f64>,
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let var: usize = num(path, line, &rec[0])?;
        let t: usize = num(path, line, &rec[3])?;
        if var == 0 || t == 0 {
            return Err(CliError::format(path, format!("line {line}: var and t are 1-based")));
        }
        let cells: Vec<&str> = rec.iter().skip(5).collect();
        let used = cells.iter().take_while(|c| !c.is_empty()).count();
        if cells[used..].iter().any(|c| !c.is_empty()) {
            return Err(CliError::format(path, format!("line {line}: gap in covariate columns")));
        }
        let x = cells[..used].iter().map(|c| num(path, line, c)).collect::<Result<Vec<f64>>>()?;
        let site = Point2::new(num(path, line, &rec[1])?, num(path, line, &rec[2])?);
        rows.push(Row { var: var - 1, site, t: t - 1, y: num(path, line, &rec[4])?, x });
    }
    let p = rows.iter().map(|r| r.var + 1).max().unwrap_or(0);
    let t_max = rows.iter().map(|r| r.t + 1).max().unwrap_or(0);
    let t_len = t_len.unwrap_or(t_max);
    if t_max > t_len {
        return Err(CliError::format(path, format!("time {t_max} exceeds T = {t_len}")));
    }
    let mut dims: Vec<Option<usize>> = vec![None; p];
    for r in &rows {
        match dims[r.var] {
            None => dims[r.var] = Some(r.x.len()),
            Some(d) if d != r.x.len() => {
                return Err(CliError::format(path, format!("variable {} has rows with {d} and {} covariates", r.var + 1, r.x.len())))
            }
            _ => {}
        }
    }
    let mut panel = ObservationPanel::new(t_len, dims.into_iter().map(|d| d.unwrap_or(0)).collect());
    for r in rows {
        panel.push(r.var, r.t, r.site, r.y, &r.x)?;
    }
    Ok(panel)
}

pub fn panel_to_string(panel: &ObservationPanel) -> String {
    let k = panel.cov_dims().iter().copied().max().unwrap_or(0);
    let mut s = String::from("var,site_x,site_y,t,value");
    for c in 1..=k {
        let _ = write!(s, ",cov_{c}");
    }
    s.push('\n');
    for t in 0..panel.t_len() {
        for i in 0..panel.p() {
            let cell = panel.cell(i, t);
            for n in 0..cell.len() {
                let _ = write!(s, "{},{},{},{},{}", i + 1, cell.sites[n].x, cell.sites[n].y, t + 1, cell.y[n]);
                for c in 0..k {
                    match cell.x[n].get(c) {
                        Some(v) => {
                            let _ = write!(s, ",{v}");
                        }
                        None => s.push(','),
                    }
                }
                s.push('\n');
            }
        }
    }
    s
}

pub fn write_panel(path: &Path, panel: &ObservationPanel) -> Result<()> {
    write(path, &panel_to_string(panel))
}

// ---- raster ----

/// Header `x,y,mean_1..mean_p,sd_1..sd_p`; cells off the mesh are `NA`.
pub fn raster_to_string(cells: &[RasterCell], p: usize) -> String {
    let mut s = String::from("x,y");
    for i in 1..=p {
        let _ = write!(s, ",mean_{i}");
    }
    for i in 1..=p {
        let _ = write!(s, ",sd_{i}");
    }
    s.push('\n');
    for c in cells {
        let _ = write!(s, "{},{}", c.at.x, c.at.y);
        match &c.value {
            Some((mean, sd)) => {
                for v in mean.iter().chain(sd) {
                    let _ = write!(s, ",{v}");
                }
            }
            None => {
                for _ in 0..2 * p {
                    let _ = write!(s, ",{NA}");
                }
            }
        }
        s.push('\n');
    }
    s
}

pub fn write_raster(path: &Path, cells: &[RasterCell], p: usize) -> Result<()> {
    write(path, &raster_to_string(cells, p))
}

// ---- COO dump ----

/// `i j value` triplets, 0-based, sorted by row then column.
pub fn coo_to_string(m: &CsrMatrix) -> String {
    let mut t = m.triplets();
    t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut s = String::new();
    for (i, j, v) in t {
        let _ = writeln!(s, "{i} {j} {v:.16e}");
    }
    s
}

pub fn write_coo(path: &Path, m: &CsrMatrix) -> Result<()> {
    write(path, &coo_to_string(m))
}

// ---- key/value documents ----

/// Ordered `key = value` pairs; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDoc {
    pub entries: Vec<(String, String)>,
}

impl KvDoc {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::format(path, format!("line {}: expected `key = value`", k + 1)))?;
            let key = key.trim().to_owned();
            if key.is_empty() {
                return Err(CliError::format(path, format!("line {}: empty key", k + 1)));
            }
            if entries.iter().any(|(e, _)| *e == key) {
                return Err(CliError::format(path, format!("line {}: duplicate key `{key}`", k + 1)));
            }
            entries.push((key, value.trim().to_owned()));
        }
        Ok(KvDoc { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(path, &read(path)?)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, key: &str, value: impl std::fmt::Display) {
        self.entries.push((key.to_owned(), value.to_string()));
    }

    pub fn push_vec(&mut self, key: &str, v: &[f64]) {
        self.push(key, join(v.iter()));
    }

    /// Matrices are written `[rows x cols] v11 v12 ...` in row-major order.
    pub fn push_matrix(&mut self, key: &str, m: &DMatrix<f64>) {
        let vals = join(m.transpose().iter());
        self.push(key, format!("[{}x{}] {vals}", m.nrows(), m.ncols()));
    }

    pub fn to_text(&self, title: &str) -> String {
        let mut s = format!("# {title}\n");
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn join<'a>(it: impl Iterator<Item = &'a f64>) -> String {
    it.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

pub fn parse_vec(path: &Path, key: &str, s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| CliError::format(path, format!("`{key}`: cannot parse `{t}`"))))
        .collect()
}

pub fn parse_matrix(path: &Path, key: &str, s: &str) -> Result<DMatrix<f64>> {
    let bad = || CliError::format(path, format!("`{key}`: expected `[rows x cols] values`"));
    let rest = s.strip_prefix('[').ok_or_else(bad)?;
    let (shape, vals) = rest.split_once(']').ok_or_else(bad)?;
    let (r, c) = shape.split_once('x').ok_or_else(bad)?;
    let (r, c): (usize, usize) = (r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?);
    let v = parse_vec(path, key, vals)?;
    if v.len() != r * c {
        return Err(CliError::format(path, format!("`{key}`: {r}x{c} needs {} values, found {}", r * c, v.len())));
    }
    Ok(DMatrix::from_row_slice(r, c, &v))
}

/// Fit report: run summary, estimates and the loglik trace.
pub fn fit_report(fit: &FitResult, wall_time_s: f64) -> KvDoc {
    let mut d = KvDoc::default();
    let p = &fit.params;
    d.push("p", p.p());
    d.push("q", p.q());
    d.push("converged", fit.converged);
    d.push("iterations", fit.iterations);
    d.push("wall_time_s", format!("{wall_time_s:.3}"));
    d.push("loglik", format!("{:e}", fit.loglik_trace.last().copied().unwrap_or(f64::NAN)));
    d.push("kappa_fallbacks", fit.kappa_fallbacks);
    d.push("kappa_boundary_hits", fit.kappa_boundary_hits);
    d.push("ridge_warnings", fit.ridge_warnings);
    d.push("component_order", fit.component_order.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
    push_params(&mut d, p);
    d.push_vec("loglik_trace", &fit.loglik_trace);
    d
}

pub fn push_params(d: &mut KvDoc, p: &ModelParams) {
    d.push_vec("beta", p.beta.as_slice());
    d.push_vec("sigma2", p.sigma2.as_slice());
    d.push_vec("f", p.f.as_slice());
    d.push_matrix("w", &p.w);
    d.push_vec("kappa", p.kappa.as_slice());
    d.push_vec("mu0", p.mu0.as_slice());
    d.push_matrix("sigma0", &p.sigma0);
}

/// Model parameters back from a fit report.
pub fn params_from_doc(path: &Path, d: &KvDoc) -> Result<ModelParams> {
    let need = |k: &str| d.get(k).ok_or_else(|| CliError::format(path, format!("missing key `{k}`")));
    let vec = |k: &str| -> Result<DVector<f64>> { Ok(DVector::from_vec(parse_vec(path, k, need(k)?)?)) };
    Ok(ModelParams {
        beta: vec("beta")?,
        sigma2: vec("sigma2")?,
        f: vec("f")?,
        w: parse_matrix(path, "w", need("w")?)?,
        kappa: vec("kappa")?,
        mu0: vec("mu0")?,
        sigma0: parse_matrix(path, "sigma0", need("sigma0")?)?,
    })
}

pub fn write_doc(path: &Path, doc: &KvDoc, title: &str) -> Result<()> {
    write(path, &doc.to_text(title))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write(path, text)
}
