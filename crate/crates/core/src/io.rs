//! File interchange: CSV matrices, versioned JSON results and simulation bundles.
//!
//! Every writer goes through [`write_atomic`], so an interrupted run leaves either the old
//! file or the complete new one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    partial_correlation, PrecisionEstimate, StructuralPrior, TimeSeriesData,
};
use crate::netmetrics::ModuleAssignment;
use crate::siggm::{FitConfig, FitMode, FitResult};
use crate::simgen::{GroundTruth, SimulationSpec, StageSeeds};

/// Version stamped into every JSON output; readers accept any minor revision of the same major.
pub const FORMAT_VERSION: &str = "1.0";

pub const BUNDLE_OMEGA: &str = "omega_true.csv";
pub const BUNDLE_SC: &str = "sc.csv";
pub const BUNDLE_TIMESERIES: &str = "timeseries.csv";
pub const BUNDLE_META: &str = "meta.json";

fn major(version: &str) -> Option<u64> {
    version.split('.').next()?.parse().ok()
}

/// Rejects documents whose `format_version` is missing or has a different major version.
pub fn check_format_version(version: &str) -> Result<()> {
    match (major(version), major(FORMAT_VERSION)) {
        (Some(a), Some(b)) if a == b => Ok(()),
        _ => Err(Error::input(format!(
            "unsupported format_version {version:?} (this build reads {FORMAT_VERSION})"
        ))),
    }
}

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn with_path(path: &Path, err: Error) -> Error {
    match err {
        Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
        Error::Io(e) => Error::Input(format!("{}: {e}", path.display())),
        Error::Json(e) => Error::Input(format!("{}: {e}", path.display())),
        other => other,
    }
}

/// Numeric matrix from CSV text. A first row containing any non-numeric field is taken as a
/// header; every other row must have the same width and finite values.
pub fn parse_matrix_csv(text: &str) -> Result<(DMatrix<f64>, Option<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(idx as u64 + 1, |p| p.line());
            Error::input(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Err(_) if idx == 0 => header = Some(record.iter().map(str::to_string).collect()),
            Err(_) => {
                let (col, field) = record
                    .iter()
                    .enumerate()
                    .find(|(_, f)| f.parse::<f64>().is_err())
                    .expect("some field failed to parse");
                return Err(Error::input(format!(
                    "line {line}, column {}: {field:?} is not a number",
                    col + 1
                )));
            }
            Ok(values) => {
                if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::input(format!("line {line}, column {}: non-finite value", col + 1)));
                }
                let width = rows.first().map(Vec::len).or(header.as_ref().map(Vec::len));
                if let Some(w) = width {
                    if values.len() != w {
                        return Err(Error::input(format!(
                            "line {line}: expected {w} fields, found {}",
                            values.len()
                        )));
                    }
                }
                rows.push(values);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::input("no numeric rows"));
    }
    let ncols = rows[0].len();
    let m = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    Ok((m, header))
}

pub fn read_matrix_csv(path: &Path) -> Result<(DMatrix<f64>, Option<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| with_path(path, e.into()))?;
    parse_matrix_csv(&text).map_err(|e| with_path(path, e))
}

pub fn format_matrix_csv(m: &DMatrix<f64>, header: Option<&[String]>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(h) = header {
        if h.len() != m.ncols() {
            return Err(Error::input("header width does not match the matrix"));
        }
        w.write_record(h).map_err(|e| Error::Internal(e.to_string()))?;
    }
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Internal(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Internal(e.to_string()))
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    write_atomic(path, &format_matrix_csv(m, header)?)
}

/// Time series (rows = time points); a header row becomes the region labels.
pub fn read_timeseries(path: &Path) -> Result<TimeSeriesData> {
    let (m, header) = read_matrix_csv(path)?;
    TimeSeriesData::new(m, header).map_err(|e| with_path(path, e))
}

pub fn read_structural_prior(path: &Path) -> Result<StructuralPrior> {
    let (m, _) = read_matrix_csv(path)?;
    StructuralPrior::new(m).map_err(|e| with_path(path, e))
}

/// Module labels, one row per node: either `label` or `node,label`. Labels may be any strings
/// or integers; they are renumbered 1..=G in order of first appearance.
pub fn read_modules(path: &Path) -> Result<ModuleAssignment> {
    let text = fs::read_to_string(path).map_err(|e| with_path(path, e.into()))?;
    parse_modules(&text).map_err(|e| with_path(path, e))
}

pub fn parse_modules(text: &str) -> Result<ModuleAssignment> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut names: Vec<String> = Vec::new();
    let mut labels = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::input(format!("line {}: {e}", idx + 1)))?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        let field = match record.len() {
            0 => continue,
            1 => &record[0],
            2 => &record[1],
            n => return Err(Error::input(format!("line {line}: expected 1 or 2 fields, found {n}"))),
        };
        if field.is_empty() {
            return Err(Error::input(format!("line {line}: empty module label")));
        }
        // a header is recognised by a non-numeric node column
        if idx == 0 && record.len() == 2 && record[0].parse::<usize>().is_err() {
            continue;
        }
        if idx == 0 && record.len() == 1 && field.eq_ignore_ascii_case("module") {
            continue;
        }
        let id = match names.iter().position(|n| n == field) {
            Some(i) => i + 1,
            None => {
                names.push(field.to_string());
                names.len()
            }
        };
        labels.push(id);
    }
    ModuleAssignment::new(labels)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| with_path(path, e.into()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| with_path(path, e.into()))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::input(format!("{}: missing format_version", path.display())))?;
    check_format_version(version).map_err(|e| with_path(path, e))?;
    serde_json::from_value(value).map_err(|e| with_path(path, e.into()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Serialised estimate: sparse upper-triangular Ω (diagonal included), partial correlations
/// of the edges, the shrinkage state and run bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub format_version: String,
    pub p: usize,
    pub region_labels: Option<Vec<String>>,
    pub omega: Vec<(usize, usize, f64)>,
    pub partial_correlations: Vec<(usize, usize, f64)>,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    /// Absent when no structural prior was used.
    pub eta: Option<f64>,
    pub nu: f64,
    pub bic: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub mode: FitMode,
    pub wall_time_seconds: f64,
    pub config: FitConfig,
}

impl FitRecord {
    pub fn new(
        fit: &FitResult,
        config: &FitConfig,
        region_labels: Option<Vec<String>>,
        wall_time_seconds: f64,
    ) -> Result<Self> {
        let m = fit.omega.matrix();
        let p = fit.omega.dim();
        let mut omega = Vec::new();
        for j in 0..p {
            for k in j..p {
                if j == k || m[(j, k)] != 0.0 {
                    omega.push((j, k, m[(j, k)]));
                }
            }
        }
        let pc = partial_correlation(&fit.omega)?;
        let partial_correlations = fit.omega.edge_set().iter().map(|&(j, k)| (j, k, pc[(j, k)])).collect();
        Ok(Self {
            format_version: FORMAT_VERSION.to_string(),
            p,
            region_labels,
            omega,
            partial_correlations,
            alpha: fit.state.alpha.clone(),
            mu: fit.state.mu.clone(),
            eta: (fit.mode != FitMode::EtaZero).then_some(fit.state.eta),
            nu: fit.nu(),
            bic: fit.bic,
            n_iter: fit.n_iter,
            converged: fit.converged,
            mode: fit.mode,
            wall_time_seconds,
            config: config.clone(),
        })
    }

    /// Dense symmetric Ω rebuilt from the triplets.
    pub fn omega_matrix(&self) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.p, self.p);
        for &(j, k, v) in &self.omega {
            if j >= self.p || k >= self.p {
                return Err(Error::input(format!("omega entry ({j}, {k}) outside dimension {}", self.p)));
            }
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
        Ok(m)
    }

    pub fn precision(&self) -> Result<PrecisionEstimate> {
        PrecisionEstimate::new(self.omega_matrix()?)
    }
}

pub fn write_fit(path: &Path, record: &FitRecord) -> Result<()> {
    write_json(path, record)
}

pub fn read_fit(path: &Path) -> Result<FitRecord> {
    read_json(path)
}

/// Contents of `meta.json` in a simulation bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: String,
    pub spec: SimulationSpec,
    pub stage_seeds: StageSeeds,
    pub er_prob: f64,
    pub sw_neighbors: usize,
    pub sw_rewire: f64,
    pub sf_attach: usize,
    pub n_edges: usize,
}

pub fn write_bundle(dir: &Path, spec: &SimulationSpec, truth: &GroundTruth) -> Result<()> {
    fs::create_dir_all(dir)?;
    let topo = spec.topology();
    let meta = BundleMeta {
        format_version: FORMAT_VERSION.to_string(),
        spec: spec.clone(),
        stage_seeds: spec.stage_seeds(),
        er_prob: topo.er_prob,
        sw_neighbors: topo.sw_neighbors,
        sw_rewire: topo.sw_rewire,
        sf_attach: topo.sf_attach,
        n_edges: truth.graph.len(),
    };
    write_matrix_csv(&dir.join(BUNDLE_OMEGA), truth.omega_true.matrix(), None)?;
    write_matrix_csv(&dir.join(BUNDLE_SC), truth.sc.matrix(), None)?;
    write_matrix_csv(
        &dir.join(BUNDLE_TIMESERIES),
        truth.timeseries.values(),
        truth.timeseries.region_labels(),
    )?;
    write_json(&dir.join(BUNDLE_META), &meta)
}

pub fn read_bundle(dir: &Path) -> Result<(BundleMeta, GroundTruth)> {
    let meta: BundleMeta = read_json(&dir.join(BUNDLE_META))?;
    let omega_path = dir.join(BUNDLE_OMEGA);
    let (omega, _) = read_matrix_csv(&omega_path)?;
    let omega_true = PrecisionEstimate::new(omega).map_err(|e| with_path(&omega_path, e))?;
    let truth = GroundTruth {
        graph: omega_true.edge_set().to_vec(),
        omega_true,
        sc: read_structural_prior(&dir.join(BUNDLE_SC))?,
        timeseries: read_timeseries(&dir.join(BUNDLE_TIMESERIES))?,
    };
    Ok((meta, truth))
}

/// Sorted `*.json` files of a directory.
pub fn list_json(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| with_path(dir, e.into()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}
