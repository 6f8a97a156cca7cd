//! Simulation benchmark: replicates per (structure × p × scenario) cell, every method fitted
//! to the same data, scored against the generating network.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, FORMAT_VERSION};
use crate::model::{sample_covariance, PrecisionEstimate};
use crate::netmetrics::{auc, confusion, global_efficiency, mcc, rel_l1_error, Edge};
use crate::siggm::{self, FitConfig, FitMode, NuSpec};
use crate::simgen::{generate, stream_seed, GraphKind, GroundTruth, Scenario, SimulationSpec};
use crate::wglasso::SolverOptions;

/// Span of the plain glasso penalty grid, from the smallest penalty giving an empty graph.
const GLASSO_GRID_RATIO: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Siggm,
    SiggmEta0,
    Glasso,
    ParametricBaseline,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Siggm, Method::SiggmEta0, Method::Glasso, Method::ParametricBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Siggm => "siggm",
            Method::SiggmEta0 => "siggm_eta0",
            Method::Glasso => "glasso",
            Method::ParametricBaseline => "parametric_baseline",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::input(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub misspec_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub structures: Vec<GraphKind>,
    pub p_values: Vec<usize>,
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(rename = "T", alias = "t")]
    pub t: usize,
    pub n_replicates: usize,
    pub methods: Vec<Method>,
    pub master_seed: u64,
    pub nu: NuSpec,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            structures: vec![GraphKind::SmallWorld],
            p_values: vec![100],
            scenarios: vec![ScenarioSpec {
                scenario: Scenario::MI,
                misspec_frac: 0.1,
            }],
            t: 200,
            n_replicates: 10,
            methods: Method::ALL.to_vec(),
            master_seed: 0,
            nu: NuSpec::default(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_replicates == 0 {
            return Err(Error::input("n_replicates must be at least 1"));
        }
        if self.structures.is_empty() || self.p_values.is_empty() || self.scenarios.is_empty() {
            return Err(Error::input("structures, p_values and scenarios must be nonempty"));
        }
        if self.methods.is_empty() {
            return Err(Error::input("no methods selected"));
        }
        if let Some(sc) = self.scenarios.iter().find(|s| !(0.0..=0.5).contains(&s.misspec_frac)) {
            return Err(Error::input(format!("misspec_frac {} outside [0, 0.5]", sc.misspec_frac)));
        }
        FitConfig {
            nu: self.nu.clone(),
            ..Default::default()
        }
        .validate()
    }

    fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &structure in &self.structures {
            for &p in &self.p_values {
                for &scenario in &self.scenarios {
                    cells.push(Cell { structure, p, scenario });
                }
            }
        }
        cells
    }

    /// Replicate data depends only on the master seed and the cell's position in the grid,
    /// never on the method list or the thread count.
    fn replicate_spec(&self, cell_index: usize, cell: &Cell, rep: usize) -> SimulationSpec {
        SimulationSpec {
            structure: cell.structure,
            p: cell.p,
            t: self.t,
            scenario: cell.scenario.scenario,
            misspec_frac: cell.scenario.misspec_frac,
            seed: stream_seed(stream_seed(self.master_seed, cell_index as u64), rep as u64),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    structure: GraphKind,
    p: usize,
    scenario: ScenarioSpec,
}

impl Cell {
    fn label(&self) -> String {
        format!(
            "{}_p{}_{:?}_m{}",
            self.structure.short_name(),
            self.p,
            self.scenario.scenario,
            self.scenario.misspec_frac
        )
    }
}

/// Externally estimated networks scored alongside the in-repo methods. `dir` holds one CSV
/// per replicate named `<cell>_r<rep>.csv` (see [`replicate_file_stem`]), containing either a
/// p×p precision matrix or a two-column list of 0-based edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedMethod {
    pub name: String,
    pub dir: PathBuf,
}

impl FromStr for ImportedMethod {
    type Err = Error;

    /// `name=dir`
    fn from_str(s: &str) -> Result<Self> {
        let (name, dir) = s
            .split_once('=')
            .ok_or_else(|| Error::input(format!("import spec {s:?} is not name=dir")))?;
        if name.is_empty() {
            return Err(Error::input("import name is empty"));
        }
        Ok(Self {
            name: name.to_string(),
            dir: PathBuf::from(dir),
        })
    }
}

/// File stem shared by saved replicate bundles and imported estimates.
pub fn replicate_file_stem(spec: &SimulationSpec, rep: usize) -> String {
    let cell = Cell {
        structure: spec.structure,
        p: spec.p,
        scenario: ScenarioSpec {
            scenario: spec.scenario,
            misspec_frac: spec.misspec_frac,
        },
    };
    format!("{}_r{rep}", cell.label())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Standard error of the mean; `NaN` with a single replicate.
    pub se: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let se = if values.len() < 2 {
            f64::NAN
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self { mean, se }
    }
}

/// Scores of one method on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateScore {
    pub eglob_bias: f64,
    pub mcc: f64,
    pub auc: f64,
    /// `NaN` for edge-list imports, which carry no precision values.
    pub l1: f64,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub structure: GraphKind,
    pub scenario: Scenario,
    pub misspec_frac: f64,
    pub p: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    /// Some replicates failed; the averages cover the successful ones only.
    pub partial: bool,
    pub errors: Vec<String>,
    pub eglob_bias: Stat,
    pub mcc: Stat,
    pub auc: Stat,
    pub l1: Stat,
    pub runtime_seconds: Stat,
    pub replicates: Vec<Option<ReplicateScore>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub format_version: String,
    pub config: BenchmarkConfig,
    pub imported: Vec<String>,
    pub rows: Vec<BenchRow>,
}

/// Networks produced by one method on one replicate.
struct MethodOutput {
    selected: PrecisionEstimate,
    path: Vec<Vec<Edge>>,
}

fn run_method(method: Method, truth: &GroundTruth, cfg: &BenchmarkConfig, seed: u64) -> Result<MethodOutput> {
    let s = sample_covariance(&truth.timeseries, true);
    let mode = match method {
        Method::Glasso => {
            let n = match &cfg.nu {
                NuSpec::Auto { auto } => *auto,
                NuSpec::Grid(g) => g.len(),
                NuSpec::Value(_) => 1,
            };
            let grid = match &cfg.nu {
                NuSpec::Grid(g) => g.iter().rev().copied().collect(),
                _ => siggm::log_grid_desc(siggm::max_offdiag_abs(&s).max(1e-6), GLASSO_GRID_RATIO, n),
            };
            let sel = siggm::glasso_bic_path(&s, &grid, |x| x, &SolverOptions::default(), None)?;
            return Ok(MethodOutput {
                path: sel.path.iter().map(|(_, o)| o.edge_set().to_vec()).collect(),
                selected: sel.omega,
            });
        }
        Method::Siggm => FitMode::Full,
        Method::SiggmEta0 => FitMode::EtaZero,
        Method::ParametricBaseline => FitMode::ParametricBaseline,
    };
    let fit_cfg = FitConfig {
        nu: cfg.nu.clone(),
        mode,
        seed,
        ..Default::default()
    };
    let path = siggm::fit_path(&s, &truth.sc, &fit_cfg)?;
    Ok(MethodOutput {
        path: path.fits.iter().map(|f| f.omega.edge_set().to_vec()).collect(),
        selected: path.fits[path.selected].omega.clone(),
    })
}

fn score(truth: &GroundTruth, est_edges: &[Edge], est_omega: Option<&PrecisionEstimate>, path: &[Vec<Edge>], runtime: f64) -> Result<ReplicateScore> {
    let p = truth.omega_true.dim();
    let true_edges = truth.omega_true.edge_set();
    Ok(ReplicateScore {
        eglob_bias: global_efficiency(est_edges, p)? - global_efficiency(true_edges, p)?,
        mcc: mcc(&confusion(est_edges, true_edges, p)),
        auc: auc(path, true_edges, p)?,
        l1: match est_omega {
            Some(o) => rel_l1_error(o.matrix(), truth.omega_true.matrix())?,
            None => f64::NAN,
        },
        runtime_seconds: runtime,
    })
}

fn score_method(method: Method, truth: &GroundTruth, cfg: &BenchmarkConfig, seed: u64) -> Result<ReplicateScore> {
    let start = Instant::now();
    let out = run_method(method, truth, cfg, seed)?;
    let runtime = start.elapsed().as_secs_f64();
    score(truth, out.selected.edge_set(), Some(&out.selected), &out.path, runtime)
}

fn score_import(import: &ImportedMethod, truth: &GroundTruth, stem: &str) -> Result<ReplicateScore> {
    let path = import.dir.join(format!("{stem}.csv"));
    let (m, _) = io::read_matrix_csv(&path)?;
    let p = truth.omega_true.dim();
    if m.nrows() == p && m.ncols() == p {
        let est = PrecisionEstimate::new(m).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        let edges = est.edge_set().to_vec();
        return score(truth, &edges, Some(&est), std::slice::from_ref(&edges), 0.0);
    }
    if m.ncols() != 2 {
        return Err(Error::input(format!(
            "{}: expected a {p}x{p} precision matrix or a two-column edge list",
            path.display()
        )));
    }
    let mut edges = Vec::with_capacity(m.nrows());
    for (i, row) in m.row_iter().enumerate() {
        let (a, b) = (row[0], row[1]);
        let valid = |x: f64| x >= 0.0 && x.fract() == 0.0 && (x as usize) < p;
        if !valid(a) || !valid(b) || a == b {
            return Err(Error::input(format!("{}: row {} is not a valid edge", path.display(), i + 1)));
        }
        let (a, b) = (a as usize, b as usize);
        edges.push((a.min(b), a.max(b)));
    }
    edges.sort_unstable();
    edges.dedup();
    score(truth, &edges, None, std::slice::from_ref(&edges), 0.0)
}

/// Options that do not affect the generated data.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub imports: Vec<ImportedMethod>,
    /// Write each replicate's ground-truth bundle under `<dir>/<cell>_r<rep>/`.
    pub save_data: Option<PathBuf>,
    /// Worker threads; `None` uses `SIGGM_THREADS` or all cores.
    pub threads: Option<usize>,
}

/// Thread cap from `SIGGM_THREADS`, if set to a positive integer.
pub fn env_threads() -> Option<usize> {
    std::env::var("SIGGM_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

pub fn run_benchmark(cfg: &BenchmarkConfig, opts: &RunOptions) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let threads = opts.threads.or_else(env_threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let cells = cfg.cells();
    let n_methods = cfg.methods.len() + opts.imports.len();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.n_replicates).map(move |r| (c, r)))
        .collect();

    let results: Vec<Vec<std::result::Result<ReplicateScore, String>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, rep)| {
                let spec = cfg.replicate_spec(c, &cells[c], rep);
                let stem = replicate_file_stem(&spec, rep);
                let truth = match generate(&spec) {
                    Ok(t) => t,
                    Err(e) => return vec![Err(format!("r{rep}: data generation failed: {e}")); n_methods],
                };
                if let Some(dir) = &opts.save_data {
                    if let Err(e) = io::write_bundle(&dir.join(&stem), &spec, &truth) {
                        warn!("could not save {stem}: {e}");
                    }
                }
                let mut out: Vec<_> = cfg
                    .methods
                    .iter()
                    .map(|&m| score_method(m, &truth, cfg, spec.seed).map_err(|e| format!("r{rep}: {e}")))
                    .collect();
                out.extend(
                    opts.imports
                        .iter()
                        .map(|imp| score_import(imp, &truth, &stem).map_err(|e| format!("r{rep}: {e}"))),
                );
                info!("{stem} done");
                out
            })
            .collect()
    });

    let names: Vec<String> = cfg
        .methods
        .iter()
        .map(|m| m.name().to_string())
        .chain(opts.imports.iter().map(|i| i.name.clone()))
        .collect();
    let mut rows = Vec::with_capacity(cells.len() * n_methods);
    for (c, cell) in cells.iter().enumerate() {
        let per_rep = &results[c * cfg.n_replicates..(c + 1) * cfg.n_replicates];
        for (m, name) in names.iter().enumerate() {
            let mut errors = Vec::new();
            let mut replicates = Vec::with_capacity(cfg.n_replicates);
            for rep in per_rep {
                match &rep[m] {
                    Ok(s) => replicates.push(Some(*s)),
                    Err(e) => {
                        errors.push(e.clone());
                        replicates.push(None);
                    }
                }
            }
            let ok: Vec<ReplicateScore> = replicates.iter().flatten().copied().collect();
            let stat = |f: fn(&ReplicateScore) -> f64| Stat::of(&ok.iter().map(f).collect::<Vec<_>>());
            rows.push(BenchRow {
                method: name.clone(),
                structure: cell.structure,
                scenario: cell.scenario.scenario,
                misspec_frac: cell.scenario.misspec_frac,
                p: cell.p,
                n_ok: ok.len(),
                n_failed: errors.len(),
                partial: !errors.is_empty(),
                errors,
                eglob_bias: stat(|s| s.eglob_bias),
                mcc: stat(|s| s.mcc),
                auc: stat(|s| s.auc),
                l1: stat(|s| s.l1),
                runtime_seconds: stat(|s| s.runtime_seconds),
                replicates,
            });
        }
    }
    Ok(BenchmarkReport {
        format_version: FORMAT_VERSION.to_string(),
        config: cfg.clone(),
        imported: opts.imports.iter().map(|i| i.name.clone()).collect(),
        rows,
    })
}

/// Inclusive `start:stop:step` grid; the end point is kept when it lies within rounding of
/// the last step.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: std::result::Result<Vec<f64>, _> = parts.iter().map(|s| s.trim().parse::<f64>()).collect();
    let nums = nums.map_err(|_| Error::input(format!("sweep {spec:?} is not start:stop:step")))?;
    let [start, stop, step] = nums[..] else {
        return Err(Error::input(format!("sweep {spec:?} is not start:stop:step")));
    };
    if !(step > 0.0) || !(stop >= start) || !(start >= 0.0) || stop > 0.5 {
        return Err(Error::input("sweep needs 0 <= start <= stop <= 0.5 and step > 0"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// Runs the benchmark once per misspecification level, keeping every other setting of `cfg`
/// (the scenario kind is taken from the first listed scenario).
pub fn sweep_misspec(cfg: &BenchmarkConfig, grid: &[f64], opts: &RunOptions) -> Result<BenchmarkReport> {
    let kind = cfg
        .scenarios
        .first()
        .map(|s| s.scenario)
        .ok_or_else(|| Error::input("no scenario to sweep"))?;
    let swept = BenchmarkConfig {
        scenarios: grid
            .iter()
            .map(|&m| ScenarioSpec {
                scenario: kind,
                misspec_frac: m,
            })
            .collect(),
        ..cfg.clone()
    };
    run_benchmark(&swept, opts)
}

/// One line per row, for plotting curves.
pub fn report_csv(report: &BenchmarkReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::Internal(e.to_string());
    w.write_record([
        "method", "structure", "scenario", "misspec_frac", "p", "n_ok", "n_failed", "eglob_bias", "eglob_bias_se",
        "mcc", "mcc_se", "auc", "auc_se", "l1", "l1_se", "runtime_seconds", "runtime_seconds_se",
    ])
    .map_err(fail)?;
    for r in &report.rows {
        let mut rec = vec![
            r.method.clone(),
            r.structure.short_name().to_string(),
            format!("{:?}", r.scenario),
            r.misspec_frac.to_string(),
            r.p.to_string(),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
        ];
        for s in [r.eglob_bias, r.mcc, r.auc, r.l1, r.runtime_seconds] {
            rec.push(s.mean.to_string());
            rec.push(s.se.to_string());
        }
        w.write_record(&rec).map_err(fail)?;
    }
    w.into_inner().map_err(|e| Error::Internal(e.to_string()))
}

/// Fixed-width text table, one row per method and cell.
pub fn render_table(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<20} {:<4} {:<4} {:>6} {:>5} {:>17} {:>15} {:>15} {:>15} {:>13}",
        "method", "net", "scen", "mis", "p", "eglob bias", "MCC", "AUC", "L1", "runtime (s)"
    );
    for r in &report.rows {
        let cell = |s: Stat| {
            if s.se.is_nan() {
                format!("{:.3}", s.mean)
            } else {
                format!("{:.3} ({:.3})", s.mean, s.se)
            }
        };
        let _ = writeln!(
            out,
            "{:<20} {:<4} {:<4} {:>6.3} {:>5} {:>17} {:>15} {:>15} {:>15} {:>13}{}",
            r.method,
            r.structure.short_name(),
            format!("{:?}", r.scenario),
            r.misspec_frac,
            r.p,
            cell(r.eglob_bias),
            cell(r.mcc),
            cell(r.auc),
            cell(r.l1),
            format!("{:.2}", r.runtime_seconds.mean),
            if r.partial {
                format!("  [partial: {} failed]", r.n_failed)
            } else {
                String::new()
            }
        );
    }
    out
}

/// Writes `<out>` as JSON, plus `<out>.txt` with the rendered table.
pub fn write_report(out: &Path, report: &BenchmarkReport) -> Result<()> {
    io::write_json(out, report)?;
    let mut txt = out.as_os_str().to_owned();
    txt.push(".txt");
    io::write_atomic(Path::new(&txt), render_table(report).as_bytes())
}

pub fn read_report(path: &Path) -> Result<BenchmarkReport> {
    io::read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchmarkConfig {
        BenchmarkConfig {
            structures: vec![GraphKind::ErdosRenyi],
            p_values: vec![12],
            scenarios: vec![ScenarioSpec {
                scenario: Scenario::MI,
                misspec_frac: 0.1,
            }],
            t: 60,
            n_replicates: 2,
            methods: vec![Method::Glasso, Method::SiggmEta0],
            master_seed: 5,
            nu: NuSpec::Auto { auto: 4 },
        }
    }

    #[test]
    fn stat_matches_hand_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 6.0]);
        assert_eq!(s.mean, 3.0);
        // sample variance 14/3, se = sqrt(14/12)
        assert!((s.se - (14.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!(Stat::of(&[4.0]).se.is_nan());
    }

    #[test]
    fn sweep_grid_is_inclusive() {
        let g = parse_sweep("0.04:0.5:0.115").unwrap();
        assert_eq!(g.len(), 5);
        assert!((g[4] - 0.5).abs() < 1e-12);
        assert_eq!(parse_sweep("0.1:0.1:0.05").unwrap(), vec![0.1]);
        assert!(parse_sweep("0.1:0.05:0.01").is_err());
        assert!(parse_sweep("0.1:0.6:0.1").is_err());
        assert!(parse_sweep("0.1:0.2").is_err());
    }

    #[test]
    fn one_row_per_method_and_cell() {
        let mut cfg = small();
        cfg.structures.push(GraphKind::SmallWorld);
        cfg.n_replicates = 1;
        let r = run_benchmark(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 2 * 2);
        for row in &r.rows {
            assert_eq!(row.n_ok, 1);
            assert!(!row.partial);
            assert!((-1.0..=1.0).contains(&row.mcc.mean));
        }
    }

    #[test]
    fn report_ignores_thread_count() {
        let cfg = small();
        let strip = |mut r: BenchmarkReport| {
            for row in &mut r.rows {
                row.runtime_seconds = Stat { mean: 0.0, se: 0.0 };
                for s in row.replicates.iter_mut().flatten() {
                    s.runtime_seconds = 0.0;
                }
            }
            serde_json::to_string(&r).unwrap()
        };
        let one = run_benchmark(&cfg, &RunOptions { threads: Some(1), ..Default::default() }).unwrap();
        let four = run_benchmark(&cfg, &RunOptions { threads: Some(4), ..Default::default() }).unwrap();
        assert_eq!(strip(one), strip(four));
    }

    #[test]
    fn imports_score_edge_lists_and_record_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.methods = vec![Method::Glasso];
        let spec = cfg.replicate_spec(0, &cfg.cells()[0], 0);
        let truth = generate(&spec).unwrap();
        // a perfect edge list for replicate 0, nothing for replicate 1
        let m = nalgebra::DMatrix::from_fn(truth.graph.len(), 2, |i, j| {
            let (a, b) = truth.graph[i];
            if j == 0 { a as f64 } else { b as f64 }
        });
        io::write_matrix_csv(&dir.path().join(format!("{}.csv", replicate_file_stem(&spec, 0))), &m, None).unwrap();
        let opts = RunOptions {
            imports: vec![format!("oracle={}", dir.path().display()).parse().unwrap()],
            ..Default::default()
        };
        let r = run_benchmark(&cfg, &opts).unwrap();
        let row = r.rows.iter().find(|r| r.method == "oracle").unwrap();
        assert_eq!((row.n_ok, row.n_failed), (1, 1));
        assert!(row.partial);
        assert_eq!(row.mcc.mean, 1.0);
        assert_eq!(row.eglob_bias.mean, 0.0);
        assert!(row.l1.mean.is_nan());
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("space".parse::<Method>().is_err());
    }
}
